"""Training objectives on frame posteriors.

Binary cross entropy scores posteriors against hard (binarized) labels,
mean squared error against the raw soft labels. The combined objective
adds one of each for the two branch outputs plus the system output.
Padding frames are excluded through the validity mask.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import DataError


def _masked_mean(cells: Tensor, valid) -> Tensor:
    if valid is None:
        return cells.mean()
    valid = np.asarray(valid, dtype=np.float64)
    B, T, K = cells.shape
    count = float(valid.sum() * K)
    if count == 0:
        raise DataError("loss over a batch with no valid frames")
    weights = Tensor(valid.reshape(B, T, 1))
    return (cells * weights).sum() * (1.0 / count)


def bce(pred: Tensor, target, valid=None, eps: float = 1e-7) -> Tensor:
    """Mean binary cross entropy; probabilities clamped to [eps, 1-eps]."""
    target = ad.as_tensor(target)
    p = ad.clip(pred, eps, 1.0 - eps)
    cells = -(target * ad.log(p) + (1.0 - target) * ad.log(1.0 - p))
    return _masked_mean(cells, valid)


def mse(pred: Tensor, target, valid=None) -> Tensor:
    """Mean squared error against soft targets."""
    target = ad.as_tensor(target)
    diff = pred - target
    return _masked_mean(diff * diff, valid)


def detection_loss(mode: str, e1: Tensor, e2: Tensor, out: Tensor,
                   soft, hard, valid=None) -> tuple:
    """Objective for one batch; returns (loss, per-term floats).

    ``out`` is the system output being trained (the fused posterior, or
    the masked posterior when a scene mask is active). Modes:

    - combined: BCE(e1, hard) + MSE(e2, soft) + BCE(out, hard) + MSE(out, soft)
    - loss_a:   BCE(out, hard) only
    - loss_b:   MSE(out, soft) only
    """
    if mode == "combined":
        t1 = bce(e1, hard, valid)
        t2 = mse(e2, soft, valid)
        t3 = bce(out, hard, valid)
        t4 = mse(out, soft, valid)
        total = t1 + t2 + t3 + t4
        terms = {"bce_branch1": t1.item(), "mse_branch2": t2.item(),
                 "bce_out": t3.item(), "mse_out": t4.item()}
    elif mode == "loss_a":
        total = bce(out, hard, valid)
        terms = {"bce_out": total.item()}
    elif mode == "loss_b":
        total = mse(out, soft, valid)
        terms = {"mse_out": total.item()}
    else:
        raise DataError(f"unknown loss mode '{mode}'")
    return total, terms
