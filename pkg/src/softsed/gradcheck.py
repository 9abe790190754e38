"""Finite-difference gradient checking for the autodiff engine.

Central differences in float64 against the analytic backward pass. Used
by the test suite for every trainable operation; exposed in the library
because the acceptance gate runs the same sweep.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .autodiff import Tensor


def numeric_grad(fn: Callable[[], Tensor], wrt: Tensor, h: float = 1e-6) -> np.ndarray:
    """Central-difference gradient of a scalar-valued ``fn`` wrt one tensor.

    ``fn`` must re-run the forward pass from ``wrt.data``; entries are
    perturbed in place one at a time.
    """
    grad = np.zeros_like(wrt.data)
    flat = wrt.data.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = float(fn().data)
        flat[i] = orig - h
        fm = float(fn().data)
        flat[i] = orig
        gflat[i] = (fp - fm) / (2.0 * h)
    return grad


def rel_error(a: np.ndarray, b: np.ndarray, floor: float = 1e-8) -> float:
    """max |a-b| / max(floor, |a|+|b|), elementwise then reduced."""
    denom = np.maximum(floor, np.abs(a) + np.abs(b))
    return float(np.max(np.abs(a - b) / denom))


def check_gradients(
    fn: Callable[[], Tensor],
    params: Sequence[Tensor],
    h: float = 1e-6,
    tol: float = 1e-4,
) -> float:
    """Compare analytic and numeric gradients for every tensor in ``params``.

    ``fn`` rebuilds the scalar output from the current parameter data.
    Returns the worst relative error; raises AssertionError above ``tol``.
    """
    for p in params:
        p.grad = None
    out = fn()
    if out.data.size != 1:
        raise ValueError("check_gradients expects a scalar objective")
    out.backward()
    worst = 0.0
    for p in params:
        analytic = p.grad if p.grad is not None else np.zeros_like(p.data)
        numeric = numeric_grad(fn, p, h=h)
        err = rel_error(analytic, numeric)
        worst = max(worst, err)
        if err > tol:
            raise AssertionError(f"gradient mismatch: rel error {err:.3e} > {tol:.1e}")
    return worst
