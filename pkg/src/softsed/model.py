"""Dual-branch detector: interacting CNN front end, one conformer
encoder per branch, sigmoid event heads, and learned per-event fusion.

Input features are (B, T, n_mels) log-mel frames. Frequency is reduced
by pooling (128 -> 25 -> 12 -> 6 with the default widths) while the
frame axis is never pooled, so posteriors keep the input frame rate.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from . import nn
from .autodiff import Tensor


class ConvBlock(nn.Module):
    """Conv 3x3 -> batch norm -> ReLU -> dropout."""

    def __init__(self, c_in: int, c_out: int, dropout: float, rng: np.random.Generator):
        super().__init__()
        self.conv = nn.Conv2dSame(c_in, c_out, 3, rng, bias=False)
        self.bn = nn.BatchNorm(c_out)
        self.drop = nn.Dropout(dropout)

    def forward(self, x: Tensor) -> Tensor:
        return self.drop(ad.relu(self.bn(self.conv(x))))

    __call__ = forward


class InteractiveCnn(nn.Module):
    """Two convolutional branches that exchange feature maps.

    From the second stage on, each branch convolves the channel
    concatenation of its own pooled maps with the other branch's, so the
    stage-s filters of one branch see both views. Pooling acts on the
    frequency axis only.
    """

    def __init__(self, channels=(32, 64, 128), pools=(5, 2, 2),
                 dropout: float = 0.1, rng: np.random.Generator = None):
        super().__init__()
        if len(channels) != len(pools):
            raise ValueError("channels and pools must align")
        self.pools = tuple(pools)
        blocks_a, blocks_b = [], []
        c_prev = 1
        for i, c_out in enumerate(channels):
            c_in = c_prev if i == 0 else 2 * c_prev
            blocks_a.append(ConvBlock(c_in, c_out, dropout, rng))
            blocks_b.append(ConvBlock(c_in, c_out, dropout, rng))
            c_prev = c_out
        self.branch_a = nn.ModuleList(blocks_a)
        self.branch_b = nn.ModuleList(blocks_b)
        self.out_channels = channels[-1]

    def forward(self, x: Tensor, trace: list = None):
        """Run both branches; returns the two final (B, C, T, F') maps.

        ``trace`` collects (label, shape) pairs for every intermediate
        of branch a (branch b shapes are identical by construction).
        """
        if trace is not None:
            trace.append(("input", tuple(x.shape)))
        ha, hb = x, x
        for i, (block_a, block_b) in enumerate(zip(self.branch_a, self.branch_b)):
            if i > 0:
                ha, hb = ad.concat([ha, hb], axis=1), ad.concat([hb, ha], axis=1)
            ha = block_a(ha)
            hb = block_b(hb)
            if trace is not None:
                trace.append((f"conv{i + 1}", tuple(ha.shape)))
            ha = ad.maxpool_width(ha, self.pools[i])
            hb = ad.maxpool_width(hb, self.pools[i])
            if trace is not None:
                trace.append((f"pool{i + 1}", tuple(ha.shape)))
        return ha, hb

    __call__ = forward


class BranchHead(nn.Module):
    """Frame-wise event posteriors: linear map plus sigmoid."""

    def __init__(self, d_in: int, n_events: int, rng: np.random.Generator):
        super().__init__()
        self.lin = nn.Linear(d_in, n_events, rng)

    def forward(self, x: Tensor) -> Tensor:
        return ad.sigmoid(self.lin(x))

    __call__ = forward


class FusionWeights(nn.Module):
    """Per-event mixing weights kept in (0, 1) through a sigmoid.

    The raw parameter starts at zero, i.e. both branches contribute
    equally before training.
    """

    def __init__(self, n_events: int):
        super().__init__()
        self.raw = nn.Parameter(np.zeros(n_events))

    def effective(self) -> Tensor:
        return ad.sigmoid(self.raw)


def fuse(e1: Tensor, e2: Tensor, weights) -> Tensor:
    """Convex per-event combination e1 * w + e2 * (1 - w)."""
    w = ad.as_tensor(weights)
    return e1 * w + e2 * (1.0 - w)


def flatten_maps(h: Tensor) -> Tensor:
    """(B, C, T, F) -> (B, T, C*F) frame vectors."""
    B, C, T, F = h.shape
    return ad.reshape(ad.transpose(h, (0, 2, 1, 3)), (B, T, C * F))


class SedModel(nn.Module):
    """Full detector producing per-frame posteriors for both branches
    and their fusion.

    All sizes are configurable; the defaults follow the reference
    configuration (128 mel bins, 32/64/128 conv channels, 144-dim
    conformers with 4 heads and 2 blocks).
    """

    def __init__(self, n_events: int, n_mels: int = 128,
                 channels=(32, 64, 128), pools=(5, 2, 2),
                 conformer_dim: int = 144, conformer_heads: int = 4,
                 conformer_blocks: int = 2, ffn_expansion: int = 4,
                 conv_kernel: int = 7, dropout: float = 0.1,
                 rng: np.random.Generator = None):
        super().__init__()
        if rng is None:
            rng = np.random.default_rng(0)
        f_out = n_mels
        for p in pools:
            f_out //= p
        if f_out < 1:
            raise ValueError("pooling collapses the frequency axis")
        d_frame = channels[-1] * f_out

        self.cnn = InteractiveCnn(channels, pools, dropout, rng)
        self.encoder_a = nn.ConformerStack(d_frame, conformer_dim, conformer_heads,
                                           conformer_blocks, ffn_expansion,
                                           conv_kernel, dropout, rng)
        self.encoder_b = nn.ConformerStack(d_frame, conformer_dim, conformer_heads,
                                           conformer_blocks, ffn_expansion,
                                           conv_kernel, dropout, rng)
        self.head_a = BranchHead(conformer_dim, n_events, rng)
        self.head_b = BranchHead(conformer_dim, n_events, rng)
        self.fusion = FusionWeights(n_events)
        self.n_events = n_events
        self.n_mels = n_mels

    def forward(self, x, trace: list = None):
        """Posteriors for a (B, T, n_mels) feature batch.

        Returns (e1, e2, fused), each (B, T, n_events) in [0, 1].
        """
        x = ad.as_tensor(x)
        if x.ndim != 3 or x.shape[2] != self.n_mels:
            raise ValueError(f"expected (B, T, {self.n_mels}) features, got {x.shape}")
        B, T, F = x.shape
        x4 = ad.reshape(x, (B, 1, T, F))
        ha, hb = self.cnn(x4, trace)
        e1 = self.head_a(self.encoder_a(flatten_maps(ha)))
        e2 = self.head_b(self.encoder_b(flatten_maps(hb)))
        fused = fuse(e1, e2, self.fusion.effective())
        if trace is not None:
            trace.append(("posteriors", tuple(fused.shape)))
        return e1, e2, fused

    __call__ = forward

    def copy_branch_a_to_b(self):
        """Mirror every branch-a parameter into branch b (diagnostics)."""
        pairs = [(self.cnn.branch_a, self.cnn.branch_b),
                 (self.encoder_a, self.encoder_b),
                 (self.head_a, self.head_b)]
        for src, dst in pairs:
            for (_, ps), (_, pd) in zip(src.named_parameters(), dst.named_parameters()):
                pd.data = ps.data.copy()
            for (ns, bs), (nd, _) in zip(src.named_buffers(), dst.named_buffers()):
                dst._assign_buffer(nd, bs)
