"""Reverse-mode automatic differentiation over float64 numpy arrays.

A ``Tensor`` wraps an ndarray and optionally records the operation that
produced it. Calling ``backward()`` on a scalar result walks the recorded
graph in reverse topological order and accumulates gradients into every
tensor with ``requires_grad=True``. Everything is kept in float64 so
finite-difference checks can be tight.

Only the operations the detector needs are implemented. Broadcasting
follows numpy rules; gradients of broadcast operands are summed back to
the operand's shape.
"""

from __future__ import annotations

import numpy as np

from .errors import NumericError

_GRAD_ENABLED = True


class no_grad:
    """Context manager that disables graph recording."""

    def __enter__(self):
        global _GRAD_ENABLED
        self._prev = _GRAD_ENABLED
        _GRAD_ENABLED = False
        return self

    def __exit__(self, *exc):
        global _GRAD_ENABLED
        _GRAD_ENABLED = self._prev
        return False


def _sum_to_shape(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Reduce a broadcast gradient back to the operand's shape."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    """Array node in the autodiff graph."""

    __slots__ = ("data", "grad", "requires_grad", "_backward", "_parents")

    # force numpy to defer to the reflected operators below instead of
    # broadcasting Tensor objects elementwise
    __array_ufunc__ = None

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._backward = None
        self._parents = ()

    # -- construction helpers -------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}{flag})"

    # -- graph mechanics -------------------------------------------------

    def backward(self, grad=None):
        """Accumulate gradients of ``self`` into every requiring ancestor."""
        if grad is None:
            if self.data.size != 1:
                raise ValueError("backward() on non-scalar needs an explicit gradient")
            grad = np.ones_like(self.data)
        else:
            grad = np.asarray(grad, dtype=np.float64)
            if grad.shape != self.data.shape:
                raise ValueError("gradient shape mismatch")

        order = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if id(parent) not in seen:
                    stack.append((parent, False))

        self.grad = grad if self.grad is None else self.grad + grad
        for node in reversed(order):
            if node._backward is None or node.grad is None:
                continue
            fn = node._backward
            node._backward = None
            node._parents = ()
            fn(node.grad)
            if node is not self:
                node.grad = None  # only leaves keep gradients

    # -- operator sugar ---------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(as_tensor(other), self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(as_tensor(other), self)

    def __neg__(self):
        return mul(self, -1.0)

    def __pow__(self, p):
        return power(self, p)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return getitem(self, key)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes if axes else None)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data, parents, backward_fn) -> Tensor:
    """Build an op result, attaching the graph only when it can matter."""
    out = Tensor(data)
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward_fn
    return out


def _accumulate(t: Tensor, g: np.ndarray):
    if not t.requires_grad:
        return
    t.grad = g if t.grad is None else t.grad + g


# -- elementwise arithmetic -----------------------------------------------


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out_data = a.data + b.data

    def backward(g):
        _accumulate(a, _sum_to_shape(g, a.data.shape))
        _accumulate(b, _sum_to_shape(g, b.data.shape))

    return _make(out_data, (a, b), backward)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out_data = a.data - b.data

    def backward(g):
        _accumulate(a, _sum_to_shape(g, a.data.shape))
        _accumulate(b, _sum_to_shape(-g, b.data.shape))

    return _make(out_data, (a, b), backward)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out_data = a.data * b.data

    def backward(g):
        _accumulate(a, _sum_to_shape(g * b.data, a.data.shape))
        _accumulate(b, _sum_to_shape(g * a.data, b.data.shape))

    return _make(out_data, (a, b), backward)


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out_data = a.data / b.data

    def backward(g):
        _accumulate(a, _sum_to_shape(g / b.data, a.data.shape))
        _accumulate(b, _sum_to_shape(-g * a.data / (b.data * b.data), b.data.shape))

    return _make(out_data, (a, b), backward)


def power(a, p: float) -> Tensor:
    a = as_tensor(a)
    p = float(p)
    out_data = a.data ** p

    def backward(g):
        _accumulate(a, g * p * a.data ** (p - 1.0))

    return _make(out_data, (a,), backward)


def exp(a) -> Tensor:
    a = as_tensor(a)
    out_data = np.exp(a.data)

    def backward(g):
        _accumulate(a, g * out_data)

    return _make(out_data, (a,), backward)


def log(a) -> Tensor:
    a = as_tensor(a)
    out_data = np.log(a.data)

    def backward(g):
        _accumulate(a, g / a.data)

    return _make(out_data, (a,), backward)


def sqrt(a) -> Tensor:
    a = as_tensor(a)
    out_data = np.sqrt(a.data)

    def backward(g):
        _accumulate(a, g * 0.5 / out_data)

    return _make(out_data, (a,), backward)


def tanh(a) -> Tensor:
    a = as_tensor(a)
    out_data = np.tanh(a.data)

    def backward(g):
        _accumulate(a, g * (1.0 - out_data * out_data))

    return _make(out_data, (a,), backward)


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    x = a.data
    out_data = np.empty_like(x)
    pos = x >= 0
    out_data[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out_data[~pos] = ex / (1.0 + ex)

    def backward(g):
        _accumulate(a, g * out_data * (1.0 - out_data))

    return _make(out_data, (a,), backward)


def relu(a) -> Tensor:
    a = as_tensor(a)
    mask = a.data > 0
    out_data = a.data * mask

    def backward(g):
        _accumulate(a, g * mask)

    return _make(out_data, (a,), backward)


def clip(a, lo: float, hi: float) -> Tensor:
    """Clamp values; gradient passes only where no clamping happened."""
    a = as_tensor(a)
    out_data = np.clip(a.data, lo, hi)
    mask = (a.data >= lo) & (a.data <= hi)

    def backward(g):
        _accumulate(a, g * mask)

    return _make(out_data, (a,), backward)


# -- reductions ------------------------------------------------------------


def tsum(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    out_data = a.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is None:
            _accumulate(a, np.broadcast_to(g, a.data.shape).copy())
            return
        gg = g
        if not keepdims:
            gg = np.expand_dims(g, axis)
        _accumulate(a, np.broadcast_to(gg, a.data.shape).copy())

    return _make(out_data, (a,), backward)


def tmean(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    if axis is None:
        n = a.data.size
    else:
        axes = axis if isinstance(axis, tuple) else (axis,)
        n = 1
        for ax in axes:
            n *= a.data.shape[ax]
    return tsum(a, axis=axis, keepdims=keepdims) * (1.0 / n)


# -- shape manipulation -----------------------------------------------------


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    out_data = a.data.reshape(shape)

    def backward(g):
        _accumulate(a, g.reshape(a.data.shape))

    return _make(out_data, (a,), backward)


def transpose(a, axes=None) -> Tensor:
    a = as_tensor(a)
    out_data = a.data.transpose(axes)

    def backward(g):
        if axes is None:
            _accumulate(a, g.transpose())
        else:
            inv = np.argsort(axes)
            _accumulate(a, g.transpose(inv))

    return _make(out_data, (a,), backward)


def swapaxes(a, ax1: int, ax2: int) -> Tensor:
    a = as_tensor(a)
    perm = list(range(a.data.ndim))
    perm[ax1], perm[ax2] = perm[ax2], perm[ax1]
    return transpose(a, tuple(perm))


def getitem(a, key) -> Tensor:
    a = as_tensor(a)
    out_data = a.data[key]
    fancy = isinstance(key, (np.ndarray, list)) or (
        isinstance(key, tuple) and any(isinstance(k, (np.ndarray, list)) for k in key)
    )

    def backward(g):
        gx = np.zeros_like(a.data)
        if fancy:
            np.add.at(gx, key, g)
        else:
            gx[key] += g
        _accumulate(a, gx)

    return _make(out_data, (a,), backward)


def take_rows(a, index: np.ndarray) -> Tensor:
    """Gather rows of a 2-D table; duplicate indices accumulate on backward."""
    a = as_tensor(a)
    index = np.asarray(index, dtype=np.int64)
    out_data = a.data[index]

    def backward(g):
        gx = np.zeros_like(a.data)
        np.add.at(gx, index, g)
        _accumulate(a, gx)

    return _make(out_data, (a,), backward)


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    out_data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def backward(g):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            idx = [slice(None)] * g.ndim
            idx[axis] = slice(lo, hi)
            _accumulate(t, g[tuple(idx)])

    return _make(out_data, tuple(tensors), backward)


def pad_axis(a, axis: int, before: int, after: int) -> Tensor:
    """Zero-pad one axis."""
    a = as_tensor(a)
    widths = [(0, 0)] * a.data.ndim
    widths[axis] = (before, after)
    out_data = np.pad(a.data, widths)

    def backward(g):
        idx = [slice(None)] * g.ndim
        idx[axis] = slice(before, before + a.data.shape[axis])
        _accumulate(a, g[tuple(idx)])

    return _make(out_data, (a,), backward)


# -- linear algebra ----------------------------------------------------------


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out_data = np.matmul(a.data, b.data)

    def backward(g):
        ad, bd = a.data, b.data
        if ad.ndim == 1:
            ad = ad[None, :]
        if bd.ndim == 1:
            bd = bd[:, None]
        gg = g
        if a.data.ndim == 1:
            gg = np.expand_dims(gg, -2)
        if b.data.ndim == 1:
            gg = np.expand_dims(gg, -1)
        ga = np.matmul(gg, np.swapaxes(bd, -1, -2))
        gb = np.matmul(np.swapaxes(ad, -1, -2), gg)
        if a.data.ndim == 1:
            ga = np.squeeze(ga, -2)
        if b.data.ndim == 1:
            gb = np.squeeze(gb, -1)
        _accumulate(a, _sum_to_shape(ga, a.data.shape))
        _accumulate(b, _sum_to_shape(gb, b.data.shape))

    return _make(out_data, (a, b), backward)


def softmax(a, axis: int = -1) -> Tensor:
    """Numerically shifted softmax along one axis."""
    a = as_tensor(a)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out_data = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        dot = (g * out_data).sum(axis=axis, keepdims=True)
        _accumulate(a, out_data * (g - dot))

    return _make(out_data, (a,), backward)


# -- structured ops ----------------------------------------------------------


def conv2d_same(x, w, b=None) -> Tensor:
    """2-D convolution, stride 1, zero padding that preserves H and W.

    ``x`` is (B, Cin, H, W), ``w`` is (Cout, Cin, kh, kw) with odd kernel
    sides, ``b`` optional (Cout,). Implemented as one GEMM per kernel
    offset so no patch matrix is materialized.
    """
    x, w = as_tensor(x), as_tensor(w)
    if b is not None:
        b = as_tensor(b)
    B, Ci, H, W = x.data.shape
    Co, Ci_w, kh, kw = w.data.shape
    if Ci != Ci_w:
        raise ValueError("channel mismatch between input and kernel")
    if kh % 2 == 0 or kw % 2 == 0:
        raise ValueError("kernel sides must be odd for same padding")
    ph, pw = kh // 2, kw // 2

    xp = np.pad(x.data, ((0, 0), (0, 0), (ph, ph), (pw, pw)))
    out_data = np.zeros((B, Co, H, W))
    for i in range(kh):
        for j in range(kw):
            patch = xp[:, :, i:i + H, j:j + W]
            # (Co,Ci) x (B,Ci,H,W) contracted over Ci -> (Co,B,H,W)
            out_data += np.tensordot(w.data[:, :, i, j], patch, axes=([1], [1])).transpose(1, 0, 2, 3)
    if b is not None:
        out_data += b.data[None, :, None, None]

    parents = (x, w) if b is None else (x, w, b)

    def backward(g):
        xp_b = np.pad(x.data, ((0, 0), (0, 0), (ph, ph), (pw, pw)))
        gxp = np.zeros_like(xp_b)
        gw = np.zeros_like(w.data)
        for i in range(kh):
            for j in range(kw):
                patch = xp_b[:, :, i:i + H, j:j + W]
                gw[:, :, i, j] = np.tensordot(g, patch, axes=([0, 2, 3], [0, 2, 3]))
                gxp[:, :, i:i + H, j:j + W] += np.tensordot(
                    w.data[:, :, i, j], g, axes=([0], [1])
                ).transpose(1, 0, 2, 3)
        _accumulate(x, gxp[:, :, ph:ph + H, pw:pw + W])
        _accumulate(w, gw)
        if b is not None:
            _accumulate(b, g.sum(axis=(0, 2, 3)))

    return _make(out_data, parents, backward)


def maxpool_width(x, pool: int) -> Tensor:
    """Max pool over the last axis with window == stride == ``pool``.

    Trailing columns that do not fill a window are dropped (floor
    division), matching the 128 -> 25 -> 12 -> 6 frequency chain.
    """
    x = as_tensor(x)
    if pool < 1:
        raise ValueError("pool width must be >= 1")
    *lead, W = x.data.shape
    Wo = W // pool
    if Wo < 1:
        raise ValueError("pool width exceeds axis length")
    view = x.data[..., : Wo * pool].reshape(*lead, Wo, pool)
    out_data = view.max(axis=-1)
    arg = view.argmax(axis=-1)

    def backward(g):
        gx = np.zeros_like(x.data)
        gv = gx[..., : Wo * pool].reshape(*lead, Wo, pool)
        np.put_along_axis(gv, arg[..., None], g[..., None], axis=-1)
        gx[..., : Wo * pool] = gv.reshape(*lead, Wo * pool)
        _accumulate(x, gx)

    return _make(out_data, (x,), backward)


def batch_norm_train(x, gamma, beta, reduce_axes, eps: float = 1e-5):
    """Batch normalization using batch statistics.

    ``gamma`` and ``beta`` are 1-D over the single non-reduced axis.
    Returns ``(out, batch_mean, batch_var)`` where the statistics are
    plain arrays (biased variance) for running-average updates.
    """
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    reduce_axes = tuple(reduce_axes)
    kept = [i for i in range(x.data.ndim) if i not in reduce_axes]
    if len(kept) != 1:
        raise ValueError("exactly one axis must be kept")
    bshape = [1] * x.data.ndim
    bshape[kept[0]] = x.data.shape[kept[0]]
    bshape = tuple(bshape)

    mu = x.data.mean(axis=reduce_axes, keepdims=True)
    var = x.data.var(axis=reduce_axes, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv
    out_data = gamma.data.reshape(bshape) * xhat + beta.data.reshape(bshape)

    n = 1
    for ax in reduce_axes:
        n *= x.data.shape[ax]

    def backward(g):
        ghat = g * gamma.data.reshape(bshape)
        mean_ghat = ghat.mean(axis=reduce_axes, keepdims=True)
        mean_gx = (ghat * xhat).mean(axis=reduce_axes, keepdims=True)
        _accumulate(x, inv * (ghat - mean_ghat - xhat * mean_gx))
        _accumulate(gamma, (g * xhat).sum(axis=reduce_axes))
        _accumulate(beta, g.sum(axis=reduce_axes))

    out = _make(out_data, (x, gamma, beta), backward)
    return out, mu.reshape(-1), var.reshape(-1)


def check_finite(t: Tensor, context: str = "") -> Tensor:
    """Raise NumericError if any value is NaN or infinite."""
    if not np.all(np.isfinite(t.data)):
        where = f" in {context}" if context else ""
        raise NumericError(f"non-finite values{where}")
    return t
