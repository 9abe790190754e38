"""Neural network layers on top of the autodiff engine.

Everything is float64 and explicitly seeded: layers draw their initial
weights from the ``numpy.random.Generator`` passed to the constructor,
so a fixed construction order gives bit-identical models.
"""

from __future__ import annotations

import math

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor


class Parameter(Tensor):
    """Leaf tensor updated by the optimizer."""

    __slots__ = ()

    def __init__(self, data):
        super().__init__(data, requires_grad=True)


def kaiming_uniform(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    bound = math.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, shape)


class Module:
    """Base class with recursive parameter and buffer registration."""

    def __init__(self):
        object.__setattr__(self, "_params", {})
        object.__setattr__(self, "_buffers", {})
        object.__setattr__(self, "_children", {})
        object.__setattr__(self, "training", True)

    def __setattr__(self, name, value):
        if isinstance(value, Parameter):
            self._params[name] = value
        elif isinstance(value, Module):
            self._children[name] = value
        elif name in getattr(self, "_buffers", {}):
            self._buffers[name] = value
        object.__setattr__(self, name, value)

    def register_buffer(self, name, array: np.ndarray):
        self._buffers[name] = np.asarray(array, dtype=np.float64)
        object.__setattr__(self, name, self._buffers[name])

    def modules(self):
        yield self
        for child in self._children.values():
            yield from child.modules()

    def parameters(self):
        out = []
        for _, p in self.named_parameters():
            out.append(p)
        return out

    def named_parameters(self, prefix: str = ""):
        for name, p in self._params.items():
            yield prefix + name, p
        for cname, child in self._children.items():
            yield from child.named_parameters(prefix + cname + ".")

    def named_buffers(self, prefix: str = ""):
        for name in self._buffers:
            yield prefix + name, self._buffers[name]
        for cname, child in self._children.items():
            yield from child.named_buffers(prefix + cname + ".")

    def state_dict(self) -> dict:
        state = {name: p.data.copy() for name, p in self.named_parameters()}
        for name, b in self.named_buffers():
            state[name] = np.asarray(b).copy()
        return state

    def load_state_dict(self, state: dict):
        own_params = dict(self.named_parameters())
        own_buffers = dict(self.named_buffers())
        expected = set(own_params) | set(own_buffers)
        if expected != set(state):
            missing = sorted(expected - set(state))
            extra = sorted(set(state) - expected)
            raise ValueError(f"state mismatch: missing={missing} extra={extra}")
        for name, p in own_params.items():
            arr = np.asarray(state[name], dtype=np.float64)
            if arr.shape != p.data.shape:
                raise ValueError(f"shape mismatch for {name}")
            p.data = arr.copy()
        for name in own_buffers:
            self._assign_buffer(name, state[name])

    def _assign_buffer(self, dotted: str, value):
        obj = self
        parts = dotted.split(".")
        for part in parts[:-1]:
            obj = obj._children[part]
        arr = np.asarray(value, dtype=np.float64)
        if arr.shape != obj._buffers[parts[-1]].shape:
            raise ValueError(f"shape mismatch for buffer {dotted}")
        setattr(obj, parts[-1], arr.copy())

    def train(self, mode: bool = True):
        for m in self.modules():
            object.__setattr__(m, "training", mode)
        return self

    def eval(self):
        return self.train(False)

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None

    def set_rng(self, rng: np.random.Generator):
        """Hand one shared generator to every stochastic layer."""
        for m in self.modules():
            if isinstance(m, Dropout):
                m.rng = rng
        return self


class ModuleList(Module):
    def __init__(self, items=()):
        super().__init__()
        self._items = []
        for item in items:
            self.append(item)

    def append(self, module: Module):
        setattr(self, str(len(self._items)), module)
        self._items.append(module)

    def __iter__(self):
        return iter(self._items)

    def __len__(self):
        return len(self._items)

    def __getitem__(self, i):
        return self._items[i]


class Linear(Module):
    """Affine map on the last axis: x @ w + b."""

    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator, bias: bool = True):
        super().__init__()
        self.w = Parameter(kaiming_uniform(rng, (d_in, d_out), fan_in=d_in))
        self.b = Parameter(np.zeros(d_out)) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        out = x @ self.w
        if self.b is not None:
            out = out + self.b
        return out

    __call__ = forward


class Conv2dSame(Module):
    """3x3 (or any odd) convolution, stride 1, shape-preserving padding.

    ``bias=False`` when a batch norm follows: the norm's mean removal
    cancels any channel offset exactly.
    """

    def __init__(self, c_in: int, c_out: int, kernel: int, rng: np.random.Generator,
                 bias: bool = True):
        super().__init__()
        fan_in = c_in * kernel * kernel
        self.w = Parameter(kaiming_uniform(rng, (c_out, c_in, kernel, kernel), fan_in=fan_in))
        self.b = Parameter(np.zeros(c_out)) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        return ad.conv2d_same(x, self.w, self.b)

    __call__ = forward


class BatchNorm(Module):
    """Batch normalization over (B,C,H,W) maps or (B,T,C) sequences.

    Batch statistics during training with running averages updated as
    0.9 * running + 0.1 * batch; running statistics at inference.
    """

    def __init__(self, channels: int, momentum: float = 0.9, eps: float = 1e-5):
        super().__init__()
        self.gamma = Parameter(np.ones(channels))
        self.beta = Parameter(np.zeros(channels))
        self.momentum = momentum
        self.eps = eps
        self.register_buffer("running_mean", np.zeros(channels))
        self.register_buffer("running_var", np.ones(channels))

    @staticmethod
    def _layout(ndim: int):
        if ndim == 4:
            return (0, 2, 3), 1
        if ndim == 3:
            return (0, 1), 2
        raise ValueError("BatchNorm expects a 3D or 4D input")

    def forward(self, x: Tensor) -> Tensor:
        axes, kept = self._layout(x.ndim)
        if self.training:
            out, mu, var = ad.batch_norm_train(x, self.gamma, self.beta, axes, eps=self.eps)
            n = 1
            for axis in axes:
                n *= x.shape[axis]
            unbiased = var * (n / (n - 1)) if n > 1 else var
            m = self.momentum
            self.running_mean = m * self.running_mean + (1.0 - m) * mu
            self.running_var = m * self.running_var + (1.0 - m) * unbiased
            return out
        bshape = [1] * x.ndim
        bshape[kept] = x.shape[kept]
        inv = 1.0 / np.sqrt(self.running_var + self.eps)
        scale = ad.reshape(self.gamma, bshape) * Tensor(inv.reshape(bshape))
        shift = ad.reshape(self.beta, bshape) - scale * Tensor(self.running_mean.reshape(bshape))
        return x * scale + shift

    __call__ = forward


class LayerNorm(Module):
    """Normalization over the last axis with learned scale and shift."""

    def __init__(self, dim: int, eps: float = 1e-5):
        super().__init__()
        self.gamma = Parameter(np.ones(dim))
        self.beta = Parameter(np.zeros(dim))
        self.eps = eps

    def forward(self, x: Tensor) -> Tensor:
        mu = x.mean(axis=-1, keepdims=True)
        centered = x - mu
        var = (centered * centered).mean(axis=-1, keepdims=True)
        return centered / ad.sqrt(var + self.eps) * self.gamma + self.beta

    __call__ = forward


class Dropout(Module):
    """Inverted dropout; identity at inference."""

    def __init__(self, p: float):
        super().__init__()
        if not 0.0 <= p < 1.0:
            raise ValueError("dropout probability must be in [0, 1)")
        self.p = p
        self.rng = None

    def forward(self, x: Tensor) -> Tensor:
        if not self.training or self.p == 0.0:
            return x
        if self.rng is None:
            raise RuntimeError("Dropout needs a generator; call model.set_rng first")
        mask = (self.rng.random(x.shape) >= self.p) / (1.0 - self.p)
        return x * Tensor(mask)

    __call__ = forward


class Embedding(Module):
    """Index lookup table with accumulate-on-duplicate gradients."""

    def __init__(self, n_rows: int, dim: int, rng: np.random.Generator):
        super().__init__()
        self.table = Parameter(rng.standard_normal((n_rows, dim)) / math.sqrt(dim))

    def forward(self, index: np.ndarray) -> Tensor:
        return ad.take_rows(self.table, index)

    __call__ = forward


def swish(x: Tensor) -> Tensor:
    return x * ad.sigmoid(x)


def glu(x: Tensor) -> Tensor:
    """Gated linear unit splitting the last axis in half."""
    d = x.shape[-1]
    if d % 2 != 0:
        raise ValueError("GLU needs an even last axis")
    half = d // 2
    return x[..., :half] * ad.sigmoid(x[..., half:])


def sinusoidal_positions(n_frames: int, dim: int) -> np.ndarray:
    """Fixed absolute position encodings, (n_frames, dim)."""
    pos = np.arange(n_frames)[:, None]
    i = np.arange(dim // 2)[None, :]
    angles = pos / np.power(10000.0, 2.0 * i / dim)
    enc = np.zeros((n_frames, dim))
    enc[:, 0::2] = np.sin(angles)
    enc[:, 1::2] = np.cos(angles)
    return enc


class MultiHeadSelfAttention(Module):
    """Scaled dot-product self-attention over (B, T, d)."""

    def __init__(self, dim: int, heads: int, rng: np.random.Generator):
        super().__init__()
        if dim % heads != 0:
            raise ValueError("dim must be divisible by heads")
        self.heads = heads
        self.d_head = dim // heads
        self.wq = Linear(dim, dim, rng)
        # a key bias shifts every score in a row equally, which the
        # softmax ignores, so it would never receive gradient
        self.wk = Linear(dim, dim, rng, bias=False)
        self.wv = Linear(dim, dim, rng)
        self.wo = Linear(dim, dim, rng)
        self.keep_attn = False
        self.last_attn = None

    def forward(self, x: Tensor) -> Tensor:
        B, T, d = x.shape

        def split(t):
            return ad.transpose(ad.reshape(t, (B, T, self.heads, self.d_head)), (0, 2, 1, 3))

        q = split(self.wq(x))
        k = split(self.wk(x))
        v = split(self.wv(x))
        scores = (q @ ad.swapaxes(k, -1, -2)) * (1.0 / math.sqrt(self.d_head))
        attn = ad.softmax(scores, axis=-1)
        if self.keep_attn:
            self.last_attn = attn.data.copy()
        ctx = attn @ v
        merged = ad.reshape(ad.transpose(ctx, (0, 2, 1, 3)), (B, T, d))
        return self.wo(merged)

    __call__ = forward


class FeedForward(Module):
    """LayerNorm -> expand -> swish -> dropout -> project -> dropout."""

    def __init__(self, dim: int, expansion: int, dropout: float, rng: np.random.Generator):
        super().__init__()
        self.norm = LayerNorm(dim)
        self.lin1 = Linear(dim, dim * expansion, rng)
        self.lin2 = Linear(dim * expansion, dim, rng)
        self.drop1 = Dropout(dropout)
        self.drop2 = Dropout(dropout)

    def forward(self, x: Tensor) -> Tensor:
        h = self.drop1(swish(self.lin1(self.norm(x))))
        return self.drop2(self.lin2(h))

    __call__ = forward


class ConvModule(Module):
    """Conformer convolution module on (B, T, d).

    LayerNorm, pointwise expansion to 2d with a GLU gate, depthwise
    temporal convolution, batch norm, swish, pointwise projection.
    """

    def __init__(self, dim: int, kernel: int, dropout: float, rng: np.random.Generator):
        super().__init__()
        if kernel % 2 == 0:
            raise ValueError("depthwise kernel must be odd")
        self.norm = LayerNorm(dim)
        self.pointwise_in = Linear(dim, 2 * dim, rng)
        # no bias: the batch norm right after would cancel it
        self.depthwise = Parameter(kaiming_uniform(rng, (kernel, dim), fan_in=kernel))
        self.bn = BatchNorm(dim)
        self.pointwise_out = Linear(dim, dim, rng)
        self.drop = Dropout(dropout)
        self.kernel = kernel

    def forward(self, x: Tensor) -> Tensor:
        h = glu(self.pointwise_in(self.norm(x)))
        T = h.shape[1]
        pad = self.kernel // 2
        hp = ad.pad_axis(h, axis=1, before=pad, after=pad)
        acc = None
        for k in range(self.kernel):
            term = hp[:, k:k + T, :] * self.depthwise[k]
            acc = term if acc is None else acc + term
        return self.drop(self.pointwise_out(swish(self.bn(acc))))

    __call__ = forward


class ConformerBlock(Module):
    """Half-step FFN, self-attention, convolution, half-step FFN, norm."""

    def __init__(self, dim: int, heads: int, ffn_expansion: int, conv_kernel: int,
                 dropout: float, rng: np.random.Generator):
        super().__init__()
        self.ffn1 = FeedForward(dim, ffn_expansion, dropout, rng)
        self.attn_norm = LayerNorm(dim)
        self.attn = MultiHeadSelfAttention(dim, heads, rng)
        self.attn_drop = Dropout(dropout)
        self.conv = ConvModule(dim, conv_kernel, dropout, rng)
        self.ffn2 = FeedForward(dim, ffn_expansion, dropout, rng)
        self.final_norm = LayerNorm(dim)

    def forward(self, x: Tensor) -> Tensor:
        x = x + 0.5 * self.ffn1(x)
        x = x + self.attn_drop(self.attn(self.attn_norm(x)))
        x = x + self.conv(x)
        x = x + 0.5 * self.ffn2(x)
        return self.final_norm(x)

    __call__ = forward


class ConformerStack(Module):
    """Input projection, absolute positions, then N conformer blocks."""

    def __init__(self, d_in: int, dim: int, heads: int, n_blocks: int,
                 ffn_expansion: int, conv_kernel: int, dropout: float,
                 rng: np.random.Generator):
        super().__init__()
        self.proj = Linear(d_in, dim, rng)
        self.drop = Dropout(dropout)
        self.blocks = ModuleList(
            ConformerBlock(dim, heads, ffn_expansion, conv_kernel, dropout, rng)
            for _ in range(n_blocks)
        )
        self.dim = dim

    def forward(self, x: Tensor) -> Tensor:
        T = x.shape[1]
        h = self.proj(x) + Tensor(sinusoidal_positions(T, self.dim))
        h = self.drop(h)
        for block in self.blocks:
            h = block(h)
        return h

    __call__ = forward
