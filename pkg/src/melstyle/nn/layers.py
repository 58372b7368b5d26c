"""Differentiable layers built on the autograd tape.

Every layer is a :class:`Module` owning named :class:`Param` leaves.
Initialization is fully seeded: constructors take a ``numpy.random.Generator``
and consume it in a fixed order, so identical seeds give identical models.
Freezing toggles a parameter's ``trainable`` flag without touching values.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import autograd as ag
from .autograd import Tensor

ACTIVATIONS = {
    None: lambda t: t,
    "none": lambda t: t,
    "tanh": ag.tanh,
    "relu": ag.relu,
}


class Param:
    """A named learnable array; freezing flips ``trainable`` only.

    Buffers (running statistics) are never trainable: the optimizer skips
    them and ``Module.set_trainable`` leaves them alone.
    """

    def __init__(self, data: np.ndarray, trainable: bool = True, buffer: bool = False):
        self.is_buffer = bool(buffer)
        requires = bool(trainable) and not self.is_buffer
        self.tensor = Tensor(np.asarray(data, dtype=np.float64), requires_grad=requires)

    @property
    def data(self) -> np.ndarray:
        return self.tensor.data

    @data.setter
    def data(self, value: np.ndarray) -> None:
        self.tensor.data = np.asarray(value, dtype=np.float64)

    @property
    def trainable(self) -> bool:
        return self.tensor.requires_grad

    @trainable.setter
    def trainable(self, flag: bool) -> None:
        if self.is_buffer and flag:
            raise ValueError("buffers cannot be made trainable")
        self.tensor.requires_grad = bool(flag)

    @property
    def grad(self) -> np.ndarray | None:
        return self.tensor.grad

    def zero_grad(self) -> None:
        self.tensor.grad = None


class Module:
    """Base class with automatic registration of params and submodules."""

    def __init__(self):
        object.__setattr__(self, "_params", {})
        object.__setattr__(self, "_children", {})
        object.__setattr__(self, "training", False)

    def __setattr__(self, name, value):
        if isinstance(value, Param):
            self._params[name] = value
        elif isinstance(value, Module):
            self._children[name] = value
        object.__setattr__(self, name, value)

    def named_params(self, prefix: str = ""):
        for name, param in self._params.items():
            yield (f"{prefix}{name}", param)
        for name, child in self._children.items():
            yield from child.named_params(prefix=f"{prefix}{name}/")

    def params(self):
        return [p for _, p in self.named_params()]

    def set_training(self, flag: bool) -> None:
        object.__setattr__(self, "training", bool(flag))
        for child in self._children.values():
            child.set_training(flag)

    def set_trainable(self, flag: bool) -> None:
        for _, param in self.named_params():
            if not param.is_buffer:
                param.trainable = flag

    def zero_grad(self) -> None:
        for _, param in self.named_params():
            param.zero_grad()


class ModuleList(Module):
    def __init__(self, modules=()):
        super().__init__()
        self._items = []
        for module in modules:
            self.append(module)

    def append(self, module: Module) -> None:
        self._children[str(len(self._items))] = module
        self._items.append(module)

    def __iter__(self):
        return iter(self._items)

    def __len__(self):
        return len(self._items)

    def __getitem__(self, index):
        return self._items[index]


@dataclass
class LayerSpec:
    """Declarative description of a layer; validated before construction."""

    kind: str
    dims: dict = field(default_factory=dict)
    activation: str | None = None

    KINDS = (
        "linear",
        "conv2d",
        "gru",
        "bigru",
        "embedding",
        "scaled_dot_attention",
        "multihead_attention",
    )

    def validate(self) -> "LayerSpec":
        if self.kind not in self.KINDS:
            raise ValueError(f"unknown layer kind {self.kind!r}")
        for key, value in self.dims.items():
            if int(value) <= 0:
                raise ValueError(f"layer dim {key}={value} must be positive")
        if self.kind == "multihead_attention":
            width, heads = int(self.dims["width"]), int(self.dims["heads"])
            if width % heads != 0:
                raise ValueError(f"attention heads {heads} must divide width {width}")
        if self.activation not in (None, "none", "tanh", "relu"):
            raise ValueError(f"unknown activation {self.activation!r}")
        return self


# -- initializers -------------------------------------------------------------


def uniform_fan_in(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int) -> np.ndarray:
    bound = 1.0 / math.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


def orthogonal(rng: np.random.Generator, rows: int, cols: int) -> np.ndarray:
    a = rng.standard_normal((max(rows, cols), min(rows, cols)))
    q, r = np.linalg.qr(a)
    q = q * np.sign(np.diag(r))
    if rows < cols:
        q = q.T
    return q[:rows, :cols]


# -- core layers ---------------------------------------------------------------


class Linear(Module):
    """Affine map on the trailing axis with an optional activation."""

    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator,
                 activation: str | None = None):
        super().__init__()
        LayerSpec("linear", {"d_in": d_in, "d_out": d_out}, activation).validate()
        self.d_in, self.d_out = d_in, d_out
        self.activation = activation
        self.weight = Param(uniform_fan_in(rng, (d_in, d_out), d_in))
        self.bias = Param(np.zeros(d_out))

    def __call__(self, x: Tensor) -> Tensor:
        squeeze = x.ndim == 1
        if squeeze:
            x = ag.reshape(x, (1, self.d_in))
        if x.shape[-1] != self.d_in:
            raise ValueError(f"linear expects trailing dim {self.d_in}, got {x.shape[-1]}")
        out = ag.add(ag.matmul(x, self.weight.tensor), self.bias.tensor)
        out = ACTIVATIONS[self.activation](out)
        return ag.reshape(out, (self.d_out,)) if squeeze else out


class Embedding(Module):
    def __init__(self, vocab_size: int, d_model: int, rng: np.random.Generator):
        super().__init__()
        LayerSpec("embedding", {"vocab": vocab_size, "d": d_model}).validate()
        self.vocab_size = vocab_size
        self.table = Param(rng.standard_normal((vocab_size, d_model)) / math.sqrt(d_model))

    def __call__(self, ids: np.ndarray) -> Tensor:
        ids = np.asarray(ids, dtype=np.int64)
        if ids.size and (ids.min() < 0 or ids.max() >= self.vocab_size):
            raise ValueError(f"embedding id out of range [0, {self.vocab_size})")
        return ag.take(self.table.tensor, ids)


def scaled_dot_attention(query: Tensor, keys: Tensor, values: Tensor) -> tuple[Tensor, Tensor]:
    """softmax(q.K^T / sqrt(d)) . V for a single query vector.

    Returns the attended context ``[d_v]`` and the weights ``[n]``.
    """
    n, d = keys.shape
    if n == 0:
        raise ValueError("attention requires at least one key")
    q2 = ag.reshape(query, (1, d))
    logits = ag.div(ag.matmul(q2, ag.transpose(keys)), math.sqrt(d))
    weights = ag.softmax(logits, axis=-1)
    context = ag.matmul(weights, values)
    return ag.reshape(context, (values.shape[1],)), ag.reshape(weights, (n,))


class GRU(Module):
    """Single-layer gated recurrent unit over a ``[t, d_in]`` sequence.

    Gate order in the fused weights is (reset, update, candidate); the
    candidate's recurrent term is gated by reset before the tanh, and the
    new state is ``(1 - z) * n + z * h``.
    """

    def __init__(self, d_in: int, d_h: int, rng: np.random.Generator):
        super().__init__()
        LayerSpec("gru", {"d_in": d_in, "d_h": d_h}).validate()
        self.d_in, self.d_h = d_in, d_h
        self.w_input = Param(uniform_fan_in(rng, (d_in, 3 * d_h), d_in))
        self.w_hidden = Param(np.concatenate(
            [orthogonal(rng, d_h, d_h) for _ in range(3)], axis=1))
        self.b_input = Param(np.zeros(3 * d_h))
        self.b_hidden = Param(np.zeros(3 * d_h))

    def step(self, x_row: Tensor, h: Tensor) -> Tensor:
        d = self.d_h
        gi = ag.add(ag.matmul(x_row, self.w_input.tensor), self.b_input.tensor)
        gh = ag.add(ag.matmul(h, self.w_hidden.tensor), self.b_hidden.tensor)
        r = ag.sigmoid(ag.add(gi[:, :d], gh[:, :d]))
        z = ag.sigmoid(ag.add(gi[:, d:2 * d], gh[:, d:2 * d]))
        n = ag.tanh(ag.add(gi[:, 2 * d:], ag.mul(r, gh[:, 2 * d:])))
        return ag.add(ag.mul(ag.sub(1.0, z), n), ag.mul(z, h))

    def __call__(self, xs: Tensor, h0: Tensor | None = None, reverse: bool = False) -> Tensor:
        t = xs.shape[0]
        if t == 0:
            raise ValueError("GRU requires a non-empty sequence")
        h = h0 if h0 is not None else Tensor(np.zeros((1, self.d_h)))
        if h.ndim == 1:
            h = ag.reshape(h, (1, self.d_h))
        order = range(t - 1, -1, -1) if reverse else range(t)
        states: list[Tensor] = [None] * t
        for i in order:
            h = self.step(xs[i:i + 1], h)
            states[i] = h
        return ag.concat(states, axis=0)


class BiGRU(Module):
    """Forward and backward GRU passes concatenated to ``[t, 2*d_h]``."""

    def __init__(self, d_in: int, d_h: int, rng: np.random.Generator):
        super().__init__()
        LayerSpec("bigru", {"d_in": d_in, "d_h": d_h}).validate()
        self.d_h = d_h
        self.forward_gru = GRU(d_in, d_h, rng)
        self.backward_gru = GRU(d_in, d_h, rng)

    def __call__(self, xs: Tensor) -> Tensor:
        fwd = self.forward_gru(xs)
        bwd = self.backward_gru(xs, reverse=True)
        return ag.concat([fwd, bwd], axis=1)


def pad2d(x: Tensor, pads: tuple[int, int, int, int]) -> Tensor:
    """Zero-pad ``[c, h, w]`` with (top, bottom, left, right)."""
    top, bottom, left, right = pads
    c, h, w = x.shape
    parts_h = []
    if top:
        parts_h.append(Tensor(np.zeros((c, top, w))))
    parts_h.append(x)
    if bottom:
        parts_h.append(Tensor(np.zeros((c, bottom, w))))
    x = ag.concat(parts_h, axis=1) if len(parts_h) > 1 else x
    h2 = x.shape[1]
    parts_w = []
    if left:
        parts_w.append(Tensor(np.zeros((c, h2, left))))
    parts_w.append(x)
    if right:
        parts_w.append(Tensor(np.zeros((c, h2, right))))
    return ag.concat(parts_w, axis=2) if len(parts_w) > 1 else x


class Conv2d(Module):
    """2-D convolution with ceil-mode 'same' padding.

    Accepts ``[c, h, w]`` or batched ``[b, c, h, w]`` input; output spatial
    size is ``ceil(in / stride)`` per axis, so a single input frame still
    produces one output frame.
    """

    def __init__(self, c_in: int, c_out: int, rng: np.random.Generator,
                 kernel: tuple[int, int] = (3, 3), stride: tuple[int, int] = (2, 2)):
        super().__init__()
        LayerSpec("conv2d", {"c_in": c_in, "c_out": c_out,
                             "kh": kernel[0], "kw": kernel[1]}).validate()
        self.c_in, self.c_out = c_in, c_out
        self.kernel, self.stride = kernel, stride
        fan_in = c_in * kernel[0] * kernel[1]
        self.weight = Param(uniform_fan_in(rng, (c_out, c_in, *kernel), fan_in))
        self.bias = Param(np.zeros(c_out))

    def output_size(self, h: int, w: int) -> tuple[int, int]:
        sh, sw = self.stride
        return (h + sh - 1) // sh, (w + sw - 1) // sw

    def __call__(self, x: Tensor) -> Tensor:
        squeeze = x.ndim == 3
        if squeeze:
            x = ag.reshape(x, (1, *x.shape))
        _, c, h, w = x.shape
        if c != self.c_in:
            raise ValueError(f"conv2d expects {self.c_in} channels, got {c}")
        kh, kw = self.kernel
        sh, sw = self.stride
        out_h, out_w = self.output_size(h, w)
        pad_h = max(0, (out_h - 1) * sh + kh - h)
        pad_w = max(0, (out_w - 1) * sw + kw - w)
        out = ag.conv2d(x, self.weight.tensor, self.bias.tensor, self.stride,
                        (pad_h // 2, pad_h - pad_h // 2,
                         pad_w // 2, pad_w - pad_w // 2))
        return ag.reshape(out, out.shape[1:]) if squeeze else out


class Conv1d(Module):
    """Stride-1 'same' convolution along the rows of a ``[n, d_in]`` sequence."""

    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator, kernel: int = 3):
        super().__init__()
        self.d_in, self.d_out, self.kernel = d_in, d_out, kernel
        self.weight = Param(uniform_fan_in(rng, (kernel, d_in, d_out), kernel * d_in))
        self.bias = Param(np.zeros(d_out))

    def __call__(self, x: Tensor) -> Tensor:
        n = x.shape[0]
        left = (self.kernel - 1) // 2
        right = self.kernel - 1 - left
        parts = []
        if left:
            parts.append(Tensor(np.zeros((left, self.d_in))))
        parts.append(x)
        if right:
            parts.append(Tensor(np.zeros((right, self.d_in))))
        xp = ag.concat(parts, axis=0) if len(parts) > 1 else x
        acc: Tensor | None = None
        for a in range(self.kernel):
            term = ag.matmul(xp[a:a + n], self.weight.tensor[a])
            acc = term if acc is None else ag.add(acc, term)
        return ag.add(acc, self.bias.tensor)


class ChannelNorm(Module):
    """Per-channel normalization with running statistics.

    The running mean/variance are non-trainable state updated only when the
    module is in training mode and its affine parameters are trainable, so
    frozen levels stay bit-identical through other levels' training phases.
    Statistics enter the graph as constants; gradients flow through the
    affine transform and the input only.
    """

    def __init__(self, channels: int, momentum: float = 0.1, eps: float = 1e-5):
        super().__init__()
        self.momentum, self.eps = momentum, eps
        self.gamma = Param(np.ones(channels))
        self.beta = Param(np.zeros(channels))
        self.running_mean = Param(np.zeros(channels), buffer=True)
        self.running_var = Param(np.ones(channels), buffer=True)

    def __call__(self, x: Tensor) -> Tensor:
        axes = (1, 2) if x.ndim == 3 else (0, 2, 3)
        shape = (-1, 1, 1) if x.ndim == 3 else (1, -1, 1, 1)
        if self.training and self.gamma.trainable:
            m = self.momentum
            self.running_mean.data = ((1 - m) * self.running_mean.data
                                      + m * x.data.mean(axis=axes))
            self.running_var.data = ((1 - m) * self.running_var.data
                                     + m * x.data.var(axis=axes))
        inv = 1.0 / np.sqrt(self.running_var.data + self.eps)
        scale = ag.reshape(ag.mul(self.gamma.tensor, inv), shape)
        shift = ag.reshape(ag.sub(self.beta.tensor,
                                  ag.mul(self.gamma.tensor,
                                         self.running_mean.data * inv)), shape)
        return ag.add(ag.mul(x, scale), shift)


class ConvStack(Module):
    """Strided conv/norm/relu pyramid flattened per time step for a GRU.

    Treats a ``[frames, bins]`` feature matrix as a 1-channel image; returns
    ``[frames', channels * bins']`` where each stride-2 layer halves both
    axes (ceil).  ``batched`` runs equal-length segments in one pass.
    """

    def __init__(self, mel_bins: int, channels: tuple[int, ...], rng: np.random.Generator,
                 kernel: tuple[int, int] = (3, 3), stride: tuple[int, int] = (2, 2)):
        super().__init__()
        self.mel_bins = mel_bins
        self.channels = tuple(channels)
        self.convs = ModuleList()
        self.norms = ModuleList()
        c_prev = 1
        for c_out in channels:
            self.convs.append(Conv2d(c_prev, c_out, rng, kernel=kernel, stride=stride))
            self.norms.append(ChannelNorm(c_out))
            c_prev = c_out
        bins = mel_bins
        for conv in self.convs:
            bins = conv.output_size(1, bins)[1]
        self.out_width = self.channels[-1] * bins

    def output_frames(self, frames: int) -> int:
        for conv in self.convs:
            frames = conv.output_size(frames, 1)[0]
        return frames

    def batched(self, mels) -> Tensor:
        """``[b, frames, bins]`` -> ``[b, frames', channels * bins']``."""
        if not isinstance(mels, Tensor):
            mels = Tensor(mels)
        b, frames, bins = mels.shape
        if bins != self.mel_bins:
            raise ValueError(f"expected {self.mel_bins} mel bins, got {bins}")
        x = ag.reshape(mels, (b, 1, frames, bins))
        for conv, norm in zip(self.convs, self.norms):
            x = ag.relu(norm(conv(x)))
        _, c, h, w = x.shape
        return ag.reshape(ag.transpose(x, (0, 2, 1, 3)), (b, h, c * w))

    def __call__(self, mel: Tensor) -> Tensor:
        if mel.ndim != 2 or mel.shape[1] != self.mel_bins:
            raise ValueError(f"expected [frames, {self.mel_bins}] input, got {mel.shape}")
        out = self.batched(ag.reshape(mel, (1, *mel.shape)))
        return ag.reshape(out, (out.shape[1], out.shape[2]))


class MultiHeadAttention(Module):
    """Projected multi-head scaled-dot attention.

    ``out_proj=False`` returns the concatenated per-head contexts directly,
    which is the style-token convention; transformer blocks use the output
    projection.
    """

    def __init__(self, d_query: int, d_kv: int, d_model: int, heads: int,
                 rng: np.random.Generator, out_proj: bool = True):
        super().__init__()
        LayerSpec("multihead_attention", {"width": d_model, "heads": heads}).validate()
        self.d_model, self.heads = d_model, heads
        self.d_head = d_model // heads
        self.w_query = Param(uniform_fan_in(rng, (d_query, d_model), d_query))
        self.w_key = Param(uniform_fan_in(rng, (d_kv, d_model), d_kv))
        self.w_value = Param(uniform_fan_in(rng, (d_kv, d_model), d_kv))
        self.out = Linear(d_model, d_model, rng) if out_proj else None

    def __call__(self, query: Tensor, keys: Tensor, values: Tensor) -> tuple[Tensor, Tensor]:
        q = ag.matmul(query, self.w_query.tensor)
        k = ag.matmul(keys, self.w_key.tensor)
        v = ag.matmul(values, self.w_value.tensor)
        contexts, weights = [], []
        scale = math.sqrt(self.d_head)
        for head in range(self.heads):
            sl = slice(head * self.d_head, (head + 1) * self.d_head)
            logits = ag.div(ag.matmul(q[:, sl], ag.transpose(k[:, sl])), scale)
            w = ag.softmax(logits, axis=-1)
            contexts.append(ag.matmul(w, v[:, sl]))
            weights.append(w)
        out = ag.concat(contexts, axis=1)
        if self.out is not None:
            out = self.out(out)
        return out, ag.stack(weights, axis=0)


class LayerNorm(Module):
    def __init__(self, d: int, eps: float = 1e-5):
        super().__init__()
        self.eps = eps
        self.gamma = Param(np.ones(d))
        self.beta = Param(np.zeros(d))

    def __call__(self, x: Tensor) -> Tensor:
        mu = ag.reduce_mean(x, axis=-1, keepdims=True)
        centered = ag.sub(x, mu)
        var = ag.reduce_mean(ag.mul(centered, centered), axis=-1, keepdims=True)
        inv = ag.power(ag.add(var, self.eps), -0.5)
        return ag.add(ag.mul(ag.mul(centered, inv), self.gamma.tensor), self.beta.tensor)
