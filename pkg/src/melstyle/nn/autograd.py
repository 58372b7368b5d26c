"""Reverse-mode automatic differentiation over float64 numpy arrays.

Small closure-based tape: every operation returns a new :class:`Tensor`
holding the forward value, references to its parents and a backward
closure.  Graphs are built only along paths that can reach a tensor with
``requires_grad`` set, so constant-only computations carry no overhead.
All arithmetic is float64; there is no implicit down-casting anywhere.
"""

from __future__ import annotations

from typing import Iterable, Sequence

import numpy as np
from scipy.special import expit


def _as_f64(value) -> np.ndarray:
    return np.asarray(value, dtype=np.float64)


class Tensor:
    """A float64 array plus the bookkeeping needed for backpropagation."""

    __slots__ = ("data", "grad", "requires_grad", "_backward", "_parents")

    def __init__(self, data, requires_grad: bool = False):
        self.data = _as_f64(data)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._backward = None
        self._parents: tuple[Tensor, ...] = ()

    # -- basic introspection -------------------------------------------------

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def item(self) -> float:
        return float(self.data)

    def numpy(self) -> np.ndarray:
        return np.array(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self) -> str:  # pragma: no cover - debugging aid
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    # -- graph machinery -----------------------------------------------------

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        """Backpropagate from a scalar tensor through the recorded graph."""
        if self.data.size != 1:
            raise ValueError("backward() requires a scalar tensor")
        topo: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if id(parent) not in seen:
                    stack.append((parent, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward is not None:
                node._backward()
                node._backward = None
                node._parents = ()

    # -- operator sugar ------------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(_wrap(other), self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __pow__(self, exponent):
        return power(self, exponent)

    def __getitem__(self, index):
        return take(self, index)

    def reshape(self, *shape):
        return reshape(self, shape if len(shape) > 1 else shape[0])

    def sum(self, axis=None, keepdims=False):
        return reduce_sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return reduce_mean(self, axis=axis, keepdims=keepdims)

    @property
    def T(self):
        return transpose(self)


def _wrap(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def _accumulate(tensor: Tensor, grad: np.ndarray) -> None:
    if not tensor.requires_grad:
        return
    if tensor.grad is None:
        tensor.grad = np.array(grad, dtype=np.float64)
    else:
        tensor.grad += grad


def _node(data: np.ndarray, parents: Sequence[Tensor], backward) -> Tensor:
    """Create an op result; record the tape only if a parent needs gradients."""
    out = Tensor.__new__(Tensor)
    out.data = data if isinstance(data, np.ndarray) and data.dtype == np.float64 \
        else _as_f64(data)
    out.grad = None
    needed = False
    for p in parents:
        if p.requires_grad:
            needed = True
            break
    if needed:
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    else:
        out.requires_grad = False
        out._parents = ()
        out._backward = None
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Reduce a broadcast gradient back to the original operand shape."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, dim in enumerate(shape) if dim == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


# -- elementwise arithmetic --------------------------------------------------


def add(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    out_data = a.data + b.data

    def backward():
        g = out.grad
        _accumulate(a, _unbroadcast(g, a.data.shape))
        _accumulate(b, _unbroadcast(g, b.data.shape))

    out = _node(out_data, (a, b), backward)
    return out


def sub(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    out_data = a.data - b.data

    def backward():
        g = out.grad
        _accumulate(a, _unbroadcast(g, a.data.shape))
        _accumulate(b, _unbroadcast(-g, b.data.shape))

    out = _node(out_data, (a, b), backward)
    return out


def mul(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    out_data = a.data * b.data

    def backward():
        g = out.grad
        _accumulate(a, _unbroadcast(g * b.data, a.data.shape))
        _accumulate(b, _unbroadcast(g * a.data, b.data.shape))

    out = _node(out_data, (a, b), backward)
    return out


def div(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    out_data = a.data / b.data

    def backward():
        g = out.grad
        _accumulate(a, _unbroadcast(g / b.data, a.data.shape))
        _accumulate(b, _unbroadcast(-g * a.data / (b.data * b.data), b.data.shape))

    out = _node(out_data, (a, b), backward)
    return out


def neg(a) -> Tensor:
    a = _wrap(a)

    def backward():
        _accumulate(a, -out.grad)

    out = _node(-a.data, (a,), backward)
    return out


def power(a, exponent: float) -> Tensor:
    a = _wrap(a)
    exponent = float(exponent)
    out_data = a.data ** exponent

    def backward():
        _accumulate(a, out.grad * exponent * a.data ** (exponent - 1.0))

    out = _node(out_data, (a,), backward)
    return out


# -- nonlinearities ----------------------------------------------------------


def exp(a) -> Tensor:
    a = _wrap(a)
    out_data = np.exp(a.data)

    def backward():
        _accumulate(a, out.grad * out_data)

    out = _node(out_data, (a,), backward)
    return out


def log(a) -> Tensor:
    a = _wrap(a)

    def backward():
        _accumulate(a, out.grad / a.data)

    out = _node(np.log(a.data), (a,), backward)
    return out


def tanh(a) -> Tensor:
    a = _wrap(a)
    out_data = np.tanh(a.data)

    def backward():
        _accumulate(a, out.grad * (1.0 - out_data * out_data))

    out = _node(out_data, (a,), backward)
    return out


def sigmoid(a) -> Tensor:
    a = _wrap(a)
    out_data = expit(a.data)

    def backward():
        _accumulate(a, out.grad * out_data * (1.0 - out_data))

    out = _node(out_data, (a,), backward)
    return out


def relu(a) -> Tensor:
    a = _wrap(a)
    mask = a.data > 0.0

    def backward():
        _accumulate(a, out.grad * mask)

    out = _node(a.data * mask, (a,), backward)
    return out


def absolute(a) -> Tensor:
    a = _wrap(a)
    sign = np.sign(a.data)

    def backward():
        _accumulate(a, out.grad * sign)

    out = _node(np.abs(a.data), (a,), backward)
    return out


def sqrt(a) -> Tensor:
    return power(a, 0.5)


# -- shape manipulation ------------------------------------------------------


def reshape(a, shape) -> Tensor:
    a = _wrap(a)
    old_shape = a.data.shape

    def backward():
        _accumulate(a, out.grad.reshape(old_shape))

    out = _node(a.data.reshape(shape), (a,), backward)
    return out


def transpose(a, axes=None) -> Tensor:
    a = _wrap(a)
    inverse = None if axes is None else np.argsort(axes)

    def backward():
        g = out.grad
        _accumulate(a, g.transpose(inverse) if inverse is not None else g.transpose())

    out = _node(a.data.transpose(axes), (a,), backward)
    return out


def take(a, index) -> Tensor:
    """Basic and integer-array indexing with scatter-add backward."""
    a = _wrap(a)
    fancy = isinstance(index, np.ndarray) or (
        isinstance(index, tuple) and any(isinstance(i, np.ndarray) for i in index)
    )

    def backward():
        grad = np.zeros_like(a.data)
        if fancy:
            np.add.at(grad, index, out.grad)
        else:
            grad[index] += out.grad
        _accumulate(a, grad)

    out = _node(a.data[index], (a,), backward)
    return out


def concat(tensors: Iterable[Tensor], axis: int = 0) -> Tensor:
    parts = [_wrap(t) for t in tensors]
    sizes = [p.data.shape[axis] for p in parts]
    offsets = np.cumsum([0] + sizes)

    def backward():
        g = out.grad
        for part, start, stop in zip(parts, offsets[:-1], offsets[1:]):
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(start, stop)
            _accumulate(part, g[tuple(sl)])

    out = _node(np.concatenate([p.data for p in parts], axis=axis), parts, backward)
    return out


def stack(tensors: Iterable[Tensor], axis: int = 0) -> Tensor:
    parts = [_wrap(t) for t in tensors]
    expanded = [reshape(p, p.data.shape[:axis] + (1,) + p.data.shape[axis:]) for p in parts]
    return concat(expanded, axis=axis)


# -- reductions --------------------------------------------------------------


def _expand_reduced(grad: np.ndarray, shape, axis, keepdims) -> np.ndarray:
    if axis is not None and not keepdims:
        axes = axis if isinstance(axis, tuple) else (axis,)
        for ax in sorted(a % len(shape) for a in axes):
            grad = np.expand_dims(grad, ax)
    return np.broadcast_to(grad, shape).copy()


def reduce_sum(a, axis=None, keepdims: bool = False) -> Tensor:
    a = _wrap(a)
    shape = a.data.shape

    def backward():
        _accumulate(a, _expand_reduced(out.grad, shape, axis, keepdims))

    out = _node(a.data.sum(axis=axis, keepdims=keepdims), (a,), backward)
    return out


def reduce_mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = _wrap(a)
    shape = a.data.shape
    if axis is None:
        count = a.data.size
    else:
        axes = axis if isinstance(axis, tuple) else (axis,)
        count = int(np.prod([shape[ax] for ax in axes]))

    def backward():
        _accumulate(a, _expand_reduced(out.grad, shape, axis, keepdims) / count)

    out = _node(a.data.mean(axis=axis, keepdims=keepdims), (a,), backward)
    return out


# -- linear algebra ----------------------------------------------------------


def matmul(a, b) -> Tensor:
    """Matrix product for 2-D operands (the only case the models use)."""
    a, b = _wrap(a), _wrap(b)
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ValueError("matmul expects 2-D tensors; reshape first")

    def backward():
        g = out.grad
        _accumulate(a, g @ b.data.T)
        _accumulate(b, a.data.T @ g)

    out = _node(a.data @ b.data, (a, b), backward)
    return out


def conv2d(x: Tensor, weight: Tensor, bias: Tensor, stride: tuple[int, int],
           padding: tuple[int, int, int, int]) -> Tensor:
    """Fused strided 2-D convolution on ``[b, c, h, w]`` input.

    One tape node: the im2col buffer is shared between forward and backward,
    keeping graph overhead constant per layer regardless of spatial size.
    """
    sh, sw = stride
    pt, pb, pl, pr = padding
    b, c, h, w = x.data.shape
    c_out, c_in, kh, kw = weight.data.shape
    xp = np.pad(x.data, ((0, 0), (0, 0), (pt, pb), (pl, pr))) \
        if (pt or pb or pl or pr) else x.data
    height, width = xp.shape[2], xp.shape[3]
    out_h = (height - kh) // sh + 1
    out_w = (width - kw) // sw + 1
    windows = np.lib.stride_tricks.sliding_window_view(
        xp, (kh, kw), axis=(2, 3))[:, :, ::sh, ::sw]
    cols = np.ascontiguousarray(windows.transpose(1, 4, 5, 0, 2, 3)).reshape(
        c * kh * kw, b * out_h * out_w)
    w2 = weight.data.reshape(c_out, c * kh * kw)
    out_data = (w2 @ cols + bias.data[:, None]).reshape(
        c_out, b, out_h, out_w).transpose(1, 0, 2, 3)

    def backward():
        g = out.grad
        gflat = np.ascontiguousarray(g.transpose(1, 0, 2, 3)).reshape(
            c_out, b * out_h * out_w)
        _accumulate(weight, (gflat @ cols.T).reshape(weight.data.shape))
        _accumulate(bias, gflat.sum(axis=1))
        if x.requires_grad:
            gcols = (w2.T @ gflat).reshape(c, kh, kw, b, out_h, out_w)
            gxp = np.zeros_like(xp)
            for a in range(kh):
                for d in range(kw):
                    gxp[:, :, a:a + sh * (out_h - 1) + 1:sh,
                        d:d + sw * (out_w - 1) + 1:sw] += \
                        gcols[:, a, d].transpose(1, 0, 2, 3)
            _accumulate(x, gxp[:, :, pt:height - pb, pl:width - pr])

    out = _node(np.ascontiguousarray(out_data), (x, weight, bias), backward)
    return out


# -- composites --------------------------------------------------------------


def softmax(a, axis: int = -1) -> Tensor:
    """Numerically stable softmax; exactly invariant to constant logit shifts."""
    a = _wrap(a)
    shift = Tensor(a.data.max(axis=axis, keepdims=True))
    e = exp(sub(a, shift))
    return div(e, reduce_sum(e, axis=axis, keepdims=True))


def mse(pred: Tensor, target) -> Tensor:
    diff = sub(pred, _wrap(target))
    return reduce_mean(mul(diff, diff))


def mae(pred: Tensor, target) -> Tensor:
    return reduce_mean(absolute(sub(pred, _wrap(target))))
