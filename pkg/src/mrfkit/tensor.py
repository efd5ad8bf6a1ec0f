"""Dense tensors with reverse-mode automatic differentiation.

The engine is tape-based: every operation records its parents and a backward
closure on the output node, and ``backward()`` replays the tape in reverse
topological order. Graphs are rebuilt on every forward pass; tensors are never
mutated by operations (optimizers update leaf ``.data`` between passes, after
the graph has been discarded).
"""

from __future__ import annotations

import struct
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy.special import erf as _erf, expit as _expit

DEFAULT_DTYPE = np.float64

_grad_enabled = True


class no_grad:
    """Context manager disabling tape construction (forward-only evaluation)."""

    def __enter__(self):
        global _grad_enabled
        self._prev = _grad_enabled
        _grad_enabled = False

    def __exit__(self, *exc):
        global _grad_enabled
        _grad_enabled = self._prev
        return False


def _as_array(data, dtype=None) -> np.ndarray:
    arr = np.asarray(data)
    if dtype is not None:
        return arr.astype(dtype, copy=False)
    if arr.dtype not in (np.float32, np.float64):
        return arr.astype(DEFAULT_DTYPE)
    return arr


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` (inverse of numpy broadcasting)."""
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
    """N-dimensional real array with optional gradient tracking."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward_fn")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        self.data = _as_array(data, dtype)
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple[Tensor, ...] = ()
        self._backward_fn: Callable[[np.ndarray], tuple] | None = None

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype}, requires_grad={self.requires_grad})"

    # -- autodiff ----------------------------------------------------------

    def backward(self, grad: np.ndarray | None = None) -> None:
        """Accumulate gradients of ``self`` into every reachable leaf.

        ``grad`` seeds the output gradient and defaults to ones (a scalar loss
        seeds with 1.0). Leaf gradients accumulate across calls until cleared.
        """
        if grad is None:
            grad = np.ones_like(self.data)
        else:
            grad = np.asarray(grad, dtype=self.data.dtype)
        topo: list[Tensor] = []
        visited: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in visited:
                    stack.append((p, False))
        self.grad = grad if self.grad is None else self.grad + grad
        for node in reversed(topo):
            if node._backward_fn is None or node.grad is None:
                continue
            parent_grads = node._backward_fn(node.grad)
            for p, g in zip(node._parents, parent_grads):
                if g is None or not p.requires_grad:
                    continue
                p.grad = g if p.grad is None else p.grad + g
            if node._parents:
                node.grad = None  # free non-leaf gradients as soon as consumed

    # -- arithmetic --------------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise TypeError("tensor/tensor division is not supported; multiply by a reciprocal")
        return mul(self, 1.0 / other)

    def __matmul__(self, other):
        return matmul(self, other)

    # -- shape ops ---------------------------------------------------------

    def reshape(self, *shape):
        if len(shape) == 1 and not isinstance(shape[0], int):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and not isinstance(axes[0], int):
            axes = tuple(axes[0])
        return transpose(self, axes)

    def sum(self, axis=None, keepdims=False):
        return reduce_sum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return reduce_mean(self, axis, keepdims)


def as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(x, dtype=dtype)


def _make(data: np.ndarray, parents: tuple, backward_fn) -> Tensor:
    out = Tensor(data)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward_fn = backward_fn
    return out


# -- elementwise binary ------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    data = a.data + b.data

    def backward(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)

    return _make(data, (a, b), backward)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    data = a.data - b.data

    def backward(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(-g, b.data.shape)

    return _make(data, (a, b), backward)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    data = a.data * b.data

    def backward(g):
        return (
            _unbroadcast(g * b.data, a.data.shape),
            _unbroadcast(g * a.data, b.data.shape),
        )

    return _make(data, (a, b), backward)


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2:
        raise ValueError(f"matmul expects 2-D operands, got {a.shape} @ {b.shape}")
    data = a.data @ b.data

    def backward(g):
        return g @ b.data.T, a.data.T @ g

    return _make(data, (a, b), backward)


# -- elementwise unary -------------------------------------------------------


def exp(x) -> Tensor:
    x = as_tensor(x)
    data = np.exp(x.data)

    def backward(g):
        return (g * data,)

    return _make(data, (x,), backward)


def absolute(x) -> Tensor:
    """|x| with subgradient sign(x) (0 at the kink)."""
    x = as_tensor(x)
    data = np.abs(x.data)

    def backward(g):
        return (g * np.sign(x.data),)

    return _make(data, (x,), backward)


def relu(x) -> Tensor:
    x = as_tensor(x)
    data = np.maximum(x.data, 0)

    def backward(g):
        return (g * (x.data > 0),)

    return _make(data, (x,), backward)


def sigmoid(x) -> Tensor:
    x = as_tensor(x)
    data = _expit(x.data)

    def backward(g):
        return (g * data * (1.0 - data),)

    return _make(data, (x,), backward)


def softplus(x) -> Tensor:
    """log(1 + e^x), evaluated stably; derivative is the logistic sigmoid."""
    x = as_tensor(x)
    data = np.logaddexp(0.0, x.data)

    def backward(g):
        return (g * _expit(x.data),)

    return _make(data, (x,), backward)


_INV_SQRT2 = 1.0 / np.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)


def gelu(x) -> Tensor:
    """Exact-erf GELU: x * Phi(x) with Phi the standard normal CDF."""
    x = as_tensor(x)
    cdf = 0.5 * (1.0 + _erf(x.data * _INV_SQRT2))
    data = x.data * cdf

    def backward(g):
        pdf = _INV_SQRT_2PI * np.exp(-0.5 * x.data * x.data)
        return (g * (cdf + x.data * pdf),)

    return _make(data, (x,), backward)


# -- reductions --------------------------------------------------------------


def reduce_sum(x, axis=None, keepdims=False) -> Tensor:
    x = as_tensor(x)
    data = x.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is None:
            return (np.broadcast_to(g, x.data.shape).copy(),)
        ax = axis if isinstance(axis, tuple) else (axis,)
        if not keepdims:
            g = np.expand_dims(g, ax)
        return (np.broadcast_to(g, x.data.shape).copy(),)

    return _make(data, (x,), backward)


def reduce_mean(x, axis=None, keepdims=False) -> Tensor:
    x = as_tensor(x)
    if axis is None:
        n = x.size
    else:
        ax = axis if isinstance(axis, tuple) else (axis,)
        n = int(np.prod([x.shape[a] for a in ax]))
    return reduce_sum(x, axis, keepdims) * (1.0 / n)


# -- shape manipulation ------------------------------------------------------


def reshape(x, shape) -> Tensor:
    x = as_tensor(x)
    data = x.data.reshape(shape)

    def backward(g):
        return (g.reshape(x.data.shape),)

    return _make(data, (x,), backward)


def transpose(x, axes) -> Tensor:
    x = as_tensor(x)
    axes = tuple(axes)
    data = x.data.transpose(axes)
    inv = tuple(np.argsort(axes))

    def backward(g):
        return (g.transpose(inv),)

    return _make(data, (x,), backward)


def broadcast_to(x, shape) -> Tensor:
    x = as_tensor(x)
    data = np.broadcast_to(x.data, shape)

    def backward(g):
        return (_unbroadcast(g, x.data.shape),)

    return _make(data, (x,), backward)


def concat(tensors: Sequence, axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def backward(g):
        grads = []
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(lo, hi)
            grads.append(g[tuple(sl)])
        return tuple(grads)

    return _make(data, tuple(tensors), backward)


def narrow(x, axis: int, start: int, length: int) -> Tensor:
    """Contiguous slice of ``length`` entries along ``axis``."""
    x = as_tensor(x)
    sl = [slice(None)] * x.ndim
    sl[axis] = slice(start, start + length)
    sl = tuple(sl)
    data = x.data[sl]

    def backward(g):
        out = np.zeros_like(x.data)
        out[sl] = g
        return (out,)

    return _make(data, (x,), backward)


def gather_rows(x, idx: np.ndarray, axis: int = 1) -> Tensor:
    """Permute ``x`` along ``axis`` by the permutation ``idx``."""
    x = as_tensor(x)
    idx = np.asarray(idx)
    sl = [slice(None)] * x.ndim
    sl[axis] = idx
    data = x.data[tuple(sl)]

    def backward(g):
        out = np.empty_like(x.data)
        out[tuple(sl)] = g
        return (out,)

    return _make(data, (x,), backward)


# -- serialization -----------------------------------------------------------

_MAGIC = b"MRFT"
_DTYPE_CODES = {np.dtype(np.float32): 1, np.dtype(np.float64): 2}
_CODE_DTYPES = {v: k for k, v in _DTYPE_CODES.items()}


def _contiguous(arr) -> np.ndarray:
    arr = np.asarray(arr)
    if arr.ndim and not arr.flags.c_contiguous:
        arr = np.ascontiguousarray(arr)  # keeps 0-d arrays 0-d
    return arr


def save_array(path, arr: np.ndarray) -> None:
    """Write an array in the little-endian MRFT binary format."""
    arr = _contiguous(arr)
    if arr.dtype not in _DTYPE_CODES:
        raise ValueError(f"unsupported dtype for MRFT serialization: {arr.dtype}")
    with open(path, "wb") as f:
        f.write(_serialize(arr))


def load_array(path) -> np.ndarray:
    with open(path, "rb") as f:
        blob = f.read()
    arr, consumed = _deserialize(blob, 0)
    if consumed != len(blob):
        raise ValueError(f"trailing bytes in tensor file {path}")
    return arr


def _serialize(arr: np.ndarray) -> bytes:
    header = _MAGIC + struct.pack("<BB", _DTYPE_CODES[arr.dtype], arr.ndim)
    header += struct.pack(f"<{arr.ndim}Q", *arr.shape)
    payload = arr.astype(arr.dtype.newbyteorder("<"), copy=False).tobytes()
    return header + payload


def _deserialize(blob: bytes, offset: int) -> tuple[np.ndarray, int]:
    if blob[offset : offset + 4] != _MAGIC:
        raise ValueError("bad magic in tensor blob")
    code, rank = struct.unpack_from("<BB", blob, offset + 4)
    if code not in _CODE_DTYPES:
        raise ValueError(f"unknown dtype code {code}")
    shape = struct.unpack_from(f"<{rank}Q", blob, offset + 6)
    dtype = _CODE_DTYPES[code]
    start = offset + 6 + 8 * rank
    count = int(np.prod(shape)) if rank else 1
    nbytes = count * dtype.itemsize
    data = np.frombuffer(blob, dtype=dtype.newbyteorder("<"), count=count, offset=start)
    return data.astype(dtype).reshape(shape), start + nbytes
