"""Differentiable layers and the parameter/module containers built on Tensor."""

from __future__ import annotations

from typing import Iterator

import numpy as np

from .tensor import Tensor, _make, _unbroadcast, as_tensor


class Parameter(Tensor):
    """Leaf tensor registered for optimization; named when a model is walked."""

    __slots__ = ("name",)

    def __init__(self, data, name: str = "", dtype=None):
        super().__init__(data, requires_grad=True, dtype=dtype)
        self.name = name

    @property
    def tensor(self) -> Tensor:
        return self


class Module:
    """Container whose attributes (parameters, sub-modules, lists of either)
    are discovered by reflection, in attribute insertion order."""

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def _children(self) -> Iterator[tuple[str, object]]:
        for key, val in vars(self).items():
            if isinstance(val, (Parameter, Module)):
                yield key, val
            elif isinstance(val, (list, tuple)):
                for i, item in enumerate(val):
                    if isinstance(item, (Parameter, Module)):
                        yield f"{key}.{i}", item

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Parameter]]:
        for key, val in self._children():
            name = f"{prefix}{key}"
            if isinstance(val, Parameter):
                val.name = name
                yield name, val
            else:
                yield from val.named_parameters(f"{name}.")

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def param_count(self) -> int:
        return sum(p.size for p in self.parameters())

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray], strict: bool = True) -> None:
        own = dict(self.named_parameters())
        missing = set(own) - set(state)
        extra = set(state) - set(own)
        if strict and (missing or extra):
            raise ValueError(f"state mismatch: missing={sorted(missing)} extra={sorted(extra)}")
        if not strict:
            if missing:
                raise ValueError(f"state lacks required parameters: {sorted(missing)}")
            own = {k: v for k, v in own.items() if k in state}
        for name, p in own.items():
            arr = np.asarray(state[name], dtype=p.data.dtype)
            if arr.shape != p.data.shape:
                raise ValueError(f"shape mismatch for {name}: {arr.shape} vs {p.data.shape}")
            p.data = arr.copy()
            p.grad = None

    def astype(self, dtype) -> "Module":
        for p in self.parameters():
            p.data = p.data.astype(dtype)
            p.grad = None
        return self


# -- initializers -------------------------------------------------------------


def he_normal(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    return rng.normal(0.0, np.sqrt(2.0 / fan_in), size=shape)


def scaled_normal(rng: np.random.Generator, shape, std: float) -> np.ndarray:
    return rng.normal(0.0, std, size=shape)


# -- layers -------------------------------------------------------------------


def linear(x, w, b=None) -> Tensor:
    """y = x @ w.T + b for x (N, Cin), w (Cout, Cin), b (Cout,)."""
    x, w = as_tensor(x), as_tensor(w)
    if x.ndim != 2 or w.ndim != 2 or x.shape[1] != w.shape[1]:
        raise ValueError(f"linear shape mismatch: x {x.shape}, w {w.shape}")
    data = x.data @ w.data.T
    if b is not None:
        b = as_tensor(b)
        if b.shape != (w.shape[0],):
            raise ValueError(f"linear bias shape {b.shape} != ({w.shape[0]},)")
        data = data + b.data

        def backward(g):
            return g @ w.data, g.T @ x.data, g.sum(axis=0)

        return _make(data, (x, w, b), backward)

    def backward(g):
        return g @ w.data, g.T @ x.data

    return _make(data, (x, w), backward)


def _check_odd(k: int) -> None:
    if k % 2 == 0:
        raise ValueError(f"convolution kernels must be odd-sized, got {k}")


def _im2col(xp: np.ndarray, k: int, H: int, W: int) -> np.ndarray:
    # (B, C, Hp, Wp) zero-padded input -> (B, H, W, C, k, k) windows (view)
    return np.lib.stride_tricks.sliding_window_view(xp, (k, k), axis=(2, 3)).transpose(
        0, 2, 3, 1, 4, 5
    )


def conv2d(x, w, b=None) -> Tensor:
    """Dense 2-D convolution, stride 1, zero "same" padding, odd kernels.

    x: (B, C, H, W); w: (O, C, k, k); b: (O,) optional.
    """
    x, w = as_tensor(x), as_tensor(w)
    B, C, H, W = x.shape
    O, Cw, k, k2 = w.shape
    if Cw != C or k != k2:
        raise ValueError(f"conv2d shape mismatch: x {x.shape}, w {w.shape}")
    _check_odd(k)
    p = k // 2
    xp = np.pad(x.data, ((0, 0), (0, 0), (p, p), (p, p)))
    cols = _im2col(xp, k, H, W).reshape(B * H * W, C * k * k)
    wmat = w.data.reshape(O, C * k * k)
    out = cols @ wmat.T
    if b is not None:
        b = as_tensor(b)
        out = out + b.data
    data = out.reshape(B, H, W, O).transpose(0, 3, 1, 2)

    def backward(g):
        g2 = g.transpose(0, 2, 3, 1).reshape(B * H * W, O)
        dw = (g2.T @ cols).reshape(O, C, k, k)
        dcols = (g2 @ wmat).reshape(B, H, W, C, k, k)
        dxp = np.zeros_like(xp)
        for i in range(k):
            for j in range(k):
                dxp[:, :, i : i + H, j : j + W] += dcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
        dx = dxp[:, :, p : p + H, p : p + W] if p else dxp
        if b is not None:
            return dx, dw, g2.sum(axis=0)
        return dx, dw

    parents = (x, w) if b is None else (x, w, b)
    return _make(data, parents, backward)


def depthwise_conv2d(x, w, b=None) -> Tensor:
    """Per-channel 2-D convolution: output channel c sees input channel c only.

    x: (B, C, H, W); w: (C, k, k); b: (C,) optional.
    """
    x, w = as_tensor(x), as_tensor(w)
    B, C, H, W = x.shape
    Cw, k, k2 = w.shape
    if Cw != C or k != k2:
        raise ValueError(f"depthwise_conv2d shape mismatch: x {x.shape}, w {w.shape}")
    _check_odd(k)
    p = k // 2
    xp = np.pad(x.data, ((0, 0), (0, 0), (p, p), (p, p)))
    windows = np.lib.stride_tricks.sliding_window_view(xp, (k, k), axis=(2, 3))
    data = np.einsum("bchwij,cij->bchw", windows, w.data, optimize=True)
    if b is not None:
        b = as_tensor(b)
        data = data + b.data[None, :, None, None]

    def backward(g):
        dw = np.einsum("bchwij,bchw->cij", windows, g, optimize=True)
        dxp = np.zeros_like(xp)
        for i in range(k):
            for j in range(k):
                dxp[:, :, i : i + H, j : j + W] += g * w.data[None, :, i, j, None, None]
        dx = dxp[:, :, p : p + H, p : p + W] if p else dxp
        if b is not None:
            return dx, dw, g.sum(axis=(0, 2, 3))
        return dx, dw

    parents = (x, w) if b is None else (x, w, b)
    return _make(data, parents, backward)


NORM_EPS = 1e-5


def norm_groups(channels: int) -> int:
    """Group count rule used by the gated fusion paths."""
    return max(channels // 8, 1)


def group_norm(x, gamma, beta, groups: int, eps: float = NORM_EPS) -> Tensor:
    """Per-sample, per-group standardization followed by a channel affine.

    x: (B, C, H, W); gamma, beta: (C,). ``groups`` must divide C.
    """
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    B, C, H, W = x.shape
    if C % groups != 0:
        raise ValueError(f"groups={groups} does not divide C={C}")
    xg = x.data.reshape(B, groups, -1)
    mu = xg.mean(axis=2, keepdims=True)
    var = xg.var(axis=2, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = ((xg - mu) * inv).reshape(B, C, H, W)
    data = xhat * gamma.data[None, :, None, None] + beta.data[None, :, None, None]

    def backward(g):
        dgamma = (g * xhat).sum(axis=(0, 2, 3))
        dbeta = g.sum(axis=(0, 2, 3))
        dxhat = (g * gamma.data[None, :, None, None]).reshape(B, groups, -1)
        xhat_g = xhat.reshape(B, groups, -1)
        # dx = inv * (dxhat - mean(dxhat) - xhat * mean(dxhat * xhat))
        t1 = dxhat.mean(axis=2, keepdims=True)
        t2 = (dxhat * xhat_g).mean(axis=2, keepdims=True)
        dx = (inv * (dxhat - t1 - xhat_g * t2)).reshape(B, C, H, W)
        return dx, dgamma, dbeta

    return _make(data, (x, gamma, beta), backward)


def layer_norm(x, gamma, beta, eps: float = NORM_EPS) -> Tensor:
    """Standardize over the last axis of x (tokens, C); affine per channel."""
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    mu = x.data.mean(axis=-1, keepdims=True)
    var = x.data.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv
    data = xhat * gamma.data + beta.data

    def backward(g):
        dgamma = _unbroadcast(g * xhat, gamma.data.shape)
        dbeta = _unbroadcast(g, beta.data.shape)
        dxhat = g * gamma.data
        t1 = dxhat.mean(axis=-1, keepdims=True)
        t2 = (dxhat * xhat).mean(axis=-1, keepdims=True)
        dx = inv * (dxhat - t1 - xhat * t2)
        return dx, dgamma, dbeta

    return _make(data, (x, gamma, beta), backward)
