"""Structured state-space machinery: ZOH discretization, selective scan,
kernel materialization, the four-direction 2-D scan, and residual blocks.

The recurrence h(k) = Abar(k) h(k-1) + Bbar(k) x(k), y(k) = C(k) h(k) runs as
one fused autodiff primitive with a hand-written adjoint: the only sequential
work is two in-place array operations per step, so cost is linear in L.
"""

from __future__ import annotations

import numpy as np

from . import nn
from .tensor import (
    Tensor,
    _make,
    _unbroadcast,
    as_tensor,
    broadcast_to,
    concat,
    exp,
    gather_rows,
    narrow,
    relu,
    reshape,
    sigmoid,
    softplus,
)


# -- zero-order hold ------------------------------------------------------------

def _phi1(z: np.ndarray) -> np.ndarray:
    """(e^z - 1)/z with the z -> 0 limit of 1.

    expm1 keeps the quotient accurate arbitrarily close to zero; only an
    exact zero needs patching. Preserves the input dtype.
    """
    z = np.asarray(z)
    zero = z == 0
    if zero.any():
        safe = np.where(zero, z.dtype.type(1), z)
        out = np.expm1(safe)
        out /= safe
        out[zero] = 1.0
        return out
    out = np.expm1(z)
    out /= z
    return out


def _dphi1(z: np.ndarray) -> np.ndarray:
    """d/dz of (e^z - 1)/z: (e^z (z - 1) + 1)/z^2, series branch near zero.

    The numerator cancels catastrophically for small |z|, so entries below a
    threshold use the expansion 1/2 + z/3 + z^2/8.
    """
    z = np.asarray(z)
    threshold = 1e-4 if z.dtype == np.float64 else 5e-2
    small = np.abs(z) < threshold
    safe = np.where(small, z.dtype.type(1), z)
    out = np.exp(safe)
    out *= safe - 1.0
    out += 1.0
    out /= safe * safe
    if small.any():
        zs = z[small]
        out[small] = 0.5 + zs / 3.0 + zs * zs / 8.0
    return out


def discretize_zoh(a, b, delta):
    """Zero-order-hold discretization of h' = a h + b x for one step ``delta``.

    Returns (a_bar, b_bar) with a_bar = exp(delta a) and
    b_bar = (delta a)^-1 (exp(delta a) - 1) delta b, taking the small-argument
    limit b_bar -> delta b analytically.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    delta = np.asarray(delta, dtype=np.float64)
    if np.any(delta <= 0):
        raise ValueError("step size delta must be positive")
    z = delta * a
    return np.exp(z), _phi1(z) * delta * b


# -- fused selective scan -------------------------------------------------------


def selective_scan(x, a, bseq, cseq, delta) -> Tensor:
    """Linear-time selective state-space scan.

    Shapes: x, delta (..., L, C); bseq, cseq (..., L, N); a (..., C, N),
    broadcastable over leading batch dimensions. a must be strictly negative
    for a stable (0, 1) transition factor.
    """
    x, a = as_tensor(x), as_tensor(a)
    bseq, cseq, delta = as_tensor(bseq), as_tensor(cseq), as_tensor(delta)

    z = delta.data[..., :, :, None] * a.data[..., None, :, :]  # (..., L, C, N)
    abar = np.exp(z)
    db = delta.data[..., :, :, None] * bseq.data[..., :, None, :]  # delta x B product
    bx = _phi1(z)
    bx *= db
    bx *= x.data[..., :, :, None]  # Bbar * x, built in place

    L = x.data.shape[-2]
    states = np.empty_like(bx)
    states[..., 0, :, :] = bx[..., 0, :, :]
    for k in range(1, L):
        np.multiply(abar[..., k, :, :], states[..., k - 1, :, :], out=states[..., k, :, :])
        states[..., k, :, :] += bx[..., k, :, :]
    y = np.matmul(states, cseq.data[..., :, :, None])[..., 0]
    del bx

    def backward(g):
        phi = _phi1(z)
        dcseq = np.matmul(g[..., :, None, :], states)[..., 0, :]
        dstate = g[..., :, :, None] * cseq.data[..., :, None, :]
        for k in range(L - 2, -1, -1):
            dstate[..., k, :, :] += abar[..., k + 1, :, :] * dstate[..., k + 1, :, :]
        bbar = phi * db
        dx = np.matmul(dstate[..., None, :], bbar[..., :, None])[..., 0, 0]
        dbbar = dstate * x.data[..., :, :, None]
        # dz collects the exp path (via h(k-1)) and the phi path inside Bbar
        dz = np.empty_like(dstate)
        dz[..., 1:, :, :] = dstate[..., 1:, :, :] * states[..., :-1, :, :]
        dz[..., 0, :, :] = 0.0
        dz *= abar
        dz += dbbar * db * _dphi1(z)
        ddelta = (dbbar * bseq.data[..., :, None, :] * phi + dz * a.data[..., None, :, :]).sum(
            axis=-1
        )
        dbseq = (dbbar * delta.data[..., :, :, None] * phi).sum(axis=-2)
        da = (dz * delta.data[..., :, :, None]).sum(axis=-3)
        return (
            _unbroadcast(dx, x.data.shape),
            _unbroadcast(da, a.data.shape),
            _unbroadcast(dbseq, bseq.data.shape),
            _unbroadcast(dcseq, cseq.data.shape),
            _unbroadcast(ddelta, delta.data.shape),
        )

    return _make(y, (x, a, bseq, cseq, delta), backward)


# -- parameterization -----------------------------------------------------------


def _inv_softplus(y: np.ndarray) -> np.ndarray:
    return np.log(np.expm1(y))


class SsmParams(nn.Module):
    """One scan direction's parameters.

    Selective mode derives B, C, and the step size from the input sequence;
    frozen mode holds input-independent constants (kernel materialization and
    equivalence tests). The diagonal state matrix is A = -exp(a_log) < 0, so
    the discrete transition exp(delta A) always lies in (0, 1).
    """

    def __init__(self, channels: int, state_size: int, rng: np.random.Generator):
        self.channels = channels
        self.state_size = state_size
        self.selective = True
        self.a_log = nn.Parameter(np.tile(np.log(np.arange(1, state_size + 1.0)), (channels, 1)))
        self.w_b = nn.Parameter(nn.scaled_normal(rng, (state_size, channels), 1.0 / np.sqrt(channels)))
        self.w_c = nn.Parameter(nn.scaled_normal(rng, (state_size, channels), 1.0 / np.sqrt(channels)))
        self.w_delta = nn.Parameter(nn.scaled_normal(rng, (channels, channels), 0.1 / np.sqrt(channels)))
        dt = np.exp(rng.uniform(np.log(0.01), np.log(0.1), size=channels))
        self.delta_bias = nn.Parameter(_inv_softplus(dt))

    @classmethod
    def frozen(cls, a_log: np.ndarray, b: np.ndarray, c: np.ndarray, delta: np.ndarray) -> "SsmParams":
        obj = cls.__new__(cls)
        a_log = np.atleast_2d(a_log)
        obj.channels, obj.state_size = a_log.shape
        obj.selective = False
        obj.a_log = nn.Parameter(a_log)
        obj.b_const = nn.Parameter(np.asarray(b, dtype=np.float64))
        obj.c_const = nn.Parameter(np.asarray(c, dtype=np.float64))
        if np.any(np.asarray(delta) <= 0):
            raise ValueError("frozen step sizes must be positive")
        obj.delta_const = nn.Parameter(np.asarray(delta, dtype=np.float64))
        return obj

    @classmethod
    def random_frozen(cls, channels: int, state_size: int, rng: np.random.Generator) -> "SsmParams":
        return cls.frozen(
            a_log=rng.normal(0.0, 0.7, size=(channels, state_size)),
            b=rng.normal(0.0, 1.0, size=state_size),
            c=rng.normal(0.0, 1.0, size=state_size),
            delta=np.exp(rng.uniform(np.log(0.05), np.log(1.0), size=channels)),
        )

    def sequences(self, x: Tensor) -> tuple[Tensor, Tensor, Tensor]:
        """Per-step (bseq, cseq, delta) for x of shape (B, L, C)."""
        batch, length, ch = x.shape
        if self.selective:
            flat = reshape(x, (batch * length, ch))
            bseq = reshape(nn.linear(flat, self.w_b), (batch, length, self.state_size))
            cseq = reshape(nn.linear(flat, self.w_c), (batch, length, self.state_size))
            pre = nn.linear(flat, self.w_delta, self.delta_bias)
            delta = reshape(softplus(pre), (batch, length, ch))
        else:
            bseq = broadcast_to(reshape(self.b_const, (1, 1, -1)), (batch, length, self.state_size))
            cseq = broadcast_to(reshape(self.c_const, (1, 1, -1)), (batch, length, self.state_size))
            delta = broadcast_to(reshape(self.delta_const, (1, 1, -1)), (batch, length, ch))
        return bseq, cseq, delta


def ssm_scan(params: SsmParams, x) -> Tensor:
    """Run the scan over x of shape (L, C) or (B, L, C)."""
    x = as_tensor(x)
    squeeze = x.ndim == 2
    if squeeze:
        x = reshape(x, (1,) + x.shape)
    a = -exp(params.a_log)
    bseq, cseq, delta = params.sequences(x)
    y = selective_scan(x, a, bseq, cseq, delta)
    return reshape(y, y.shape[1:]) if squeeze else y


def kernel_from_discrete(abar: np.ndarray, bbar: np.ndarray, c: np.ndarray, length: int) -> np.ndarray:
    """K(j, ch) = sum_n c_n abar^j bbar for j in [0, length)."""
    ch = abar.shape[0]
    kernel = np.empty((length, ch))
    cur = bbar.copy()
    for j in range(length):
        kernel[j] = cur @ c
        cur = cur * abar
    return kernel


def ssm_kernel(params: SsmParams, length: int) -> np.ndarray:
    """Materialize the convolution kernel of a frozen (non-selective) system."""
    if params.selective:
        raise ValueError("kernel materialization requires input-independent parameters")
    a = -np.exp(params.a_log.data)
    abar, bbar = discretize_zoh(a, params.b_const.data[None, :], params.delta_const.data[:, None])
    return kernel_from_discrete(abar, bbar, params.c_const.data, length)


# -- four-direction 2-D scan ------------------------------------------------------

_ORDER_CACHE: dict = {}


def direction_orders(h: int, w: int) -> list[tuple[np.ndarray, np.ndarray]]:
    """(order, inverse) index pairs for row-forward, row-backward,
    column-forward, and column-backward traversals of a row-major H*W grid."""
    key = (h, w)
    if key not in _ORDER_CACHE:
        base = np.arange(h * w)
        col = base.reshape(h, w).T.ravel()
        orders = [base, base[::-1].copy(), col, col[::-1].copy()]
        pairs = []
        for idx in orders:
            inv = np.empty_like(idx)
            inv[idx] = base
            pairs.append((idx, inv))
        _ORDER_CACHE[key] = pairs
    return _ORDER_CACHE[key]


class SpatialScan(nn.Module):
    """Four independent directional scans over the flattened image, summed.

    Input and output are token sequences of shape (B, H*W, C); the directions
    are realized purely by index reordering. The four scans execute as one
    fused call by stacking along the batch axis.
    """

    def __init__(self, channels: int, state_size: int, rng: np.random.Generator):
        self.channels = channels
        self.directions = [SsmParams(channels, state_size, rng) for _ in range(4)]

    def forward(self, x: Tensor, h: int, w: int) -> Tensor:
        batch, length, ch = x.shape
        if length != h * w:
            raise ValueError(f"sequence length {length} != {h}*{w}")
        orders = direction_orders(h, w)
        xs, aas, bs, cs, ds = [], [], [], [], []
        for params, (idx, _) in zip(self.directions, orders):
            xd = gather_rows(x, idx)
            bseq, cseq, delta = params.sequences(xd)
            a = -exp(params.a_log)
            xs.append(xd)
            aas.append(broadcast_to(reshape(a, (1, ch, params.state_size)), (batch, ch, params.state_size)))
            bs.append(bseq)
            cs.append(cseq)
            ds.append(delta)
        y_all = selective_scan(
            concat(xs, axis=0), concat(aas, axis=0), concat(bs, axis=0),
            concat(cs, axis=0), concat(ds, axis=0),
        )
        total = None
        for d, (_, inv) in enumerate(orders):
            yd = narrow(y_all, 0, d * batch, batch)
            yd = gather_rows(yd, inv)
            total = yd if total is None else total + yd
        return total


# -- residual blocks ----------------------------------------------------------------


class ChannelAttention(nn.Module):
    """Global average pool, two projections with reduction 4, sigmoid gate."""

    def __init__(self, channels: int, rng: np.random.Generator, reduction: int = 4):
        hidden = max(channels // reduction, 1)
        self.w1 = nn.Parameter(nn.he_normal(rng, (hidden, channels), channels))
        self.b1 = nn.Parameter(np.zeros(hidden))
        self.w2 = nn.Parameter(nn.he_normal(rng, (channels, hidden), hidden))
        self.b2 = nn.Parameter(np.zeros(channels))

    def forward(self, x: Tensor) -> Tensor:
        pooled = x.mean(axis=(2, 3))
        gate = sigmoid(nn.linear(relu(nn.linear(pooled, self.w1, self.b1)), self.w2, self.b2))
        return x * reshape(gate, gate.shape + (1, 1))


class ResidualScanBlock(nn.Module):
    """Norm -> widened four-direction scan -> local conv -> channel attention,
    added back through a learnable residual scale."""

    def __init__(self, channels: int, state_size: int, expand: float, rng: np.random.Generator):
        self.channels = channels
        inner = max(1, int(round(channels * expand)))
        self.inner = inner
        self.norm_gamma = nn.Parameter(np.ones(channels))
        self.norm_beta = nn.Parameter(np.zeros(channels))
        self.w_in = nn.Parameter(nn.he_normal(rng, (inner, channels), channels))
        self.b_in = nn.Parameter(np.zeros(inner))
        self.scan = SpatialScan(inner, state_size, rng)
        self.w_out = nn.Parameter(nn.he_normal(rng, (channels, inner), inner))
        self.b_out = nn.Parameter(np.zeros(channels))
        self.conv_w = nn.Parameter(nn.he_normal(rng, (channels, channels, 3, 3), channels * 9))
        self.conv_b = nn.Parameter(np.zeros(channels))
        self.attention = ChannelAttention(channels, rng)
        self.scale = nn.Parameter(np.asarray(1.0))

    def branch(self, x: Tensor) -> Tensor:
        batch, ch, h, w = x.shape
        tokens = reshape(x.transpose(0, 2, 3, 1), (batch, h * w, ch))
        tokens = nn.layer_norm(tokens, self.norm_gamma, self.norm_beta)
        widened = reshape(
            nn.linear(reshape(tokens, (batch * h * w, ch)), self.w_in, self.b_in),
            (batch, h * w, self.inner),
        )
        scanned = self.scan(widened, h, w)
        back = reshape(
            nn.linear(reshape(scanned, (batch * h * w, self.inner)), self.w_out, self.b_out),
            (batch, h, w, ch),
        ).transpose(0, 3, 1, 2)
        local = nn.conv2d(back, self.conv_w, self.conv_b)
        return self.attention(local)

    def forward(self, x: Tensor) -> Tensor:
        return x + self.scale * self.branch(x)


class ResidualScanGroup(nn.Module):
    """Sequential scan blocks, a trailing convolution, and a group residual."""

    def __init__(
        self, channels: int, n_blocks: int, state_size: int, expand: float, rng: np.random.Generator
    ):
        if n_blocks < 1:
            raise ValueError("a group needs at least one block")
        self.blocks = [ResidualScanBlock(channels, state_size, expand, rng) for _ in range(n_blocks)]
        self.conv_w = nn.Parameter(nn.he_normal(rng, (channels, channels, 3, 3), channels * 9))
        self.conv_b = nn.Parameter(np.zeros(channels))

    def forward(self, x: Tensor) -> Tensor:
        y = x
        for block in self.blocks:
            y = block(y)
        return x + nn.conv2d(y, self.conv_w, self.conv_b)
