"""Finite-difference verification of analytic gradients."""

from __future__ import annotations

from typing import Callable

import numpy as np

from .nn import Module
from .tensor import Tensor, no_grad


def grad_check(
    f: Callable[[Tensor], Tensor],
    x: Tensor,
    eps: float = 1e-5,
    sample: int | None = None,
    rng: np.random.Generator | None = None,
) -> float:
    """Max relative error between the analytic gradient of scalar-valued ``f``
    at ``x`` and central differences.

    Error per coordinate is |analytic - central| / max(1, |central|). With
    ``sample`` set, only that many (seeded) coordinates are probed, which
    bounds the cost on large inputs. Non-finite values propagate as +inf.
    """
    if x.data.dtype != np.float64:
        raise ValueError("grad_check requires 64-bit tensors")
    probe = Tensor(x.data.copy(), requires_grad=True)
    out = f(probe)
    if out.size != 1:
        raise ValueError("grad_check requires a scalar-valued function")
    out.backward()
    analytic = probe.grad.copy() if probe.grad is not None else np.zeros_like(probe.data)

    flat = x.data.ravel()
    coords = np.arange(flat.size)
    if sample is not None and sample < flat.size:
        rng = rng or np.random.default_rng(0)
        coords = rng.choice(flat.size, size=sample, replace=False)

    worst = 0.0
    base = flat.copy()
    for i in coords:
        vals = []
        for sign in (1.0, -1.0):
            pert = base.copy()
            pert[i] += sign * eps
            with no_grad():
                vals.append(f(Tensor(pert.reshape(x.shape))).item())
        central = (vals[0] - vals[1]) / (2.0 * eps)
        err = abs(analytic.ravel()[i] - central) / max(1.0, abs(central))
        if not np.isfinite(err):
            return float("inf")
        worst = max(worst, err)
    return worst


def grad_check_params(
    f: Callable[[], Tensor],
    module: Module,
    eps: float = 1e-5,
    sample_per_param: int | None = None,
    rng: np.random.Generator | None = None,
) -> float:
    """Max relative error over (sampled) coordinates of every parameter of
    ``module`` for the scalar-valued closure ``f`` that uses the module."""
    rng = rng or np.random.default_rng(0)
    module.zero_grad()
    out = f()
    out.backward()
    worst = 0.0
    for name, p in module.named_parameters():
        if p.data.dtype != np.float64:
            raise ValueError(f"grad_check_params requires 64-bit parameters ({name})")
        analytic = p.grad.ravel() if p.grad is not None else np.zeros(p.size)
        flat = p.data.ravel()
        coords = np.arange(flat.size)
        if sample_per_param is not None and sample_per_param < flat.size:
            coords = rng.choice(flat.size, size=sample_per_param, replace=False)
        for i in coords:
            orig = flat[i]
            with no_grad():
                flat[i] = orig + eps
                hi = f().item()
                flat[i] = orig - eps
                lo = f().item()
            flat[i] = orig
            central = (hi - lo) / (2.0 * eps)
            err = abs(analytic[i] - central) / max(1.0, abs(central))
            if not np.isfinite(err):
                return float("inf")
            worst = max(worst, err)
    module.zero_grad()
    return worst
