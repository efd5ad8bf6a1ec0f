"""The finite-difference checker itself, exercised on known-gradient cases."""

import numpy as np
import pytest

from mrfkit import nn
from mrfkit.gradcheck import grad_check, grad_check_params
from mrfkit.tensor import Tensor, gelu


def test_sum_of_squares_gradient():
    x = Tensor(np.array([3.0]), requires_grad=True)
    (x * x).sum().backward()
    assert abs(x.grad[0] - 6.0) < 1e-12
    assert grad_check(lambda t: (t * t).sum(), Tensor(np.array([3.0]))) < 1e-8


def test_constant_function_has_zero_gradient():
    x = Tensor(np.array([1.0, 2.0]), requires_grad=True)
    out = Tensor(np.array(5.0)) * 1.0
    out.backward()
    assert x.grad is None
    err = grad_check(lambda t: Tensor(np.array(5.0)) * 1.0, Tensor(np.array([1.0, 2.0])))
    assert err == 0.0


def test_gelu_linear_composition():
    rng = np.random.default_rng(7)
    w = Tensor(rng.standard_normal((4, 4)))
    b = Tensor(rng.standard_normal(4))
    x = Tensor(rng.standard_normal((4, 4)))
    assert grad_check(lambda t: gelu(nn.linear(t, w, b)).sum(), x, eps=1e-5) < 1e-6


def test_rejects_float32():
    with pytest.raises(ValueError):
        grad_check(lambda t: t.sum(), Tensor(np.zeros(2, dtype=np.float32)))


def test_sampled_coordinates_subset():
    x = Tensor(np.random.default_rng(3).standard_normal((10, 10)))
    err = grad_check(lambda t: (t * t).sum(), x, sample=5)
    assert err < 1e-8


def test_param_gradcheck_on_small_module():
    class Tiny(nn.Module):
        def __init__(self):
            rng = np.random.default_rng(11)
            self.w = nn.Parameter(rng.standard_normal((3, 3)))
            self.b = nn.Parameter(rng.standard_normal(3))

        def forward(self, x):
            return gelu(nn.linear(x, self.w, self.b))

    mod = Tiny()
    x = Tensor(np.random.default_rng(12).standard_normal((5, 3)))
    assert grad_check_params(lambda: mod(x).sum(), mod, eps=1e-5) < 1e-6
