"""Shared test utilities: finite-difference gradient oracle."""

from __future__ import annotations

import numpy as np
import pytest

from rulelens.diffcore import Tensor, backward


def numeric_grad(scalar_fn, tensor: Tensor, h: float = 1e-5) -> np.ndarray:
    """Central finite differences of scalar_fn() w.r.t. tensor.data."""
    grad = np.zeros_like(tensor.data)
    flat = tensor.data.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = scalar_fn()
        flat[i] = orig - h
        fm = scalar_fn()
        flat[i] = orig
        gflat[i] = (fp - fm) / (2.0 * h)
    return grad


def assert_grads_match(build_loss, tensors, h: float = 1e-5, rtol: float = 1e-4):
    """Backward pass vs central finite differences for every listed tensor.

    Relative error per element uses max(|analytic|, |numeric|, 1) as the
    denominator so near-zero gradients are judged on absolute scale.
    """
    for t in tensors:
        t.grad = None
    loss = build_loss()
    backward(loss)
    analytic = {id(t): (t.grad.copy() if t.grad is not None else np.zeros_like(t.data)) for t in tensors}

    def value():
        return float(build_loss().data)

    for t in tensors:
        num = numeric_grad(value, t, h=h)
        ana = analytic[id(t)]
        denom = np.maximum(np.maximum(np.abs(ana), np.abs(num)), 1.0)
        err = np.abs(ana - num) / denom
        assert err.max() <= rtol, f"gradient mismatch: max rel err {err.max():.3e} (shape {t.data.shape})"


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
