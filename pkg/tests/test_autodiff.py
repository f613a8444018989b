"""Reverse-mode engine: graph replay, finite-difference checks, optimizer."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from stereolite import functional as F
from stereolite.autodiff import (OptimState, adam_step, backward, gradcheck,
                                 lr_at_epoch)
from stereolite.tensor import (Tensor, concat, interlace, no_grad, pad_zero,
                               relu, stack)


def check_op(build, x0, tol=1e-5, max_coords=None):
    def f(t):
        out = build(t)
        return out.sum() if out.size > 1 else out
    report = gradcheck(f, x0.astype(np.float64), tol=tol,
                       max_coords=max_coords, rng=0)
    assert report.passed, str(report)


def test_add_mul_broadcast_grads(rng):
    b = Tensor(rng.standard_normal((1, 4, 1)), requires_grad=True)

    def build(t):
        return (t * 2.0 + b) * t - b
    check_op(build, rng.standard_normal((3, 4, 5)))


def test_relu_and_reductions(rng):
    check_op(lambda t: relu(t).mean(axis=1), rng.standard_normal((4, 6)) + 0.3)
    check_op(lambda t: t.sum(axis=0, keepdims=True) * t.mean(),
             rng.standard_normal((3, 5)))


def test_reshape_slice_concat_stack(rng):
    def build(t):
        a = t.reshape(2, 12)
        b = a[:, 3:9]
        c = concat([b, b * 0.5], axis=1)
        return stack([c, c + 1.0], axis=0)
    check_op(build, rng.standard_normal((2, 3, 4)))


def test_pad_zero_grad(rng):
    check_op(lambda t: pad_zero(t, [(0, 0), (1, 2)]) * 3.0,
             rng.standard_normal((3, 4)))


def test_interlace_roundtrip_and_grad(rng):
    a = np.arange(6.0).reshape(1, 3, 2)
    b = -np.arange(6.0).reshape(1, 3, 2)
    out = interlace(Tensor(a), Tensor(b), axis=1)
    assert out.shape == (1, 6, 2)
    np.testing.assert_array_equal(out.data[:, 0::2], a)
    np.testing.assert_array_equal(out.data[:, 1::2], b)

    other = Tensor(rng.standard_normal((1, 3, 2)), requires_grad=True)
    check_op(lambda t: interlace(t, other, axis=1) * 2.0,
             rng.standard_normal((1, 3, 2)))


def test_backward_accumulates_through_reuse():
    x = Tensor(np.array([3.0]), requires_grad=True)
    y = x * x + x * 2.0   # dy/dx = 2x + 2 = 8
    backward(y.sum())
    assert x.grad[0] == pytest.approx(8.0)


def test_backward_rejects_nonscalar():
    x = Tensor(np.ones((2, 2)), requires_grad=True)
    with pytest.raises(Exception):
        backward(x * 2.0)


def test_no_grad_suppresses_graph():
    x = Tensor(np.ones(3), requires_grad=True)
    with no_grad():
        y = x * 2.0
    assert y._backward is None and not y.requires_grad


def test_gradcheck_catches_wrong_gradient():
    def f(t):
        # square with a deliberately wrong backward (3x instead of 2x)
        def back(g):
            t.accumulate_grad(3.0 * g * t.data)
        return Tensor._make(t.data ** 2, (t,), back, "badsq").sum()
    report = gradcheck(f, np.array([1.0, 2.0]), tol=1e-5)
    assert not report.passed
    assert "FAIL" in str(report)


def test_lr_schedule_halves_at_milestones():
    sched = (10, 12, 14, 16)
    assert lr_at_epoch(1e-3, sched, 0) == pytest.approx(1e-3)
    assert lr_at_epoch(1e-3, sched, 9) == pytest.approx(1e-3)
    assert lr_at_epoch(1e-3, sched, 10) == pytest.approx(5e-4)
    assert lr_at_epoch(1e-3, sched, 12) == pytest.approx(2.5e-4)
    assert lr_at_epoch(1e-3, sched, 13) == pytest.approx(2.5e-4)
    assert lr_at_epoch(1e-3, sched, 16) == pytest.approx(6.25e-5)
    assert lr_at_epoch(1e-3, sched, 100) == pytest.approx(6.25e-5)


def test_adam_minimizes_quadratic():
    target = np.array([1.0, -2.0, 0.5])
    p = Tensor(np.zeros(3), requires_grad=True)
    state = OptimState(params=[("p", p)], lr=0.05)
    for _ in range(400):
        p.zero_grad()
        loss = ((p - Tensor(target)) * (p - Tensor(target))).sum()
        backward(loss)
        adam_step(state)
    np.testing.assert_allclose(p.data, target, atol=1e-3)


def test_adam_flags_nonfinite_gradient():
    p = Tensor(np.zeros(2), requires_grad=True)
    p.grad = np.array([1.0, np.inf])
    state = OptimState(params=[("bad_param", p)], lr=0.1)
    with pytest.raises(FloatingPointError, match="bad_param"):
        adam_step(state)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2 ** 31 - 1))
def test_softmax_simplex(seed):
    x = Tensor(np.random.default_rng(seed).standard_normal((3, 7)) * 5)
    y = F.softmax(x, axis=1).data
    assert (y >= 0).all()
    np.testing.assert_allclose(y.sum(axis=1), 1.0, atol=1e-6)
