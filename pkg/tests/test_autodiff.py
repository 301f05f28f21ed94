"""Gradient and op-semantics tests for the autodiff engine."""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from kegat import autodiff as ad
from kegat.autodiff import Tensor

from conftest import numeric_grad


def _check_grad(build, x0, rtol=1e-6, atol=1e-9):
    """Compare backward() gradient against central differences at x0."""
    t = Tensor(x0, requires_grad=True)
    build(t).backward()
    expected = numeric_grad(lambda x: float(build(Tensor(x)).data), x0)
    np.testing.assert_allclose(t.grad, expected, rtol=rtol, atol=atol)


def test_arithmetic_grads():
    x0 = np.array([0.3, -1.2, 2.0])
    _check_grad(lambda t: ((t * 2.0 + 1.0) / 3.0 - t ** 2.0).sum(), x0)


def test_matmul_grads_all_shapes():
    rng = np.random.default_rng(0)
    A = rng.normal(size=(3, 4))
    v = rng.normal(size=4)
    _check_grad(lambda t: (t @ Tensor(v)).sum(), A)             # 2D @ 1D
    _check_grad(lambda t: (Tensor(A) @ t).sum(), v)             # 2D @ 1D (rhs)
    _check_grad(lambda t: (t @ Tensor(A.T)).sum(), A)           # 2D @ 2D
    _check_grad(lambda t: (t @ Tensor(v)).sum(), v)             # 1D @ 1D


def test_nonlinearity_grads():
    x0 = np.array([-2.0, -0.5, 0.3, 1.7])
    _check_grad(lambda t: t.tanh().sum(), x0)
    _check_grad(lambda t: t.elu().sum(), x0)
    _check_grad(lambda t: t.leaky_relu(0.2).sum(), x0)
    _check_grad(lambda t: t.exp().sum(), x0)
    _check_grad(lambda t: (t ** 2.0 + 1.0).log().sum(), x0)
    _check_grad(lambda t: (t ** 2.0 + 1.0).sqrt().sum(), x0)


def test_gather_grads():
    x0 = np.arange(12.0).reshape(4, 3) / 7.0
    _check_grad(lambda t: t.rows([1, 1, 3]).sum(), x0)
    _check_grad(lambda t: t.cols(1, 3).sum(), x0)
    _check_grad(lambda t: t.pick_row(2).sum(), x0)
    _check_grad(lambda t: t.pick_row(0).pick(1), x0)
    _check_grad(lambda t: t.T.reshape(12).mean(), x0)


def test_concat_and_softmax_grads():
    x0 = np.array([0.1, 0.9, -0.4])
    _check_grad(lambda t: ad.concat([t, t * 2.0]).sum(), x0)
    _check_grad(lambda t: ad.masked_softmax(t).pick(0), x0)
    _check_grad(lambda t: ad.log_softmax(t).pick(1), x0)


def test_scalar_fanout_accumulation():
    # A 0-d parameter consumed by several downstream products must accumulate
    # every contribution (numpy 0-d products are immutable scalars, which once
    # broke in-place accumulation).
    s = Tensor(np.zeros(()), requires_grad=True)
    a, b = Tensor(3.0), Tensor(4.0)
    loss = (-s).exp() * a + (-s).exp() * b + s
    loss.backward()
    # d/ds [e^-s(a+b) + s] at s=0 = -(a+b) + 1 = -6
    assert np.allclose(s.grad, -6.0)


def test_shared_subexpression_accumulation():
    x = Tensor(np.array([1.0, 2.0]), requires_grad=True)
    y = x * 2.0
    loss = (y * y).sum() + y.sum()
    loss.backward()
    expected = numeric_grad(
        lambda v: float(((v * 2) ** 2).sum() + (v * 2).sum()), x.data)
    np.testing.assert_allclose(x.grad, expected, rtol=1e-6)


def test_broadcasting_unbroadcast():
    a0 = np.ones((1, 3))
    b0 = np.ones((4, 1))
    a = Tensor(a0, requires_grad=True)
    b = Tensor(b0, requires_grad=True)
    (a + b).sum().backward()
    np.testing.assert_array_equal(a.grad, np.full((1, 3), 4.0))
    np.testing.assert_array_equal(b.grad, np.full((4, 1), 3.0))


def test_backward_requires_scalar():
    with pytest.raises(ValueError):
        Tensor(np.zeros(3), requires_grad=True).backward()


def test_masked_softmax_rows_sum_to_one():
    rng = np.random.default_rng(1)
    logits = Tensor(rng.normal(size=(6, 6)))
    mask = rng.random((6, 6)) < 0.5
    np.fill_diagonal(mask, True)
    out = ad.masked_softmax(logits, mask)
    np.testing.assert_allclose(out.data.sum(axis=-1), 1.0, atol=1e-9)
    assert (out.data[~mask] == 0.0).all()


def test_masked_softmax_empty_slice_asserts():
    with pytest.raises(AssertionError):
        ad.masked_softmax(Tensor(np.zeros((2, 2))),
                          np.zeros((2, 2), dtype=bool))


@given(st.integers(0, 2 ** 31 - 1))
@settings(max_examples=20, deadline=None)
def test_log_softmax_matches_log_of_softmax(seed):
    x = np.random.default_rng(seed).normal(size=7)
    lsm = ad.log_softmax(Tensor(x)).data
    np.testing.assert_allclose(np.exp(lsm), ad.masked_softmax(Tensor(x)).data,
                               atol=1e-12)
    np.testing.assert_allclose(np.exp(lsm).sum(), 1.0, atol=1e-12)


def test_dropout_eval_mode_is_identity():
    x = Tensor(np.arange(5.0))
    assert ad.dropout(x, 0.0, np.random.default_rng(0)) is x
    assert ad.dropout(x, 0.5, None) is x


def test_dropout_scales_kept_entries():
    x = Tensor(np.ones(10000))
    out = ad.dropout(x, 0.25, np.random.default_rng(0))
    kept = out.data[out.data > 0]
    np.testing.assert_allclose(kept, 1.0 / 0.75)
    assert abs(out.data.mean() - 1.0) < 0.05
