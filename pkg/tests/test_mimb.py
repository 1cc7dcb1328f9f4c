import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.special import expit

from multipose import nn_core as nn
from multipose.mimb import MimbConfig, MimbParams, embed, mimb_forward, selector_matrix
from multipose.nn_core import ParameterStore, ShapeError, Tensor


def _block(C=8, r=4, N=2, seed=0, dtype=np.float64):
    store = ParameterStore(dtype)
    params = MimbParams.create(store, "m", MimbConfig(C, r, N), np.random.default_rng(seed))
    return store, params


def _reference(X, sel, p):
    """Direct numpy evaluation of the block."""
    s = X.mean(axis=(1, 2))
    e = expit(np.maximum(s @ p.ex_w1.data + p.ex_b1.data, 0) @ p.ex_w2.data + p.ex_b2.data)
    v = expit(np.maximum(sel @ p.em_w1.data + p.em_b1.data, 0) @ p.em_w2.data + p.em_b2.data)
    return X * (v * e)[:, None, None, :]


@given(st.integers(1, 3), st.integers(1, 5), st.sampled_from([4, 8, 12]), st.integers(1, 4),
       st.integers(0, 2**31 - 1))
def test_forward_matches_reference(B, P, C, N, seed):
    store, p = _block(C, 4, N, seed)
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(B, P, P, C))
    lam = int(rng.integers(N))
    out = mimb_forward(Tensor(X), lam, p).data
    sel = np.zeros((B, N))
    sel[:, lam] = 1
    np.testing.assert_allclose(out, _reference(X, sel, p), rtol=1e-12)


@pytest.mark.parametrize("C,r,N", [(8, 4, 2), (12, 3, 3), (16, 2, 1), (10, 4, 5)])
def test_closed_form_parameter_count(C, r, N):
    store, p = _block(C, r, N)
    h = C // r
    assert p.count() == store.count() == MimbConfig(C, r, N).param_count()
    # excite: C->h->C; embed: N->h->C; each layer has a bias.
    assert p.count() == (C * h + h) + (h * C + C) + (N * h + h) + (h * C + C)


def test_selector_changes_output_and_bypass_is_identity():
    _, p = _block(8, 4, 2, seed=3)
    X = Tensor(np.random.default_rng(1).normal(size=(2, 3, 3, 8)))
    a = mimb_forward(X, 0, p).data
    b = mimb_forward(X, 1, p).data
    assert not np.allclose(a, b)
    assert np.array_equal(mimb_forward(X, 0, p, bypass_gates=True).data, X.data)


def test_zero_init_gates_are_half():
    store = ParameterStore(np.float64)
    p = MimbParams.create(store, "m", MimbConfig(8, 4, 2))
    v = embed(0, p, batch=2).data
    np.testing.assert_allclose(v, 0.5)


def test_soft_selector_rows_and_errors():
    m = selector_matrix([0.3, 0.7], 3, 2)
    assert m.shape == (3, 2) and np.allclose(m[:, 1], 0.7)
    with pytest.raises(ShapeError):
        selector_matrix(np.ones((2, 3)) / 3, 3, 3)
    with pytest.raises(ValueError):
        selector_matrix(3, 1, 2)
    _, p = _block()
    with pytest.raises(ShapeError):
        mimb_forward(Tensor(np.zeros((1, 2, 2, 5))), 0, p)


def test_block_gradients():
    store, p = _block(8, 4, 2, seed=5)
    X = Tensor(np.random.default_rng(2).normal(size=(2, 3, 3, 8)), requires_grad=True)
    cot = np.random.default_rng(3).normal(size=(2, 3, 3, 8))
    sel = np.array([[1.0, 0.0], [0.3, 0.7]])
    params = {"X": X, **p.tensors()}
    report = nn.grad_check(lambda: nn.reduce_sum(nn.mul(mimb_forward(X, sel, p), cot)), params)
    assert all(r.passed for r in report.values()), {n: r.max_rel_error for n, r in report.items()}
