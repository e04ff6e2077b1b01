"""Trainable connector: seeded init, shape/invariance contracts, pooling, grads."""

from __future__ import annotations

import numpy as np
import pytest

from conftest import numeric_grad
from emoalign.layers import params_checksum
from emoalign.qformer import (
    QFormerConfig,
    init_qformer,
    pool_queries,
    pool_queries_backward,
    qformer_backward,
    qformer_forward,
)

TINY = QFormerConfig(n_queries=4, d_model=16, n_layers=1, n_heads=2, d_ff=32, d_enc=8)


def test_config_validation():
    with pytest.raises(ValueError):
        QFormerConfig(n_queries=0)
    with pytest.raises(ValueError):
        QFormerConfig(d_model=63, n_heads=4)
    with pytest.raises(ValueError):
        QFormerConfig(d_enc=0)


def test_init_same_seed_same_checksum():
    assert params_checksum(init_qformer(TINY, 5)) == params_checksum(init_qformer(TINY, 5))
    assert params_checksum(init_qformer(TINY, 5)) != params_checksum(init_qformer(TINY, 6))


def test_init_gradients_are_zero():
    state = init_qformer(TINY, 0)
    assert all(np.all(g == 0.0) for _, g in state.named_gradients())


@pytest.mark.parametrize("t", [1, 5, 50])
def test_output_shape_independent_of_input_length(t):
    state = init_qformer(TINY, 0)
    features = np.random.default_rng(t).standard_normal((t, 8))
    out, _ = qformer_forward(state, features)
    assert out.shape == (4, 16)
    assert np.all(np.isfinite(out))


def test_forward_is_pure_and_deterministic():
    state = init_qformer(TINY, 0)
    features = np.random.default_rng(1).standard_normal((6, 8))
    before = params_checksum(state)
    a, _ = qformer_forward(state, features)
    b, _ = qformer_forward(state, features)
    np.testing.assert_array_equal(a, b)
    assert params_checksum(state) == before


def test_permutation_invariance_over_feature_rows():
    # Cross-attention reads features as an unordered set: permuting the rows
    # must leave the query outputs unchanged.
    state = init_qformer(TINY, 0)
    rng = np.random.default_rng(2)
    features = rng.standard_normal((9, 8))
    out, _ = qformer_forward(state, features)
    out_perm, _ = qformer_forward(state, features[rng.permutation(9)])
    np.testing.assert_allclose(out_perm, out, atol=1e-10)


def test_forward_input_validation():
    state = init_qformer(TINY, 0)
    with pytest.raises(ValueError):
        qformer_forward(state, np.zeros((0, 8)))
    with pytest.raises(ValueError):
        qformer_forward(state, np.zeros((4, 7)))
    with pytest.raises(ValueError):
        qformer_forward(state, np.zeros(8))


# ---------------------------------------------------------------------------
# Pooling
# ---------------------------------------------------------------------------


def test_pool_constant_rows_gives_direction():
    v = np.array([3.0, 4.0])
    unit, _ = pool_queries(np.tile(v, (5, 1)))
    np.testing.assert_allclose(unit, [0.6, 0.8], atol=1e-15)


def test_pool_output_is_unit_norm():
    rng = np.random.default_rng(0)
    for _ in range(20):
        q = rng.standard_normal((4, 16))
        unit, _ = pool_queries(q)
        assert abs(np.linalg.norm(unit) - 1.0) <= 1e-12


def test_pool_two_axis_rows():
    q = np.array([[2.0, 0.0], [0.0, 2.0]])
    unit, _ = pool_queries(q)
    s = np.sqrt(2.0) / 2.0
    np.testing.assert_allclose(unit, [s, s], atol=1e-15)


def test_pool_rejects_degenerate_mean():
    with pytest.raises(ValueError):
        pool_queries(np.array([[1.0, 0.0], [-1.0, 0.0]]))
    with pytest.raises(ValueError):
        pool_queries(np.array([[np.nan, 0.0]]))


def test_pool_backward_matches_numeric():
    rng = np.random.default_rng(3)
    q = rng.standard_normal((4, 6))
    probe = rng.standard_normal(6)

    def loss():
        unit, _ = pool_queries(q)
        return float(unit @ probe)

    unit, cache = pool_queries(q)
    d_q = pool_queries_backward(probe, cache)
    np.testing.assert_allclose(d_q, numeric_grad(loss, q), rtol=1e-6, atol=1e-9)


# ---------------------------------------------------------------------------
# Backward
# ---------------------------------------------------------------------------


def test_zero_upstream_gradient_gives_zero_grads():
    state = init_qformer(TINY, 0)
    features = np.random.default_rng(4).standard_normal((5, 8))
    out, cache = qformer_forward(state, features)
    d_features = qformer_backward(state, np.zeros_like(out), cache)
    assert all(np.all(g == 0.0) for _, g in state.named_gradients())
    np.testing.assert_array_equal(d_features, np.zeros_like(features))


def test_backward_twice_doubles_gradients():
    state = init_qformer(TINY, 0)
    features = np.random.default_rng(5).standard_normal((5, 8))
    probe = np.random.default_rng(6).standard_normal((4, 16))
    out, cache = qformer_forward(state, features)
    qformer_backward(state, probe, cache)
    once = {n: g.copy() for n, g in state.named_gradients()}
    qformer_backward(state, probe, cache)
    for name, g in state.named_gradients():
        np.testing.assert_allclose(g, 2.0 * once[name], atol=1e-12, err_msg=name)


def test_parameter_gradients_match_numeric():
    state = init_qformer(TINY, 0)
    rng = np.random.default_rng(7)
    features = rng.standard_normal((5, 8))
    probe = rng.standard_normal((4, 16))

    def loss():
        out, _ = qformer_forward(state, features)
        return float((out * probe).sum())

    out, cache = qformer_forward(state, features)
    state.zero_gradients()
    d_features = qformer_backward(state, probe, cache)
    grads = dict(state.named_gradients())
    for name, p in state.named_parameters():
        numeric = numeric_grad(loss, p)
        np.testing.assert_allclose(grads[name], numeric, rtol=1e-5, atol=1e-8,
                                   err_msg=name)
    np.testing.assert_allclose(
        d_features, numeric_grad(loss, features), rtol=1e-5, atol=1e-8
    )
