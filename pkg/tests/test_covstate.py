import math

import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from linpo.covstate import (
    CovarianceAccumulator,
    epoch_bound,
    potential_bound,
    rank_one_update,
    should_refresh_epoch,
    solve,
    weighted_norm,
)

import oracles


def unit(rng, n, d):
    x = rng.normal(size=(n, d))
    return x / np.linalg.norm(x, axis=1, keepdims=True)


def test_diagonal_update():
    acc = CovarianceAccumulator(2)
    rank_one_update(acc, [1.0, 0.0])
    np.testing.assert_allclose(acc.matrix, np.diag([2.0, 1.0]))
    np.testing.assert_allclose(acc.inverse, np.diag([0.5, 1.0]))
    assert math.isclose(acc.log_det, math.log(2))


def test_zero_update_leaves_state():
    acc = CovarianceAccumulator(3)
    rank_one_update(acc, [1.0, 2.0, 0.0])
    before = (acc.matrix.copy(), acc.inverse.copy(), acc.log_det)
    rank_one_update(acc, np.zeros(3))
    assert np.array_equal(acc.matrix, before[0])
    assert np.array_equal(acc.inverse, before[1])
    assert acc.log_det == before[2]


def test_500_unit_updates_match_dense_inverse():
    rng = np.random.default_rng(0)
    phis = unit(rng, 500, 5)
    acc = CovarianceAccumulator(5)
    for p in phis:
        acc.rank_one_update(p)
    inv, logdet = oracles.dense_inverse_logdet(phis, 5)
    assert np.abs(acc.inverse - inv).max() <= 1e-8
    assert abs(acc.log_det - logdet) <= 1e-8


def test_weighted_norm_examples():
    acc = CovarianceAccumulator(2)
    assert math.isclose(weighted_norm(acc, [0.6, 0.8]), 1.0)
    acc.rank_one_update([1.0, 0.0])
    assert math.isclose(weighted_norm(acc, [1.0, 0.0]), 1 / math.sqrt(2))


def test_weighted_norm_matches_dense_solve():
    rng = np.random.default_rng(1)
    phis = rng.normal(size=(200, 4)) * 0.3
    acc = CovarianceAccumulator(4)
    for p in phis:
        acc.rank_one_update(p)
    G = oracles.dense_gram(phis, 4)
    for u in rng.normal(size=(50, 4)):
        ref = math.sqrt(u @ np.linalg.solve(G, u))
        assert abs(weighted_norm(acc, u) - ref) <= 1e-9 * ref


def test_solve_examples_and_dense_oracle():
    acc = CovarianceAccumulator(2)
    np.testing.assert_array_equal(solve(acc, [2.0, 3.0]), [2.0, 3.0])
    acc.rank_one_update([1.0, 0.0])
    np.testing.assert_allclose(solve(acc, [2.0, 3.0]), [1.0, 3.0])
    rng = np.random.default_rng(2)
    phis = unit(rng, 300, 6)
    acc = CovarianceAccumulator(6)
    for p in phis:
        acc.rank_one_update(p)
    b = rng.normal(size=6)
    np.testing.assert_allclose(acc.solve(b), oracles.dense_solve(phis, 6, b), atol=1e-8, rtol=1e-8)


def test_refresh_rule():
    acc = CovarianceAccumulator(2)
    assert should_refresh_epoch(acc, None)
    snap = acc.snapshot()
    assert not should_refresh_epoch(acc, snap)
    acc.rank_one_update([1.0, 0.0])
    assert should_refresh_epoch(acc, snap)


def test_refresh_rule_at_the_boundary():
    # det ratio 1 + |x|^2: just below 2, then one more update crosses it
    acc = CovarianceAccumulator(2)
    snap = acc.snapshot()
    acc.rank_one_update([math.sqrt(1 - 1e-12), 0.0])
    assert math.exp(acc.log_det) < 2
    assert not should_refresh_epoch(acc, snap)
    acc.rank_one_update([0.0, 1e-3])
    assert should_refresh_epoch(acc, snap)


def test_drift_refactor_keeps_accuracy_on_long_stream():
    rng = np.random.default_rng(3)
    phis = unit(rng, 5000, 3)
    acc = CovarianceAccumulator(3)
    for p in phis:
        acc.rank_one_update(p)
    assert acc.refactorizations >= 5000 // 256
    inv, logdet = oracles.dense_inverse_logdet(phis, 3)
    assert np.abs(acc.inverse - inv).max() <= 1e-10
    assert acc.drift() <= 1e-10


def test_potential_is_sum_of_pre_update_norms():
    rng = np.random.default_rng(4)
    phis = unit(rng, 100, 3)
    acc = CovarianceAccumulator(3)
    total = 0.0
    for i, p in enumerate(phis):
        inv, _ = oracles.dense_inverse_logdet(phis[:i], 3)
        total += p @ inv @ p
        acc.rank_one_update(p)
    assert math.isclose(acc.potential, total, rel_tol=1e-10)
    assert acc.potential <= potential_bound(3, 100)


def test_bounds_closed_form():
    assert math.isclose(epoch_bound(6, 2000), 6 * math.log(2001) / math.log(2))
    assert math.isclose(potential_bound(6, 2000), 12 * math.log(1 + 2000 / 6))


@given(arrays(np.float64, (30, 3), elements=st.floats(-1, 1)))
@settings(max_examples=60, deadline=None)
def test_incremental_matches_dense_property(phis):
    acc = CovarianceAccumulator(3)
    for p in phis:
        acc.rank_one_update(p)
    inv, logdet = oracles.dense_inverse_logdet(phis, 3)
    assert np.abs(acc.inverse - inv).max() <= 1e-9
    assert abs(acc.log_det - logdet) <= 1e-9
    snap = acc.snapshot()
    assert not snap.inverse.flags.writeable
