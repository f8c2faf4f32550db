import json
import math

import numpy as np
import pytest

from linpo.covstate import CovarianceAccumulator
from linpo.envmodel import (
    ADVERSARIAL,
    STOCHASTIC,
    adversarial_schedule,
    random_lowrank_mdp,
    random_stochastic_losses,
)
from linpo.harness.instances import tiny_tabular
from linpo.popt import (
    QEstimate,
    RunConfig,
    SoftmaxPolicy,
    build_q,
    default_eta,
    estimate_loss,
    record_from_dict,
    record_to_dict,
    regress_value,
    restricted_bound,
    restricted_q,
    restricted_v,
    run,
    run_with_warmup,
    theory_beta,
)
from linpo.warmup import reward_free_warmup

import oracles


def test_parameter_recipes():
    assert restricted_bound(3, 0) == pytest.approx(3 * (1 + 2 / 3))
    assert restricted_bound(3, 2) == pytest.approx(1 + 2 / 3)
    assert default_eta(3, 3, 2000) == pytest.approx(math.sqrt(math.log(3)) / (3 * math.sqrt(2000)))
    assert theory_beta(6, 3, 200, 0.1) == pytest.approx(2 * 6**1.5 * 3 * math.log(6 * 3 * 200 / 0.1))


def test_regress_value_closed_forms():
    acc = CovarianceAccumulator(2)
    acc.rank_one_update([1.0, 0.0])
    feats = np.array([[1.0, 0.0]])
    np.testing.assert_allclose(regress_value(feats, np.array([0]), acc, np.array([1.0, 0.0])), [0.5, 0.0])
    np.testing.assert_array_equal(regress_value(feats, np.array([0]), acc, np.zeros(2)), np.zeros(2))


def test_regress_value_matches_normal_equations():
    mdp, _ = tiny_tabular(0)
    rng = np.random.default_rng(0)
    s = rng.integers(3, size=50)
    a = rng.integers(2, size=50)
    nxt = rng.integers(3, size=50)
    feats = mdp.features[s, a]
    acc = CovarianceAccumulator(6)
    for p in feats:
        acc.rank_one_update(p)
    v = rng.uniform(-1, 1, size=3)
    ref = oracles.dense_solve(feats, 6, feats.T @ v[nxt])
    np.testing.assert_allclose(regress_value(feats, nxt, acc, v), ref, atol=1e-8)


def test_estimate_loss_full_information_passthrough():
    g = np.random.default_rng(0).normal(size=4)
    out = estimate_loss(g, ADVERSARIAL)
    assert np.array_equal(out, g)
    with pytest.raises(ValueError):
        estimate_loss(np.zeros((2, 2)), ADVERSARIAL)
    with pytest.raises(ValueError):
        estimate_loss(None, STOCHASTIC)
    with pytest.raises(ValueError):
        estimate_loss(g, "other")


def test_estimate_loss_one_hot_ridge_closed_form():
    ell = np.array([0.4, -0.2, 0.9])
    counts = [3, 7, 1]
    acc = CovarianceAccumulator(3)
    b = np.zeros(3)
    for i, c in enumerate(counts):
        for _ in range(c):
            e = np.eye(3)[i]
            acc.rank_one_update(e)
            b += e * ell[i]
    np.testing.assert_allclose(estimate_loss(None, STOCHASTIC, acc, b), np.array(counts) * ell / (1 + np.array(counts)))


def test_loss_estimate_self_normalized_bound():
    d, n, trials, H, delta = 4, 10_000, 200, 3, 0.1
    rng = np.random.default_rng(0)
    g = rng.uniform(-0.5, 0.5, size=d) / d
    radius = math.sqrt(4 * d * math.log(H * n / delta)) + math.sqrt(d)
    inside = 0
    for _ in range(trials):
        phi = rng.normal(size=(n, d))
        phi /= np.linalg.norm(phi, axis=1, keepdims=True)
        ell = phi @ g + rng.uniform(-0.5, 0.5, size=n)
        acc = CovarianceAccumulator(d)
        acc.matrix = np.eye(d) + phi.T @ phi
        acc.refactor()
        err = estimate_loss(None, STOCHASTIC, acc, phi.T @ ell) - g
        inside += math.sqrt(err @ acc.matrix @ err) <= radius
    assert inside >= (1 - delta) * trials


def test_q_examples():
    mdp, _ = tiny_tabular(0)
    acc = CovarianceAccumulator(6)
    snap = acc.snapshot()
    est = QEstimate(np.zeros(6), np.zeros(6), 0, beta=0.7)
    assert build_q(1, 0, mdp, est, snap) == pytest.approx(-0.7)
    assert restricted_q(1, 0, mdp, est, snap, known=False) == 0.0
    assert restricted_v(1, mdp, est, snap, np.array([0.5, 0.5]), known=False) == 0.0


def test_restricted_v_averages():
    mdp = random_lowrank_mdp(4, 5, 3, 3, seed=0)
    rng = np.random.default_rng(1)
    acc = CovarianceAccumulator(4)
    for p in rng.normal(size=(10, 4)):
        acc.rank_one_update(p)
    snap = acc.snapshot()
    est = QEstimate(rng.normal(size=4), rng.normal(size=4), 0, beta=0.3)
    qs = [restricted_q(2, a, mdp, est, snap, True) for a in range(3)]
    assert abs(restricted_v(2, mdp, est, snap, np.full(3, 1 / 3), True) - sum(qs) / 3) <= 1e-12
    assert restricted_v(2, mdp, est, snap, np.eye(3)[1], True) == pytest.approx(qs[1], abs=1e-15)


def test_policy_improve_examples():
    feats = np.array([[[1.0, 0.0], [0.0, 1.0]]])
    pol = SoftmaxPolicy(feats, 1)
    pol.add_epoch(0, CovarianceAccumulator(2).snapshot())
    before = pol.table().copy()
    pol.improve(0, np.array([1.0, -1.0]), eta=0.0, beta=1.0)
    np.testing.assert_array_equal(pol.table(), before)
    # eta * (Q(a1) - Q(a0)) = ln 2 with equal bonuses
    pol.improve(0, np.array([0.0, math.log(2)]), eta=1.0, beta=0.0)
    np.testing.assert_allclose(pol.probs(0)[0], [2 / 3, 1 / 3])
    np.testing.assert_allclose(pol.logits_at(0, feats[0]), pol.logits(0)[0])


def small_run(seed, K=50, mode="stochastic"):
    mdp = random_lowrank_mdp(4, 5, 3, 3, seed=seed)
    if mode == "stochastic":
        lm = random_stochastic_losses(mdp, seed)
    else:
        lm = adversarial_schedule(mdp, K, seed, block=10)
    cfg = RunConfig(K=K, seed=seed, warmup_budget=300, beta=1.0, eps_cov=0.1)
    warm, rec = run_with_warmup(mdp, lm, cfg)
    return mdp, lm, warm, rec


@pytest.mark.parametrize("mode", ["stochastic", "adversarial"])
def test_compact_policy_matches_naive_recursion(mode):
    mdp, lm, _, rec = small_run(0, mode=mode)
    qs = [rec.q_tables(k) for k in range(rec.num_episodes)]
    naive = oracles.naive_omd_policy(mdp.features, qs, rec.config.eta)
    for k in range(rec.num_episodes + 1):
        pi = rec.policy_table(k)
        if k < rec.num_episodes:
            idx = (np.arange(3), rec.states[k])
            np.testing.assert_allclose(pi[idx], naive[k][idx], atol=1e-9, rtol=0)
        else:
            np.testing.assert_allclose(pi, naive[k], atol=1e-9, rtol=0)


def test_zero_episode_run_keeps_uniform_policy():
    mdp, lm, warm, _ = small_run(1, K=5)
    rec = run(mdp, lm, warm, RunConfig(K=0, seed=1, beta=1.0, eps_cov=0.1))
    assert rec.num_episodes == 0
    np.testing.assert_allclose(rec.policy_table(0), 1 / 3)
    assert rec.metadata["warmup_episodes"] == warm.episodes_used


def test_runs_are_bit_identical_and_serialize_exactly():
    _, _, _, a = small_run(2)
    _, _, _, b = small_run(2)
    for name in ("theta", "g_hat", "v_hat", "states", "visited_bonus"):
        assert np.array_equal(getattr(a, name), getattr(b, name))
    c = record_from_dict(json.loads(json.dumps(record_to_dict(a))))
    for name in ("theta", "g_hat", "v_hat", "states", "restricted_excess"):
        assert np.array_equal(getattr(a, name), getattr(c, name))
    for k in (0, 25, 50):
        assert np.array_equal(a.policy_table(k), c.policy_table(k))


def test_restricted_q_bounded_on_fully_known_tabular_instance():
    mdp, lm = tiny_tabular(3)
    cfg = RunConfig(K=300, seed=0, beta=0.25, eps_cov=0.05, warmup_budget=4000).resolve(mdp)
    warm = reward_free_warmup(mdp, lm, cfg.warmup_config(mdp), 0)
    rec = run(mdp, lm, warm, cfg)
    assert rec.visited_known.all()
    assert rec.diagnostics["restricted_bound_ok"]


def test_invariants_present_and_hold():
    _, _, _, rec = small_run(4, K=200)
    diag = rec.diagnostics
    assert diag["epoch_bound_ok"] and diag["potential_ok"] and diag["bias_ok"] and diag["bonus_terms_ok"]
    assert all(r <= b for r, b in zip(diag["epoch_refreshes"], diag["epoch_bound"]))


def test_adversarial_requires_long_enough_schedule():
    mdp = random_lowrank_mdp(4, 5, 3, 3, seed=0)
    lm = adversarial_schedule(mdp, 10, 0)
    warm = reward_free_warmup(mdp, lm, RunConfig(K=20, beta=1.0, eps_cov=0.1).warmup_config(mdp), 0)
    with pytest.raises(ValueError):
        run(mdp, lm, warm, RunConfig(K=20, beta=1.0, eps_cov=0.1))
