import json
import math

import numpy as np
import pytest

from linpo.covstate import CovarianceAccumulator, weighted_norm
from linpo.envmodel import LinearMdpInstance, random_lowrank_mdp, random_stochastic_losses, tabular_embed
from linpo.evaloracle import deterministic_policies, occupancy
from linpo.warmup import (
    KnownSetOracle,
    WarmupArtifacts,
    WarmupConfig,
    cover_step,
    coverage_probe,
    known_set_membership,
    reward_free_warmup,
)


def scaled_identity(d, c):
    acc = CovarianceAccumulator(d)
    for i in range(d):
        e = np.zeros(d)
        e[i] = math.sqrt(c - 1)
        acc.rank_one_update(e)
    return acc


def switch_chain(S=2, H=3):
    """Action a moves to state a: every state reachable deterministically."""
    P = np.zeros((H - 1, S, S, S))
    for a in range(S):
        P[:, :, a, a] = 1.0
    return tabular_embed(P, np.zeros((H, S, S)))


def test_config_levels():
    cfg = WarmupConfig(eps_cov=0.05)
    assert cfg.m == 5
    assert cfg.level_targets() == [0.5, 0.25, 0.125, 0.0625, 0.05]
    assert cfg.gamma(3) == pytest.approx(1 / 6)
    assert WarmupConfig(eps_cov=1.0).m == 0
    with pytest.raises(ValueError):
        WarmupConfig(eps_cov=0.0)


def test_reachable_chain_gets_every_direction_below_gamma():
    mdp, lm = switch_chain()
    cfg = WarmupConfig(beta=1.0, eps_cov=0.05, episode_budget=2000)
    warm = reward_free_warmup(mdp, lm, cfg, seed=0)
    gamma = cfg.gamma(mdp.horizon)
    for h in range(mdp.horizon):
        norms = weighted_norm(warm.covariates(h), mdp.features)
        reach = np.zeros(2, bool)
        reach[0 if h == 0 else slice(None)] = True
        assert np.all(norms[reach] <= gamma + 1e-12)
        assert warm.steps[h].status == "ok"


def test_unreachable_state_is_unknown_but_carries_no_mass():
    S, A, H = 3, 2, 3
    P = np.zeros((H - 1, S, A, S))
    P[:, :, 0, 0] = 1.0
    P[:, :, 1, 1] = 1.0  # state 2 is never reached
    mdp, lm = tabular_embed(P, np.zeros((H, S, A)))
    cfg = WarmupConfig(beta=1.0, eps_cov=0.05, episode_budget=300)
    warm = reward_free_warmup(mdp, lm, cfg, seed=0)
    oracle = KnownSetOracle.from_warmup(mdp, warm)
    for h in range(1, H):
        assert not oracle.member(h, 2)
        for pi in deterministic_policies(H, S, A):
            assert occupancy(mdp, pi).state_marginals[h, 2] == 0
    probe = coverage_probe(mdp, lm, oracle)
    assert np.all(probe.worst_case == 0)


def test_eps_one_returns_empty_data():
    mdp, lm = switch_chain()
    res = cover_step(mdp, lm, 1, WarmupConfig(eps_cov=1.0), seed=0)
    assert res.episodes == 0 and len(res.transitions) == 0
    np.testing.assert_array_equal(res.covariates.matrix, np.eye(4))


def test_single_step_design_grows_linearly():
    feats = np.eye(3).reshape(1, 3, 3)
    mdp = LinearMdpInstance(feats, np.zeros((0, 1, 3)))
    lm = random_stochastic_losses(mdp, 0)
    mins = []
    for budget in (90, 180, 360):
        # beta large enough that coverage is never reached: the full budget is spent
        cfg = WarmupConfig(beta=1e4, eps_cov=0.05, episode_budget=budget)
        warm = reward_free_warmup(mdp, lm, cfg, seed=0)
        assert warm.steps[0].status == "budget_exhausted"
        mins.append(np.linalg.eigvalsh(warm.covariates(0).matrix).min())
    for budget, lam in zip((90, 180, 360), mins):
        assert abs(lam - (1 + budget / 3)) <= 1.0


def test_same_seed_same_artifacts_and_json_round_trip():
    mdp = random_lowrank_mdp(4, 5, 2, 3, seed=0)
    lm = random_stochastic_losses(mdp, 0)
    cfg = WarmupConfig(beta=1.0, eps_cov=0.1, episode_budget=400)
    a = reward_free_warmup(mdp, lm, cfg, seed=3)
    b = reward_free_warmup(mdp, lm, cfg, seed=3)
    for x, y in zip(a.steps, b.steps):
        assert np.array_equal(x.transitions, y.transitions)
        assert np.array_equal(x.covariates.inverse, y.covariates.inverse)
    c = WarmupArtifacts.from_dict(json.loads(json.dumps(a.to_dict())), mdp)
    for x, y in zip(a.steps, c.steps):
        assert np.array_equal(x.covariates.inverse, y.covariates.inverse)
        assert x.covariates.log_det == y.covariates.log_det
        assert np.array_equal(x.losses, y.losses)


def test_one_hot_norms_follow_visit_counts():
    S, A, H = 3, 2, 3
    mdp, lm = tabular_embed(np.full((H - 1, S, A, S), 1 / S), np.zeros((H, S, A)))
    warm = reward_free_warmup(mdp, lm, WarmupConfig(beta=1.0, eps_cov=0.05, episode_budget=500), seed=1)
    for h in range(H):
        tr = warm.steps[h].transitions
        counts = np.zeros((S, A))
        np.add.at(counts, (tr[:, 0], tr[:, 1]), 1)
        np.testing.assert_allclose(
            weighted_norm(warm.covariates(h), mdp.features), 1 / np.sqrt(1 + counts), rtol=1e-10
        )


def test_membership_closed_form():
    mdp, _ = switch_chain()
    beta, H = 0.5, mdp.horizon
    c_needed = 4 * beta**2 * H**2
    for c, expect in ((c_needed * 1.01, True), (c_needed * 0.99, False)):
        oracle = KnownSetOracle(mdp, [scaled_identity(4, c)] * H, beta)
        assert known_set_membership(oracle, 0, 0) is expect
    oracle = KnownSetOracle(mdp, [CovarianceAccumulator(4)] * H, 1e-9)
    assert all(oracle.member(h, s) for h in range(H) for s in range(2))


def test_membership_matches_defining_inequality():
    mdp = random_lowrank_mdp(4, 6, 3, 3, seed=2)
    lm = random_stochastic_losses(mdp, 0)
    warm = reward_free_warmup(mdp, lm, WarmupConfig(beta=1.0, eps_cov=0.1, episode_budget=300), seed=0)
    oracle = KnownSetOracle.from_warmup(mdp, warm, beta=1.0)
    for h in range(3):
        inv = np.linalg.inv(warm.covariates(h).matrix)
        for s in range(6):
            brute = all(
                math.sqrt(mdp.features[s, a] @ inv @ mdp.features[s, a]) <= oracle.threshold for a in range(3)
            )
            assert oracle.member(h, s) == brute
    assert oracle.member(3, 0)  # past the horizon


def test_probe_boundaries():
    mdp = random_lowrank_mdp(4, 6, 3, 3, seed=2)
    lm = random_stochastic_losses(mdp, 0)
    known = KnownSetOracle(mdp, [CovarianceAccumulator(4)] * 3, 1e-9)
    p = coverage_probe(mdp, lm, known)
    assert np.all(p.probe_max == 0) and np.all(p.worst_case == 0)
    unknown = KnownSetOracle(mdp, [CovarianceAccumulator(4)] * 3, 1e6)
    p = coverage_probe(mdp, lm, unknown)
    np.testing.assert_allclose(p.probe_max, 1.0)
    np.testing.assert_allclose(p.worst_case, 1.0)


def test_completed_warmup_meets_target_or_warns():
    mdp = random_lowrank_mdp(6, 6, 3, 3, seed=1)
    lm = random_stochastic_losses(mdp, 1001)
    cfg = WarmupConfig(beta=0.5 * math.sqrt(6), eps_cov=0.05, episode_budget=2000)
    warm = reward_free_warmup(mdp, lm, cfg, seed=0)
    probe = coverage_probe(mdp, lm, KnownSetOracle.from_warmup(mdp, warm))
    for h in range(3):
        assert probe.probe_max[h] <= cfg.eps_cov or warm.steps[h].status == "budget_exhausted"
