"""Reward-free warmup: per-step coverage data and the known-state sets.

Each step ``h`` gets its own independent exploration run. The run repeatedly
plans a deterministic policy that maximizes the (optimistically estimated)
probability of reaching a step-``h`` state that still has an action with
``||phi||_{Lambda^{-1}} > gamma``, rolls it out, and adds the step-``h``
feature to ``Lambda``. Levels ``i = 1..m`` end when the estimate drops below
``2^-i`` (``eps_cov`` for the last level).

In ``learned`` mode the planner sees only features and its own transitions
(least-squares dynamics with UCB bonuses). ``oracle`` mode plans with the
true transition tensor and exists for tests.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .covstate import CovarianceAccumulator, weighted_norm
from .envmodel import STOCHASTIC, LinearMdpInstance, LossModel, episode_rng, step
from .evaloracle import (
    max_reach_probability,
    occupancy_table,
    optimal_policy,
    random_policy,
)

log = logging.getLogger(__name__)

WARMUP_STREAM = 1


@dataclass(frozen=True)
class WarmupConfig:
    delta: float = 0.1
    beta: float = 1.0
    eps_cov: float = 0.05
    episode_budget: int = 2000
    dynamics: str = "learned"
    explore_bonus: float = 0.5
    replan_every: int = 1

    def __post_init__(self):
        if not 0 < self.eps_cov <= 1:
            raise ValueError("eps_cov must lie in (0, 1]")
        if self.beta <= 0:
            raise ValueError("beta must be positive")
        if self.dynamics not in ("learned", "oracle"):
            raise ValueError("dynamics must be 'learned' or 'oracle'")
        if self.episode_budget < 0 or self.replan_every < 1:
            raise ValueError("episode_budget must be >= 0 and replan_every >= 1")

    @property
    def m(self) -> int:
        return max(0, math.ceil(math.log2(1.0 / self.eps_cov) - 1e-12))

    def gamma(self, H: int) -> float:
        return 1.0 / (2.0 * self.beta * H)

    def level_targets(self) -> list[float]:
        return [2.0 ** -(i + 1) for i in range(self.m - 1)] + ([self.eps_cov] if self.m else [])


@dataclass
class CoverResult:
    h: int
    transitions: np.ndarray  # (n, 3) int: state, action, next state
    losses: np.ndarray  # (n,) realized losses observed at step h (bandit mode)
    covariates: CovarianceAccumulator
    status: str
    achieved: float
    episodes: int
    levels: list = field(default_factory=list)


@dataclass
class WarmupArtifacts:
    steps: list  # CoverResult per step, index h
    config: WarmupConfig

    @property
    def episodes_used(self) -> int:
        return sum(r.episodes for r in self.steps)

    @property
    def warnings(self) -> list[str]:
        return [
            f"step {r.h}: coverage budget exhausted, achieved {r.achieved:.4f}"
            for r in self.steps
            if r.status == "budget_exhausted"
        ]

    def covariates(self, h: int) -> CovarianceAccumulator:
        return self.steps[h].covariates

    def to_dict(self) -> dict:
        return {
            "schema": "linpo.warmup",
            "version": 1,
            "config": self.config.__dict__,
            "steps": [
                {
                    "h": r.h,
                    "transitions": r.transitions.tolist(),
                    "losses": r.losses.tolist(),
                    "covariance": r.covariates.matrix.tolist(),
                    "status": r.status,
                    "achieved": r.achieved,
                    "episodes": r.episodes,
                    "levels": r.levels,
                }
                for r in self.steps
            ],
        }

    @classmethod
    def from_dict(cls, obj: dict, mdp: LinearMdpInstance) -> "WarmupArtifacts":
        if obj.get("schema") != "linpo.warmup":
            raise ValueError("not a warmup bundle")
        cfg = WarmupConfig(**obj["config"])
        steps = []
        for st in obj["steps"]:
            tr = np.asarray(st["transitions"], dtype=np.int64).reshape(-1, 3)
            acc = CovarianceAccumulator(mdp.feature_dim)
            for s, a, _ in tr:
                acc.rank_one_update(mdp.features[s, a])
            steps.append(
                CoverResult(
                    st["h"],
                    tr,
                    np.asarray(st["losses"], dtype=np.float64),
                    acc,
                    st["status"],
                    st["achieved"],
                    st["episodes"],
                    st["levels"],
                )
            )
        return cls(steps, cfg)


def _plan(mdp, h, accs, sums, target_norms, gamma, cfg):
    """Backward pass for the coverage objective. Returns (actions (h+1, S), estimate)."""
    S, A = mdp.num_states, mdp.num_actions
    F = mdp.flat_features
    actions = np.zeros((h + 1, S), dtype=np.int64)
    unc = target_norms > gamma
    actions[h] = target_norms.argmax(axis=1)
    U = unc.any(axis=1).astype(np.float64)
    if not U.any():
        return actions, 0.0
    for t in range(h - 1, -1, -1):
        cap = U.max()
        if cfg.dynamics == "oracle":
            Q = mdp.transitions[t] @ U
        else:
            w = accs[t].solve(sums[t] @ U)
            Q = (F @ w).reshape(S, A)
            Q += cfg.explore_bonus * weighted_norm(accs[t], F).reshape(S, A)
        Q = np.clip(Q, 0.0, cap)
        actions[t] = Q.argmax(axis=1)
        U = Q.max(axis=1)
    return actions, float(U[mdp.initial_state])


def cover_step(mdp: LinearMdpInstance, losses: LossModel, h: int, cfg: WarmupConfig, seed: int) -> CoverResult:
    """Collect step-``h`` coverage data in an independent exploration run."""
    d, S, A, H = mdp.feature_dim, mdp.num_states, mdp.num_actions, mdp.horizon
    gamma = cfg.gamma(H)
    accs = [CovarianceAccumulator(d) for _ in range(h + 1)]
    sums = [np.zeros((d, S)) for _ in range(h)]
    targets = cfg.level_targets()
    transitions: list = []
    realized: list = []
    if not targets:
        return CoverResult(h, np.zeros((0, 3), np.int64), np.zeros(0), accs[h], "ok", 1.0, 0, [])

    F = mdp.flat_features
    level, level_start, level_hits = 0, 0, 0
    levels = []
    status = "budget_exhausted"
    estimate = 1.0
    actions = None
    ep = 0
    while True:
        target_norms = weighted_norm(accs[h], F).reshape(S, A)
        if actions is None or ep % cfg.replan_every == 0 or not (target_norms > gamma).any():
            actions, estimate = _plan(mdp, h, accs, sums, target_norms, gamma, cfg)
        while level < len(targets) and estimate <= targets[level]:
            levels.append(
                {
                    "level": level + 1,
                    "target": targets[level],
                    "episodes": ep - level_start,
                    "uncovered_fraction": level_hits / max(ep - level_start, 1),
                }
            )
            level, level_start, level_hits = level + 1, ep, 0
        if level == len(targets):
            status = "ok"
            break
        if ep >= cfg.episode_budget:
            break
        rng = episode_rng(seed, WARMUP_STREAM, h * 1_000_003 + ep)
        s = mdp.initial_state
        for t in range(h + 1):
            a = int(actions[t, s])
            loss, nxt, _ = step(mdp, losses, 0, t, s, a, rng)
            phi = mdp.features[s, a]
            if t < h:
                accs[t].rank_one_update(phi)
                sums[t][:, nxt] += phi
            else:
                level_hits += int(target_norms[s, a] > gamma)
                accs[h].rank_one_update(phi)
                transitions.append((s, a, nxt))
                realized.append(loss if losses.mode == STOCHASTIC else 0.0)
            s = nxt
        ep += 1
    if status != "ok":
        log.warning("warmup step %d: budget exhausted with coverage estimate %.4f", h, estimate)
    tr = np.asarray(transitions, dtype=np.int64).reshape(-1, 3)
    return CoverResult(h, tr, np.asarray(realized), accs[h], status, estimate, ep, levels)


def reward_free_warmup(mdp: LinearMdpInstance, losses: LossModel, cfg: WarmupConfig, seed: int) -> WarmupArtifacts:
    """Run ``cover_step`` independently for every step, last step first."""
    results = [None] * mdp.horizon
    for h in range(mdp.horizon - 1, -1, -1):
        results[h] = cover_step(mdp, losses, h, cfg, seed)
    return WarmupArtifacts(results, cfg)


class KnownSetOracle:
    """Membership in the known sets ``Z_h`` defined by warmup covariates."""

    def __init__(self, mdp: LinearMdpInstance, covariates, beta: float):
        self.mdp = mdp
        self.covariates = list(covariates)
        self.beta = beta
        self.threshold = 1.0 / (2.0 * beta * mdp.horizon)
        self._mask = lru_cache(maxsize=None)(self._compute_mask)

    @classmethod
    def from_warmup(cls, mdp, artifacts: WarmupArtifacts, beta=None):
        beta = artifacts.config.beta if beta is None else beta
        return cls(mdp, [r.covariates for r in artifacts.steps], beta)

    def _compute_mask(self, h: int) -> np.ndarray:
        if h >= self.mdp.horizon:
            # the terminal step is trivially known
            return np.ones(self.mdp.num_states, dtype=bool)
        norms = weighted_norm(self.covariates[h], self.mdp.features)
        out = (norms <= self.threshold).all(axis=1)
        out.setflags(write=False)
        return out

    def mask(self, h: int) -> np.ndarray:
        return self._mask(h)

    def member(self, h: int, s: int) -> bool:
        return bool(self._mask(h)[s])


def known_set_membership(oracle: KnownSetOracle, h: int, s: int) -> bool:
    return oracle.member(h, s)


@dataclass
class CoverageProbe:
    probe_max: np.ndarray  # (H,) max over random + optimal policies
    worst_case: np.ndarray  # (H,) exact max over all policies
    optimal: np.ndarray  # (H,) unknown mass of the loss-optimal policy


def coverage_probe(
    mdp: LinearMdpInstance,
    losses: LossModel,
    oracle: KnownSetOracle,
    policy_sample_size: int = 200,
    rng=None,
) -> CoverageProbe:
    """Exact unknown-state mass ``Pr(s_h not in Z_h)`` under probe policies."""
    rng = np.random.default_rng(0) if rng is None else rng
    H, S, A = mdp.horizon, mdp.num_states, mdp.num_actions
    P = mdp.transitions
    unknown = np.stack([~oracle.mask(h) for h in range(H)]).astype(np.float64)

    def mass(pi):
        marg = occupancy_table(P, pi, mdp.initial_state).sum(axis=-1)
        return (marg * unknown).sum(axis=1)

    star, _ = optimal_policy(mdp, losses.mean_vectors())
    opt = mass(star)
    best = opt.copy()
    for i in range(policy_sample_size):
        pi = random_policy(H, S, A, rng, deterministic=bool(i % 2))
        best = np.maximum(best, mass(pi))
    worst = np.array(
        [max_reach_probability(P, mdp.initial_state, h, unknown[h]) for h in range(H)]
    )
    return CoverageProbe(best, worst, opt)
