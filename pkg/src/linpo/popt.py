"""Optimistic policy optimization with restricted value estimates.

Each main-phase episode rolls out the current softmax policy, then runs a
backward pass over steps: ridge regression of the restricted next-step value,
loss estimation, epoch-frozen bonuses, restricted Q/V construction. The
policy is then updated by an entropy mirror-descent step, stored compactly as
one linear weight per step plus one coefficient per bonus epoch.
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field, replace
from typing import Optional

import numpy as np

from .covstate import (
    EpochSnapshot,
    epoch_bound,
    potential_bound,
    should_refresh_epoch,
    weighted_norm,
)
from .envmodel import ADVERSARIAL, STOCHASTIC, LinearMdpInstance, LossModel, episode_rng, rollout
from .warmup import KnownSetOracle, WarmupArtifacts, WarmupConfig

log = logging.getLogger(__name__)

MAIN_STREAM = 2


def theory_beta(d: int, H: int, K: int, delta: float, c_beta: float = 1.0) -> float:
    return 2.0 * c_beta * d**1.5 * H * math.log(d * H * K / delta)


def practical_beta(d: int, H: int, K: int, delta: float) -> float:
    return 0.5 * math.sqrt(d)


def theory_eps_cov(d: int, H: int, K: int, delta: float) -> float:
    return min(1.0, H**1.5 * d**2 * math.log(d * H * K / delta) ** 4 / math.sqrt(K))


def default_eta(A: int, H: int, K: int) -> float:
    return math.sqrt(math.log(A)) / (H * math.sqrt(K)) if A > 1 else 1.0 / (H * math.sqrt(K))


def restricted_bound(H: int, h: int) -> float:
    """Bound on ``|Q_restricted|`` at 0-indexed step ``h``."""
    return (H - h) * (1.0 + 2.0 / H)


@dataclass(frozen=True)
class RunConfig:
    K: int
    eta: Optional[float] = None
    beta: Optional[float] = None
    eps_cov: Optional[float] = None
    delta: float = 0.1
    seed: int = 0
    theory_mode: bool = False
    warmup_budget: int = 2000
    warmup_dynamics: str = "learned"
    use_warmup_losses: bool = True

    def resolve(self, mdp: LinearMdpInstance) -> "RunConfig":
        """Fill unset parameters from the recipe (theory or practical scale)."""
        d, H, A = mdp.feature_dim, mdp.horizon, mdp.num_actions
        K = max(self.K, 2)
        beta = self.beta
        if beta is None:
            beta = (theory_beta if self.theory_mode else practical_beta)(d, H, K, self.delta)
        eps = self.eps_cov
        if eps is None:
            eps = theory_eps_cov(d, H, K, self.delta) if self.theory_mode else 0.05
        eta = self.eta if self.eta is not None else default_eta(A, H, K)
        if eta < 0 or beta <= 0:
            raise ValueError("eta must be >= 0 and beta > 0")
        return replace(self, eta=eta, beta=beta, eps_cov=eps)

    def warmup_config(self, mdp: LinearMdpInstance) -> WarmupConfig:
        r = self.resolve(mdp)
        return WarmupConfig(
            delta=r.delta,
            beta=r.beta,
            eps_cov=r.eps_cov,
            episode_budget=r.warmup_budget,
            dynamics=r.warmup_dynamics,
        )


def _softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


class SoftmaxPolicy:
    """Per-step logits ``phi^T theta_h + sum_j c_j ||phi||_{Lambda_hat_j^{-1}}``."""

    def __init__(self, features: np.ndarray, H: int):
        self.features = features
        self.H = H
        d = features.shape[-1]
        self.theta = np.zeros((H, d))
        self.snapshots: list[list[EpochSnapshot]] = [[] for _ in range(H)]
        self.coefs: list[list[float]] = [[] for _ in range(H)]
        self._norms: list[list[np.ndarray]] = [[] for _ in range(H)]

    def add_epoch(self, h: int, snap: EpochSnapshot) -> None:
        self.snapshots[h].append(snap)
        self.coefs[h].append(0.0)
        self._norms[h].append(weighted_norm(snap, self.features))

    def epoch_norms(self, h: int, j: int = -1) -> np.ndarray:
        """``||phi(s, a)||_{Lambda_hat^{-1}}`` table ``(S, A)`` for epoch ``j``."""
        return self._norms[h][j]

    def logits(self, h: int) -> np.ndarray:
        out = self.features @ self.theta[h]
        for c, n in zip(self.coefs[h], self._norms[h]):
            out = out + c * n
        return out

    def logits_at(self, h: int, phi) -> np.ndarray:
        phi = np.asarray(phi, dtype=np.float64)
        out = phi @ self.theta[h]
        for c, snap in zip(self.coefs[h], self.snapshots[h]):
            out = out + c * weighted_norm(snap, phi)
        return out

    def probs(self, h: int) -> np.ndarray:
        return _softmax(self.logits(h))

    def table(self) -> np.ndarray:
        return np.stack([self.probs(h) for h in range(self.H)])

    def improve(self, h: int, direction: np.ndarray, eta: float, beta: float) -> None:
        """Mirror-descent step with ``Q = phi^T direction - beta * bonus``."""
        self.theta[h] -= eta * direction
        if self.coefs[h]:
            self.coefs[h][-1] += eta * beta

    @property
    def num_bonus_terms(self) -> list[int]:
        return [len(c) for c in self.coefs]


@dataclass
class QEstimate:
    """Fields reproducing ``Q(s, a) = phi^T (g_hat + v_hat) - beta * bonus``."""

    g_hat: np.ndarray
    v_hat: np.ndarray
    epoch: int
    beta: float

    def q(self, phi, snapshot: EpochSnapshot) -> np.ndarray:
        return np.asarray(phi) @ (self.g_hat + self.v_hat) - self.beta * weighted_norm(snapshot, phi)


def build_q(s: int, a: int, mdp: LinearMdpInstance, est: QEstimate, snapshot: EpochSnapshot) -> float:
    return float(est.q(mdp.features[s, a], snapshot))


def restricted_q(s, a, mdp, est, snapshot, known: bool) -> float:
    return build_q(s, a, mdp, est, snapshot) if known else 0.0


def restricted_v(s, mdp, est, snapshot, policy_row: np.ndarray, known: bool) -> float:
    if not known:
        return 0.0
    q = est.q(mdp.features[s], snapshot)
    return float(q @ policy_row)


def regress_value(features: np.ndarray, next_states: np.ndarray, acc, v_next: np.ndarray) -> np.ndarray:
    """Ridge solution ``Lambda^{-1} sum_i phi_i V(s'_i)`` from raw transitions."""
    b = features.T @ v_next[next_states] if len(next_states) else np.zeros(acc.d)
    return acc.solve(b)


def estimate_loss(feedback, mode: str, acc=None, loss_sum=None) -> np.ndarray:
    """Full information: the revealed vector. Bandit: ridge regression of
    realized losses given their feature-weighted sum."""
    if mode == ADVERSARIAL:
        fb = np.asarray(feedback)
        if fb.ndim != 1:
            raise ValueError("full-information feedback must be a loss vector")
        return fb
    if mode == STOCHASTIC:
        if acc is None or loss_sum is None:
            raise ValueError("bandit feedback requires covariates and the loss sum")
        return acc.solve(loss_sum)
    raise ValueError(f"unknown mode {mode!r}")


@dataclass
class RunRecord:
    config: RunConfig
    num_episodes: int
    features: np.ndarray = field(repr=False)
    theta: np.ndarray = field(repr=False)  # (K+1, H, d): theta before episode k
    coefs: list = field(repr=False)  # per h: (K+1, J_h)
    epoch_norms: list = field(repr=False)  # per h: (J_h, S, A)
    epoch_episodes: list = field(repr=False)  # per h: episode each epoch began
    g_hat: np.ndarray = field(repr=False)  # (K, H, d)
    v_hat: np.ndarray = field(repr=False)
    epoch_of: np.ndarray = field(repr=False)  # (K, H)
    states: np.ndarray = field(repr=False)  # (K, H)
    actions: np.ndarray = field(repr=False)
    losses: np.ndarray = field(repr=False)
    next_states: np.ndarray = field(repr=False)
    visited_norm: np.ndarray = field(repr=False)  # ||phi||_{Lambda^{-1}} pre-update
    visited_bonus: np.ndarray = field(repr=False)
    visited_known: np.ndarray = field(repr=False)
    restricted_excess: np.ndarray = field(repr=False)  # max(|Q_restr| - C_h) at visited known
    epochs_triggered: np.ndarray = field(repr=False)
    diagnostics: dict = field(default_factory=dict)
    metadata: dict = field(default_factory=dict)

    def policy_table(self, k: int) -> np.ndarray:
        """Action probabilities ``(H, S, A)`` of the policy played in episode ``k``
        (``k == num_episodes`` gives the final policy)."""
        H = self.theta.shape[1]
        out = []
        for h in range(H):
            logits = self.features @ self.theta[k, h]
            c = self.coefs[h][k]
            if len(c):
                logits = logits + np.tensordot(c, self.epoch_norms[h], axes=1)
            out.append(_softmax(logits))
        return np.stack(out)

    def bonus_tables(self, k: int) -> np.ndarray:
        beta = self.config.beta
        return np.stack(
            [beta * self.epoch_norms[h][self.epoch_of[k, h]] for h in range(self.theta.shape[1])]
        )

    def q_tables(self, k: int) -> np.ndarray:
        """Unrestricted optimistic Q estimates ``(H, S, A)`` of episode ``k``."""
        lin = np.einsum("sad,hd->hsa", self.features, self.g_hat[k] + self.v_hat[k])
        return lin - self.bonus_tables(k)

    def estimate(self, k: int, h: int) -> QEstimate:
        return QEstimate(self.g_hat[k, h], self.v_hat[k, h], int(self.epoch_of[k, h]), self.config.beta)


def run(
    mdp: LinearMdpInstance,
    losses: LossModel,
    warmup: WarmupArtifacts,
    cfg: RunConfig,
) -> RunRecord:
    """Main phase of optimistic policy optimization for ``cfg.K`` episodes."""
    cfg = cfg.resolve(mdp)
    H, S, A, d = mdp.horizon, mdp.num_states, mdp.num_actions, mdp.feature_dim
    K = cfg.K
    if losses.mode == ADVERSARIAL and losses.num_episodes < K:
        raise ValueError("adversarial loss sequence shorter than K")
    F = mdp.features
    beta, eta = cfg.beta, cfg.eta
    oracle = KnownSetOracle.from_warmup(mdp, warmup, beta)
    known = np.stack([oracle.mask(h) for h in range(H)])

    accs = [warmup.steps[h].covariates.copy() for h in range(H)]
    start_potential = [acc.potential for acc in accs]
    # next-state-grouped feature sums: sum_i phi_i V(s'_i) == next_sums @ V
    next_sums = np.zeros((H, d, S + 1))
    loss_sums = np.zeros((H, d))
    for h, res in enumerate(warmup.steps):
        for (s, a, nxt), l in zip(res.transitions, res.losses):
            next_sums[h, :, nxt] += F[s, a]
            if cfg.use_warmup_losses:
                loss_sums[h] += F[s, a] * l

    policy = SoftmaxPolicy(F, H)
    current: list[Optional[EpochSnapshot]] = [None] * H
    refreshes = [0] * H

    theta_hist = np.zeros((K + 1, H, d))
    coef_hist: list[list[list[float]]] = [[] for _ in range(H)]
    g_hat = np.zeros((K, H, d))
    v_hat = np.zeros((K, H, d))
    epoch_of = np.zeros((K, H), dtype=np.int64)
    states = np.zeros((K, H), dtype=np.int64)
    actions = np.zeros((K, H), dtype=np.int64)
    realized = np.zeros((K, H))
    nexts = np.zeros((K, H), dtype=np.int64)
    vnorm = np.zeros((K, H))
    vbonus = np.zeros((K, H))
    vknown = np.zeros((K, H), dtype=bool)
    rexcess = np.full((K, H), -np.inf)
    triggered = np.zeros(K, dtype=np.int64)
    main_potential = np.zeros(H)

    for k in range(K):
        theta_hist[k] = policy.theta
        for h in range(H):
            coef_hist[h].append(list(policy.coefs[h]))
        pi = policy.table()
        traj = rollout(mdp, losses, pi, k, episode_rng(cfg.seed, MAIN_STREAM, k))
        states[k], actions[k], realized[k], nexts[k] = (
            traj.states, traj.actions, traj.losses, traj.next_states,
        )

        v_next = np.zeros(S + 1)
        for h in range(H - 1, -1, -1):
            acc = accs[h]
            if should_refresh_epoch(acc, current[h]):
                if current[h] is not None:
                    refreshes[h] += 1
                snap = acc.snapshot(len(policy.snapshots[h]), k)
                current[h] = snap
                policy.add_epoch(h, snap)
                triggered[k] += 1
            j = len(policy.snapshots[h]) - 1
            epoch_of[k, h] = j
            v = acc.solve(next_sums[h] @ v_next)
            if losses.mode == ADVERSARIAL:
                g = estimate_loss(traj.feedback[h], ADVERSARIAL)
            else:
                g = estimate_loss(None, STOCHASTIC, acc, loss_sums[h])
            v_hat[k, h], g_hat[k, h] = v, g
            bonus = beta * policy.epoch_norms(h, j)
            q = F @ (g + v) - bonus
            qr = q * known[h][:, None]
            s, a = traj.states[h], traj.actions[h]
            vbonus[k, h] = bonus[s, a]
            vknown[k, h] = known[h, s]
            if known[h, s]:
                rexcess[k, h] = np.abs(qr[s]).max() - restricted_bound(H, h)
            v_next = np.append(np.einsum("sa,sa->s", qr, pi[h]), 0.0)

        for h in range(H):
            s, a, nxt = traj.states[h], traj.actions[h], traj.next_states[h]
            phi = F[s, a]
            norm = accs[h].rank_one_update(phi)
            vnorm[k, h] = norm
            main_potential[h] += norm**2
            next_sums[h, :, nxt] += phi
            if losses.mode == STOCHASTIC:
                loss_sums[h] += phi * traj.losses[h]
            policy.improve(h, g_hat[k, h] + v_hat[k, h], eta, beta)

    theta_hist[K] = policy.theta
    for h in range(H):
        coef_hist[h].append(list(policy.coefs[h]))

    coefs = []
    for h in range(H):
        J = len(policy.coefs[h])
        arr = np.zeros((K + 1, J))
        for k, row in enumerate(coef_hist[h]):
            arr[k, : len(row)] = row
        coefs.append(arr)

    diagnostics = _invariants(
        d, H, K, accs, refreshes, policy, start_potential, main_potential, vnorm, rexcess
    )
    if not diagnostics["restricted_bound_ok"]:
        log.info("restricted Q bound exceeded at some visited known state; beta may be mis-tuned")
    meta = {
        "warmup_episodes": warmup.episodes_used,
        "warmup_warnings": warmup.warnings,
        "mode": losses.mode,
        "known_sizes": [int(m.sum()) for m in known],
    }
    return RunRecord(
        cfg, K, F, theta_hist, coefs,
        [np.stack(policy._norms[h]) if policy._norms[h] else np.zeros((0, S, A)) for h in range(H)],
        [[s.episode for s in policy.snapshots[h]] for h in range(H)],
        g_hat, v_hat, epoch_of, states, actions, realized, nexts,
        vnorm, vbonus, vknown, rexcess, triggered, diagnostics, meta,
    )


def _invariants(d, H, K, accs, refreshes, policy, start_potential, main_potential, vnorm, rexcess):
    n = [acc.n_updates for acc in accs]
    ebound = [float(epoch_bound(d, x)) for x in n]
    pot = [acc.potential for acc in accs]
    pbound = [float(potential_bound(d, x)) for x in n]
    bias_sum = float(vnorm.sum())
    bias_bound = 2.0 * H * math.sqrt(K * d * math.log(K)) if K >= 2 else math.inf
    terms_bound = 2 * d * math.log(K) + 1 if K >= 2 else math.inf
    return {
        "epoch_refreshes": refreshes,
        "epoch_bound": ebound,
        "epoch_bound_ok": all(r <= b for r, b in zip(refreshes, ebound)),
        "bonus_terms": policy.num_bonus_terms,
        "bonus_terms_bound": terms_bound,
        "bonus_terms_ok": all(j <= terms_bound for j in policy.num_bonus_terms),
        "potential": pot,
        "potential_main": main_potential.tolist(),
        "potential_bound": pbound,
        "potential_ok": all(p <= b + 1e-9 for p, b in zip(pot, pbound)),
        "bias_sum": bias_sum,
        "bias_bound": bias_bound,
        "bias_ok": bias_sum <= bias_bound,
        "restricted_bound_ok": bool(np.all(rexcess <= 1e-12)),
        "restricted_violation_fraction": float(np.mean(rexcess > 1e-12)) if rexcess.size else 0.0,
    }


def run_with_warmup(mdp: LinearMdpInstance, losses: LossModel, cfg: RunConfig):
    """Warmup followed by the main phase. Returns ``(warmup, record)``."""
    from .warmup import reward_free_warmup

    warm = reward_free_warmup(mdp, losses, cfg.warmup_config(mdp), cfg.seed)
    return warm, run(mdp, losses, warm, cfg)


_ARRAY_FIELDS = (
    "theta", "g_hat", "v_hat", "epoch_of", "states", "actions", "losses", "next_states",
    "visited_norm", "visited_bonus", "visited_known", "restricted_excess", "epochs_triggered",
)


def _jsonable(x):
    if isinstance(x, np.ndarray):
        return x.tolist()
    if isinstance(x, (np.floating, np.integer, np.bool_)):
        return x.item()
    if isinstance(x, dict):
        return {k: _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    return x


def record_to_dict(rec: RunRecord) -> dict:
    """JSON-ready bundle. Floats go through ``repr`` and round-trip exactly;
    ``-inf`` entries of ``restricted_excess`` become ``null``."""
    out = {
        "schema": "linpo.run",
        "version": 1,
        "config": asdict(rec.config),
        "num_episodes": rec.num_episodes,
        "features": rec.features.tolist(),
        "coefs": [c.tolist() for c in rec.coefs],
        "epoch_norms": [n.tolist() for n in rec.epoch_norms],
        "epoch_episodes": rec.epoch_episodes,
        "diagnostics": _jsonable(rec.diagnostics),
        "metadata": _jsonable(rec.metadata),
    }
    for name in _ARRAY_FIELDS:
        arr = getattr(rec, name)
        if name == "restricted_excess":
            arr = np.where(np.isfinite(arr), arr, np.nan)
            out[name] = [[None if np.isnan(v) else float(v) for v in row] for row in arr]
        else:
            out[name] = arr.tolist()
    return out


def record_from_dict(obj: dict) -> RunRecord:
    if obj.get("schema") != "linpo.run":
        raise ValueError("not a run bundle")
    kw = {name: np.asarray(obj[name]) for name in _ARRAY_FIELDS if name != "restricted_excess"}
    kw["restricted_excess"] = np.array(
        [[-np.inf if v is None else v for v in row] for row in obj["restricted_excess"]]
    ).reshape(kw["states"].shape)
    for name in ("theta", "g_hat", "v_hat", "losses", "visited_norm", "visited_bonus"):
        kw[name] = kw[name].astype(np.float64)
    kw["visited_known"] = kw["visited_known"].astype(bool)
    return RunRecord(
        config=RunConfig(**obj["config"]),
        num_episodes=obj["num_episodes"],
        features=np.asarray(obj["features"], dtype=np.float64),
        coefs=[np.asarray(c, dtype=np.float64).reshape(obj["num_episodes"] + 1, -1) for c in obj["coefs"]],
        epoch_norms=[np.asarray(n, dtype=np.float64) for n in obj["epoch_norms"]],
        epoch_episodes=obj["epoch_episodes"],
        diagnostics=obj["diagnostics"],
        metadata=obj["metadata"],
        **kw,
    )
