"""Exact finite-instance evaluation: values, occupancies, comparators, regret.

Policies are tabular arrays ``(H, S, A)`` of action probabilities. Loss
arguments are ``(H, d)`` vectors unless a name says ``table``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import product

import numpy as np

from .envmodel import ADVERSARIAL, LinearMdpInstance, LossModel


@dataclass
class ValueTables:
    V: np.ndarray  # (H+1, S)
    Q: np.ndarray  # (H, S, A)

    def initial_value(self, s1: int) -> float:
        return float(self.V[0, s1])


@dataclass
class OccupancyTable:
    mu: np.ndarray  # (H, S, A)

    @property
    def state_marginals(self) -> np.ndarray:
        return self.mu.sum(axis=-1)


def evaluate_table(P: np.ndarray, loss_table: np.ndarray, policy: np.ndarray) -> ValueTables:
    H, S, A = loss_table.shape
    V = np.zeros((H + 1, S))
    Q = np.empty((H, S, A))
    for h in range(H - 1, -1, -1):
        Q[h] = loss_table[h]
        if h < H - 1:
            Q[h] += P[h] @ V[h + 1]
        V[h] = np.einsum("sa,sa->s", policy[h], Q[h])
    return ValueTables(V, Q)


def policy_value(mdp: LinearMdpInstance, policy: np.ndarray, g: np.ndarray) -> ValueTables:
    return evaluate_table(mdp.transitions, mdp.loss_table(g), policy)


def greedy_from_table(P: np.ndarray, loss_table: np.ndarray) -> tuple[np.ndarray, ValueTables]:
    H, S, A = loss_table.shape
    V = np.zeros((H + 1, S))
    Q = np.empty((H, S, A))
    policy = np.zeros((H, S, A))
    for h in range(H - 1, -1, -1):
        Q[h] = loss_table[h]
        if h < H - 1:
            Q[h] += P[h] @ V[h + 1]
        # argmin returns the lowest index among ties
        best = Q[h].argmin(axis=1)
        policy[h, np.arange(S), best] = 1.0
        V[h] = Q[h][np.arange(S), best]
    return policy, ValueTables(V, Q)


def optimal_policy(mdp: LinearMdpInstance, g: np.ndarray) -> tuple[np.ndarray, ValueTables]:
    """Deterministic loss-minimizing policy; ties go to the lowest action id."""
    return greedy_from_table(mdp.transitions, mdp.loss_table(g))


def best_in_hindsight(mdp: LinearMdpInstance, g_seq: np.ndarray) -> np.ndarray:
    """Minimizer of cumulative value over a loss sequence ``(K, H, d)``.

    Values are affine in the loss under shared dynamics, so this is the
    optimal policy for the mean loss.
    """
    policy, _ = optimal_policy(mdp, np.asarray(g_seq).mean(axis=0))
    return policy


def comparator(mdp: LinearMdpInstance, losses: LossModel) -> np.ndarray:
    if losses.mode == ADVERSARIAL:
        return best_in_hindsight(mdp, losses.g)
    return optimal_policy(mdp, losses.g)[0]


def occupancy(mdp: LinearMdpInstance, policy: np.ndarray) -> OccupancyTable:
    return OccupancyTable(occupancy_table(mdp.transitions, policy, mdp.initial_state))


def occupancy_table(P: np.ndarray, policy: np.ndarray, s1: int) -> np.ndarray:
    H, S, A = policy.shape
    mu = np.zeros((H, S, A))
    d = np.zeros(S)
    d[s1] = 1.0
    for h in range(H):
        mu[h] = d[:, None] * policy[h]
        if h < H - 1:
            d = np.einsum("sa,sat->t", mu[h], P[h])
    return mu


def deterministic_policies(H: int, S: int, A: int):
    """Yield every deterministic policy as an ``(H, S, A)`` array."""
    eye = np.eye(A)
    for choice in product(range(A), repeat=H * S):
        yield eye[np.array(choice).reshape(H, S)]


def uniform_policy(H: int, S: int, A: int) -> np.ndarray:
    return np.full((H, S, A), 1.0 / A)


def random_policy(H: int, S: int, A: int, rng, deterministic: bool = False) -> np.ndarray:
    if deterministic:
        return np.eye(A)[rng.integers(A, size=(H, S))]
    return rng.dirichlet(np.ones(A), size=(H, S))


def max_reach_probability(P: np.ndarray, s1: int, h: int, target: np.ndarray) -> float:
    """``max_pi Pr(s_h in target)`` by backward DP over deterministic policies."""
    U = target.astype(np.float64)
    for t in range(h - 1, -1, -1):
        U = (P[t] @ U).max(axis=1)
    return float(U[s1])


# --------------------------------------------------------------------------
# regret


@dataclass
class RegretSeries:
    agent_values: np.ndarray
    comparator_values: np.ndarray
    comparator_policy: np.ndarray = field(repr=False)

    @property
    def instant(self) -> np.ndarray:
        return self.agent_values - self.comparator_values

    @property
    def cumulative(self) -> np.ndarray:
        return np.cumsum(self.instant)

    @property
    def total(self) -> float:
        return float(self.instant.sum())


def policy_sequence_values(mdp: LinearMdpInstance, losses: LossModel, policies) -> np.ndarray:
    P = mdp.transitions
    tables = mdp.loss_table(losses.g)
    out = np.empty(len(policies))
    for k, pi in enumerate(policies):
        t = tables[k] if losses.mode == ADVERSARIAL else tables
        out[k] = evaluate_table(P, t, pi).V[0, mdp.initial_state]
    return out


def regret_series(run, mdp: LinearMdpInstance, losses: LossModel) -> RegretSeries:
    """Pseudo-regret of a run's main-phase policies against the comparator."""
    policies = [run.policy_table(k) for k in range(run.num_episodes)]
    agent = policy_sequence_values(mdp, losses, policies)
    star = comparator(mdp, losses)
    comp = policy_sequence_values(mdp, losses, [star] * run.num_episodes)
    return RegretSeries(agent, comp, star)


def fixed_policy_regret(mdp: LinearMdpInstance, losses: LossModel, policy: np.ndarray, K: int) -> float:
    """Cumulative regret of playing one policy for ``K`` episodes."""
    star = comparator(mdp, losses)
    tables = mdp.loss_table(losses.g)
    if losses.mode == ADVERSARIAL:
        mean = tables[:K].mean(axis=0)
    else:
        mean = tables
    P = mdp.transitions
    s1 = mdp.initial_state
    return K * (evaluate_table(P, mean, policy).V[0, s1] - evaluate_table(P, mean, star).V[0, s1])


# --------------------------------------------------------------------------
# regret decomposition


@dataclass
class DecompositionDiag:
    """Per-(episode, step) terms of the value-difference decomposition.

    Terms are expectations restricted to the known set, ``E[X 1{s in Z_h}]``.
    ``offknown`` collects the remainder on unknown states so that
    ``regret == bias + omd + optimism + offknown`` holds exactly.
    """

    bias: np.ndarray  # (K, H)
    omd: np.ndarray
    optimism: np.ndarray
    offknown: np.ndarray
    delta_agent: np.ndarray  # E_{mu^k}[Delta 1{known}]
    regret: np.ndarray  # (K,)
    unknown_mass_agent: np.ndarray  # (K, H)
    unknown_mass_comparator: np.ndarray  # (K, H)
    checks: dict
    eps_cov: float
    horizon: int

    @property
    def slack(self) -> float:
        return 4.0 * self.eps_cov * self.horizon**2 * len(self.regret)

    @property
    def total_regret(self) -> float:
        return float(self.regret.sum())

    @property
    def bound(self) -> float:
        return float(self.bias.sum() + self.omd.sum() + self.optimism.sum() + self.slack)

    @property
    def identity_gap(self) -> float:
        lhs = self.regret.sum()
        rhs = self.bias.sum() + self.omd.sum() + self.optimism.sum() + self.offknown.sum()
        return float(abs(lhs - rhs))

    @property
    def good_event(self) -> bool:
        return all(bool(np.all(v)) for v in self.checks.values())

    @property
    def holds(self) -> bool:
        return self.total_regret <= self.bound + 1e-9

    def to_dict(self) -> dict:
        return {
            "total_regret": self.total_regret,
            "bias": float(self.bias.sum()),
            "omd": float(self.omd.sum()),
            "optimism": float(self.optimism.sum()),
            "offknown": float(self.offknown.sum()),
            "slack": self.slack,
            "bound": self.bound,
            "holds": self.holds,
            "good_event": self.good_event,
            "identity_gap": self.identity_gap,
            "checks": {k: float(np.mean(v)) for k, v in self.checks.items()},
        }


def decomposition_diag(run, mdp: LinearMdpInstance, losses: LossModel, oracle, eps_cov=None) -> DecompositionDiag:
    """Evaluate the Bias / OMD / Optimism terms exactly for a recorded run.

    The per-episode good-event checks are: unknown-state mass at most
    ``eps_cov`` under both the agent and comparator occupancies, restricted
    Q estimates bounded by ``2H``, and the unrestricted target
    ``l + P V_next`` bounded by ``2H`` on unknown states.
    """
    H, S, A = mdp.horizon, mdp.num_states, mdp.num_actions
    K = run.num_episodes
    eps = run.config.eps_cov if eps_cov is None else eps_cov
    P = mdp.transitions
    s1 = mdp.initial_state
    loss_tables = mdp.loss_table(losses.g)
    star = comparator(mdp, losses)
    mu_star = occupancy_table(P, star, s1)
    known = np.stack([oracle.mask(h) for h in range(H)]).astype(np.float64)  # (H, S)

    bias = np.zeros((K, H))
    omd = np.zeros((K, H))
    optim = np.zeros((K, H))
    offk = np.zeros((K, H))
    delta_agent = np.zeros((K, H))
    regret = np.zeros(K)
    mass_k = np.zeros((K, H))
    mass_star = np.zeros((K, H))
    qbd = np.ones(K, dtype=bool)
    offbd = np.ones(K, dtype=bool)
    for k in range(K):
        pi = run.policy_table(k)
        ell = loss_tables[k] if losses.mode == ADVERSARIAL else loss_tables
        mu_k = occupancy_table(P, pi, s1)
        regret[k] = (
            evaluate_table(P, ell, pi).V[0, s1] - evaluate_table(P, ell, star).V[0, s1]
        )
        q_tilde = run.q_tables(k)  # (H, S, A) unrestricted
        bonus = run.bonus_tables(k)  # (H, S, A)
        v_next = np.zeros(S)
        for h in range(H - 1, -1, -1):
            qr = q_tilde[h] * known[h][:, None]
            target = ell[h] + (P[h] @ v_next if h < H - 1 else 0.0)
            # Delta = (l_hat - l) + (P_hat - P) V_next = (q_tilde + bonus) - target
            delta = q_tilde[h] + bonus[h] - target
            kn = known[h][:, None]
            bias[k, h] = np.sum(mu_k[h] * (-delta + bonus[h]) * kn)
            delta_agent[k, h] = np.sum(mu_k[h] * delta * kn)
            optim[k, h] = np.sum(mu_star[h] * (delta - bonus[h]) * kn)
            gap = np.einsum("sa,sa->s", q_tilde[h], pi[h] - star[h])
            omd[k, h] = np.sum(mu_star[h].sum(axis=1) * gap * known[h])
            unk = 1.0 - kn
            offk[k, h] = np.sum(mu_k[h] * target * unk) - np.sum(mu_star[h] * target * unk)
            mass_k[k, h] = np.sum(mu_k[h] * unk)
            mass_star[k, h] = np.sum(mu_star[h] * unk)
            if np.abs(qr).max() > 2 * H:
                qbd[k] = False
            if (known[h] == 0).any() and np.abs(target[known[h] == 0]).max() > 2 * H:
                offbd[k] = False
            v_next = np.einsum("sa,sa->s", qr, pi[h])
    checks = {
        "rfw_agent": (mass_k <= eps + 1e-12).all(axis=1),
        "rfw_comparator": (mass_star <= eps + 1e-12).all(axis=1),
        "qbd": qbd,
        "offknown_bounded": offbd,
    }
    return DecompositionDiag(
        bias, omd, optim, offk, delta_agent, regret, mass_k, mass_star, checks, eps, H
    )


def omd_regret_check(q_seq: np.ndarray, p_seq: np.ndarray, eta: float) -> tuple[float, float]:
    """Regret of a probability sequence against the best fixed action,
    with the entropy-OMD bound ``log A / eta + eta * sum_t <x_t, y_t^2>``.

    ``q_seq`` and ``p_seq`` are ``(T, A)``. Returns ``(regret, bound)``.
    """
    A = q_seq.shape[1]
    total = q_seq.sum(axis=0)
    regret = float(np.sum(q_seq * p_seq) - total.min())
    bound = float(np.log(A) / eta + eta * np.sum(p_seq * q_seq**2))
    return regret, bound


def optimism_check(run, mdp: LinearMdpInstance, losses: LossModel, oracle, tol: float = 1e-12) -> np.ndarray:
    """For every visited ``(k, h)`` at a known state, whether
    ``Q_tilde(s, a) <= l(s, a) + P V_restricted_next(s, a)``.

    Returns a ``(K, H)`` array: 1 holds, 0 violated, -1 not applicable.
    """
    H, S = mdp.horizon, mdp.num_states
    P = mdp.transitions
    tables = mdp.loss_table(losses.g)
    known = np.stack([oracle.mask(h) for h in range(H)])
    out = np.full((run.num_episodes, H), -1, dtype=np.int8)
    for k in range(run.num_episodes):
        pi = run.policy_table(k)
        ell = tables[k] if losses.mode == ADVERSARIAL else tables
        q = run.q_tables(k)
        v_next = np.zeros(S)
        for h in range(H - 1, -1, -1):
            s, a = run.states[k, h], run.actions[k, h]
            if known[h, s]:
                target = ell[h, s, a] + (P[h, s, a] @ v_next if h < H - 1 else 0.0)
                out[k, h] = int(q[h, s, a] <= target + tol)
            v_next = np.einsum("sa,sa->s", q[h] * known[h][:, None], pi[h])
    return out
