"""Finite episodic linear MDPs: containers, generators, validation and simulation.

States are integers ``0..S-1``; the terminal state reached after step ``H`` is
the sentinel id ``S``. Steps are 0-indexed in code (``h = 0..H-1``).

Array conventions used throughout the package:

* ``features``: ``(S, A, d)``, the table of ``phi(s, a)``.
* ``psi``: ``(H-1, S, d)``, row ``psi[h, s']`` is the dynamics factor of
  step ``h``; ``P_h(s'|s, a) = phi(s, a) @ psi[h, s']``. Step ``H-1`` always
  moves to the terminal state, so it carries no factor.
* loss vectors ``g``: ``(H, d)`` (stochastic) or ``(K, H, d)`` (adversarial).
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from functools import cached_property
from itertools import product
from typing import Optional

import numpy as np

ADVERSARIAL = "adversarial_full_info"
STOCHASTIC = "stochastic_bandit"
SCHEMA_VERSION = 1
TOL = 1e-9


class StructureError(ValueError):
    """Raised when tables have inconsistent shapes."""


@dataclass(frozen=True, eq=False)
class LinearMdpInstance:
    features: np.ndarray
    psi: np.ndarray
    initial_state: int = 0

    def __post_init__(self):
        feats = np.asarray(self.features, dtype=np.float64)
        psi = np.asarray(self.psi, dtype=np.float64)
        if feats.ndim != 3:
            raise StructureError("features table must have shape (S, A, d)")
        if psi.ndim != 3:
            raise StructureError("psi tables must have shape (H-1, S, d)")
        if psi.shape[1:] != (feats.shape[0], feats.shape[2]):
            raise StructureError(
                f"psi tables have shape {psi.shape[1:]}, expected "
                f"{(feats.shape[0], feats.shape[2])} to match features"
            )
        if not 0 <= self.initial_state < feats.shape[0]:
            raise StructureError("initial_state out of range")
        feats.setflags(write=False)
        psi.setflags(write=False)
        object.__setattr__(self, "features", feats)
        object.__setattr__(self, "psi", psi)

    @property
    def num_states(self) -> int:
        return self.features.shape[0]

    @property
    def num_actions(self) -> int:
        return self.features.shape[1]

    @property
    def feature_dim(self) -> int:
        return self.features.shape[2]

    @property
    def horizon(self) -> int:
        return self.psi.shape[0] + 1

    @property
    def terminal_state(self) -> int:
        return self.num_states

    @property
    def flat_features(self) -> np.ndarray:
        """Features as an ``(S*A, d)`` matrix, row ``s*A + a``."""
        return self.features.reshape(-1, self.feature_dim)

    @cached_property
    def transitions(self) -> np.ndarray:
        """Exact transition tensor ``(H-1, S, A, S)``."""
        P = np.einsum("sad,htd->hsat", self.features, self.psi)
        P.setflags(write=False)
        return P

    @cached_property
    def _cumulative(self) -> np.ndarray:
        # clipped cumsum used for inverse-cdf sampling
        c = np.cumsum(np.clip(self.transitions, 0.0, None), axis=-1)
        c /= c[..., -1:]
        return c

    def loss_table(self, g: np.ndarray) -> np.ndarray:
        """Map loss vectors ``(..., H, d)`` to tables ``(..., H, S, A)``."""
        return np.einsum("sad,...hd->...hsa", self.features, g)

    def digest(self) -> str:
        h = hashlib.sha256()
        h.update(np.ascontiguousarray(self.features).tobytes())
        h.update(np.ascontiguousarray(self.psi).tobytes())
        h.update(str(self.initial_state).encode())
        return h.hexdigest()[:16]


@dataclass(frozen=True)
class NoiseSpec:
    """Zero-mean loss noise, truncated so realized losses stay in [-1, 1].

    ``kind`` is ``"none"``, ``"uniform"`` (uniform on ``[-w, w]``) or
    ``"rademacher"`` (``+-w``), with ``w = min(scale, 1 - |mean|)``.
    """

    kind: str = "uniform"
    scale: float = 0.5

    def sample(self, mean: float, rng: np.random.Generator) -> float:
        if self.kind == "none" or self.scale <= 0:
            return mean
        width = min(self.scale, 1.0 - abs(mean))
        if width <= 0:
            return mean
        if self.kind == "uniform":
            return mean + width * (2.0 * rng.random() - 1.0)
        if self.kind == "rademacher":
            return mean + width * (1.0 if rng.random() < 0.5 else -1.0)
        raise ValueError(f"unknown noise kind {self.kind!r}")


@dataclass(frozen=True, eq=False)
class LossModel:
    mode: str
    g: np.ndarray
    noise: NoiseSpec = field(default_factory=NoiseSpec)

    def __post_init__(self):
        if self.mode not in (ADVERSARIAL, STOCHASTIC):
            raise ValueError(f"unknown feedback mode {self.mode!r}")
        g = np.asarray(self.g, dtype=np.float64)
        want = 3 if self.mode == ADVERSARIAL else 2
        if g.ndim != want:
            raise StructureError(
                f"loss vectors for {self.mode} must have {want} dims, got shape {g.shape}"
            )
        g.setflags(write=False)
        object.__setattr__(self, "g", g)

    @property
    def num_episodes(self) -> Optional[int]:
        return self.g.shape[0] if self.mode == ADVERSARIAL else None

    def vectors(self, k: int) -> np.ndarray:
        """The ``(H, d)`` loss vectors in force at main-phase episode ``k``."""
        if self.mode == ADVERSARIAL:
            return self.g[k]
        return self.g

    def mean_vectors(self) -> np.ndarray:
        """Mean loss over the episode sequence (the loss itself if stochastic)."""
        if self.mode == ADVERSARIAL:
            return self.g.mean(axis=0)
        return self.g

    def digest(self) -> str:
        h = hashlib.sha256(self.mode.encode())
        h.update(np.ascontiguousarray(self.g).tobytes())
        h.update(f"{self.noise.kind}:{self.noise.scale!r}".encode())
        return h.hexdigest()[:16]


@dataclass(frozen=True)
class StepRecord:
    state: int
    action: int
    loss: float
    next_state: int


@dataclass
class Trajectory:
    """One episode. ``feedback`` holds the ``(H, d)`` vectors under full
    information and the realized scalar losses under bandit feedback."""

    episode: int
    states: np.ndarray
    actions: np.ndarray
    losses: np.ndarray
    next_states: np.ndarray
    feedback: np.ndarray

    @property
    def steps(self) -> list[StepRecord]:
        return [
            StepRecord(int(s), int(a), float(l), int(n))
            for s, a, l, n in zip(self.states, self.actions, self.losses, self.next_states)
        ]


# --------------------------------------------------------------------------
# validation


@dataclass
class InvariantResult:
    name: str
    passed: bool
    worst_violation: float


@dataclass
class ValidationReport:
    results: list[InvariantResult]

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.results)

    def __getitem__(self, name: str) -> InvariantResult:
        for r in self.results:
            if r.name == name:
                return r
        raise KeyError(name)

    def lines(self) -> list[str]:
        return [
            f"{'PASS' if r.passed else 'FAIL'}  {r.name:<28s} worst={r.worst_violation:.3e}"
            for r in self.results
        ]


def _psi_norm_violation(psi_h: np.ndarray, d: int, rng: np.random.Generator) -> float:
    S = psi_h.shape[0]
    if S <= 14:
        signs = np.array(list(product((-1.0, 1.0), repeat=S)))
    else:
        signs = rng.choice((-1.0, 1.0), size=(4096, S))
    norms = np.linalg.norm(signs @ psi_h, axis=1)
    return float(max(norms.max() - np.sqrt(d), 0.0))


def validate_instance(
    mdp: LinearMdpInstance, losses: Optional[LossModel] = None, tol: float = TOL
) -> ValidationReport:
    """Check the linear-MDP invariants and report the worst violation of each."""
    d = mdp.feature_dim
    results = []
    if losses is not None and losses.g.shape[-1] != d:
        raise StructureError(
            f"loss vectors g have dimension {losses.g.shape[-1]}, features have {d}"
        )
    if losses is not None and losses.g.shape[-2] != mdp.horizon:
        raise StructureError(
            f"loss vectors g cover {losses.g.shape[-2]} steps, instance horizon is {mdp.horizon}"
        )

    norms = np.linalg.norm(mdp.features, axis=-1)
    v = float(max(norms.max() - 1.0, 0.0))
    results.append(InvariantResult("feature_norm", v <= tol, v))

    P = mdp.transitions
    if P.size:
        v_sum = float(np.abs(P.sum(axis=-1) - 1.0).max())
        v_neg = float(max(-P.min(), 0.0))
    else:
        v_sum = v_neg = 0.0
    results.append(InvariantResult("transition_row_sum", v_sum <= tol, v_sum))
    results.append(InvariantResult("transition_nonnegative", v_neg <= tol, v_neg))

    rng = np.random.default_rng(0)
    v_psi = max((_psi_norm_violation(p, d, rng) for p in mdp.psi), default=0.0)
    results.append(InvariantResult("psi_bounded_integral", v_psi <= tol, v_psi))

    if losses is not None:
        tables = mdp.loss_table(losses.g)
        v_loss = float(max(np.abs(tables).max() - 1.0, 0.0))
        results.append(InvariantResult("loss_bounded", v_loss <= tol, v_loss))
        gn = np.linalg.norm(losses.g, axis=-1)
        v_g = float(max(gn.max() - np.sqrt(d), 0.0))
        results.append(InvariantResult("loss_vector_norm", v_g <= tol, v_g))
    return ValidationReport(results)


# --------------------------------------------------------------------------
# constructors


def tabular_embed(P: np.ndarray, losses: np.ndarray) -> tuple[LinearMdpInstance, LossModel]:
    """Embed a tabular MDP with one-hot features, ``d = S*A``.

    ``P`` has shape ``(H-1, S, A, S)`` and ``losses`` shape ``(H, S, A)``
    (mean losses, stochastic mode) or ``(K, H, S, A)`` (adversarial sequence).
    """
    P = np.asarray(P, dtype=np.float64)
    losses = np.asarray(losses, dtype=np.float64)
    if P.ndim != 4 or P.shape[1] != P.shape[3]:
        raise StructureError("P must have shape (H-1, S, A, S)")
    _, S, A, _ = P.shape
    if losses.shape[-2:] != (S, A) or losses.shape[-3] != P.shape[0] + 1:
        raise StructureError("losses must have shape (H, S, A) or (K, H, S, A)")
    if P.size and (P.min() < 0 or np.abs(P.sum(axis=-1) - 1.0).max() > TOL):
        raise ValueError("transition rows must be probability distributions")
    if np.abs(losses).max(initial=0.0) > 1.0:
        raise ValueError("losses must lie in [-1, 1]")
    d = S * A
    features = np.eye(d).reshape(S, A, d)
    # psi[h, s', (s, a)] = P_h(s' | s, a)
    psi = P.reshape(P.shape[0], d, S).transpose(0, 2, 1).copy()
    mode = ADVERSARIAL if losses.ndim == 4 else STOCHASTIC
    g = losses.reshape(*losses.shape[:-2], d)
    return LinearMdpInstance(features, psi), LossModel(mode, g)


def random_tabular_mdp(S: int, A: int, H: int, seed: int, concentration: float = 1.0):
    """Random tabular dynamics ``(H-1, S, A, S)`` and mean losses ``(H, S, A)``."""
    rng = np.random.default_rng(seed)
    P = rng.dirichlet(np.full(S, concentration), size=(H - 1, S, A))
    losses = rng.uniform(-1.0, 1.0, size=(H, S, A))
    return P, losses


def random_lowrank_mdp(
    d: int, S: int, A: int, H: int, seed: int, concentration: float = 0.5
) -> LinearMdpInstance:
    """Random low-rank instance valid by construction.

    Features are Dirichlet draws on the simplex (the per-(s, a) normalizer is
    folded into their scale) and each column ``psi[h, :, i]`` is a Dirichlet
    distribution over next states, so every transition row is a mixture of
    ``d`` distributions. Simplex vectors already lie in the unit ball.
    With ``d == S*A`` features are one-hot, i.e. a tabular embedding.
    """
    if min(S, A, H) < 1:
        raise ValueError("S, A, H must be >= 1")
    if d < 1 or d > S * A:
        raise ValueError(f"infeasible feature dimension d={d} for S*A={S * A}")
    rng = np.random.default_rng(seed)
    if d == S * A:
        features = np.eye(d).reshape(S, A, d)
    else:
        while True:
            features = rng.dirichlet(np.full(d, concentration), size=(S, A))
            if np.linalg.matrix_rank(features.reshape(-1, d)) == d:
                break
    psi = rng.dirichlet(np.ones(S), size=(H - 1, d)).transpose(0, 2, 1).copy()
    return LinearMdpInstance(features, psi)


def _loss_scale(mdp: LinearMdpInstance, g: np.ndarray, cap: float) -> float:
    worst = np.abs(mdp.loss_table(g)).max(initial=0.0)
    return 1.0 if worst <= cap else cap / worst


def random_stochastic_losses(
    mdp: LinearMdpInstance, seed: int, noise: Optional[NoiseSpec] = None
) -> LossModel:
    """Mean loss vectors drawn uniformly from the cube, rescaled so
    ``|phi^T g| <= 1`` and ``||g|| <= sqrt(d)``."""
    rng = np.random.default_rng(seed)
    g = rng.uniform(-1.0, 1.0, size=(mdp.horizon, mdp.feature_dim))
    g *= _loss_scale(mdp, g, 1.0)
    return LossModel(STOCHASTIC, g, noise if noise is not None else NoiseSpec())


def adversarial_schedule(
    mdp: LinearMdpInstance,
    K: int,
    seed: int,
    block: int = 50,
    bias: float = 0.5,
    amplitude: float = 0.5,
) -> LossModel:
    """Oblivious sign-alternating block schedule around a fixed bias.

    ``g_k = bias_vec + sign(k) * amp_vec`` with the sign flipping every
    ``block`` episodes. The bias makes the mean loss nonzero.
    """
    rng = np.random.default_rng(seed)
    H, d = mdp.horizon, mdp.feature_dim
    base = bias * rng.uniform(-1.0, 1.0, size=(H, d))
    amp = amplitude * rng.uniform(-1.0, 1.0, size=(H, d))
    signs = np.where((np.arange(K) // block) % 2 == 0, 1.0, -1.0)
    g = base[None] + signs[:, None, None] * amp[None]
    g *= _loss_scale(mdp, g, 1.0)
    norm_cap = np.linalg.norm(g, axis=-1).max(initial=0.0)
    if norm_cap > np.sqrt(d):
        g *= np.sqrt(d) / norm_cap
    return LossModel(ADVERSARIAL, g, NoiseSpec("none", 0.0))


# --------------------------------------------------------------------------
# simulation


def episode_rng(seed: int, stream: int, episode: int) -> np.random.Generator:
    """Generator keyed by ``(seed, stream, episode)``; order-independent."""
    return np.random.default_rng(np.random.SeedSequence([seed, stream, episode]))


def step(mdp: LinearMdpInstance, losses: LossModel, k: int, h: int, s: int, a: int, rng):
    """Advance one step. Returns ``(realized loss, next state, feedback item)``.

    ``k`` indexes the main-phase loss sequence (ignored in stochastic mode).
    """
    g = losses.vectors(k)[h]
    mean = float(mdp.features[s, a] @ g)
    if losses.mode == STOCHASTIC:
        loss = losses.noise.sample(mean, rng)
        feedback = loss
    else:
        loss = mean
        feedback = g
    if h == mdp.horizon - 1:
        nxt = mdp.terminal_state
    else:
        nxt = int(np.searchsorted(mdp._cumulative[h, s, a], rng.random(), side="right"))
        nxt = min(nxt, mdp.num_states - 1)
    return loss, nxt, feedback


def rollout(mdp: LinearMdpInstance, losses: LossModel, policy: np.ndarray, k: int, rng) -> Trajectory:
    """Run one episode of a tabular policy ``(H, S, A)`` from the initial state.

    Loss-sequence index ``k`` is clipped to the schedule length, so warmup
    episodes may be simulated against an adversarial model.
    """
    H = mdp.horizon
    if losses.mode == ADVERSARIAL:
        k = min(k, losses.num_episodes - 1)
    states = np.empty(H, dtype=np.int64)
    actions = np.empty(H, dtype=np.int64)
    nexts = np.empty(H, dtype=np.int64)
    realized = np.empty(H)
    s = mdp.initial_state
    for h in range(H):
        p = policy[h, s]
        a = int(np.searchsorted(np.cumsum(p), rng.random() * p.sum(), side="right"))
        a = min(a, mdp.num_actions - 1)
        loss, nxt, _ = step(mdp, losses, k, h, s, a, rng)
        states[h], actions[h], realized[h], nexts[h] = s, a, loss, nxt
        s = nxt
    feedback = losses.vectors(k).copy() if losses.mode == ADVERSARIAL else realized.copy()
    return Trajectory(k, states, actions, realized, nexts, feedback)


# --------------------------------------------------------------------------
# serialization


def _encode(arr: np.ndarray):
    return {"shape": list(arr.shape), "hex": [float(x).hex() for x in arr.ravel()]}


def _decode(obj) -> np.ndarray:
    vals = np.array([float.fromhex(x) for x in obj["hex"]], dtype=np.float64)
    return vals.reshape(obj["shape"])


def instance_to_dict(mdp: LinearMdpInstance, losses: Optional[LossModel] = None) -> dict:
    out = {
        "schema": "linpo.instance",
        "version": SCHEMA_VERSION,
        "dims": {
            "S": mdp.num_states,
            "A": mdp.num_actions,
            "H": mdp.horizon,
            "d": mdp.feature_dim,
        },
        "initial_state": mdp.initial_state,
        "features": _encode(mdp.features),
        "psi": _encode(mdp.psi),
    }
    if losses is not None:
        out["losses"] = {
            "mode": losses.mode,
            "g": _encode(losses.g),
            "noise": {"kind": losses.noise.kind, "scale": float(losses.noise.scale).hex()},
        }
    return out


def instance_from_dict(obj: dict) -> tuple[LinearMdpInstance, Optional[LossModel]]:
    if obj.get("schema") != "linpo.instance":
        raise StructureError("not a linpo instance document")
    if obj.get("version") != SCHEMA_VERSION:
        raise StructureError(f"unsupported instance schema version {obj.get('version')}")
    mdp = LinearMdpInstance(_decode(obj["features"]), _decode(obj["psi"]), obj["initial_state"])
    dims = obj["dims"]
    got = {"S": mdp.num_states, "A": mdp.num_actions, "H": mdp.horizon, "d": mdp.feature_dim}
    if got != dims:
        raise StructureError(f"declared dims {dims} disagree with tables {got}")
    losses = None
    if "losses" in obj:
        lo = obj["losses"]
        noise = NoiseSpec(lo["noise"]["kind"], float.fromhex(lo["noise"]["scale"]))
        losses = LossModel(lo["mode"], _decode(lo["g"]), noise)
    return mdp, losses


def save_instance(path, mdp: LinearMdpInstance, losses: Optional[LossModel] = None) -> None:
    with open(path, "w") as fh:
        json.dump(instance_to_dict(mdp, losses), fh)


def load_instance(path) -> tuple[LinearMdpInstance, Optional[LossModel]]:
    with open(path) as fh:
        return instance_from_dict(json.load(fh))
