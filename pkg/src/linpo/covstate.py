"""Regularized covariance matrices with a maintained inverse and log-determinant."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

LN2 = float(np.log(2.0))
REFACTOR_EVERY = 256
DRIFT_CHECK_EVERY = 16
DRIFT_TOL = 1e-10


def _inverse_and_logdet(matrix: np.ndarray) -> tuple[np.ndarray, float]:
    L = np.linalg.cholesky(matrix)
    Linv = np.linalg.inv(L)
    return Linv.T @ Linv, 2.0 * float(np.log(np.diag(L)).sum())


class CovarianceAccumulator:
    """``I + sum phi phi^T`` with Sherman-Morrison inverse and log-det tracking.

    ``potential`` accumulates ``||phi||^2_{Lambda^{-1}}`` measured *before*
    each update (the elliptical potential).
    """

    def __init__(self, d: int):
        self.d = d
        self.matrix = np.eye(d)
        self.inverse = np.eye(d)
        self.log_det = 0.0
        self.n_updates = 0
        self.potential = 0.0
        self.refactorizations = 0

    def copy(self) -> "CovarianceAccumulator":
        out = CovarianceAccumulator.__new__(CovarianceAccumulator)
        out.__dict__.update(self.__dict__)
        out.matrix = self.matrix.copy()
        out.inverse = self.inverse.copy()
        return out

    def rank_one_update(self, phi) -> float:
        """Add ``phi phi^T``; returns the pre-update ``||phi||_{Lambda^{-1}}``."""
        phi = np.asarray(phi, dtype=np.float64)
        u = self.inverse @ phi
        q = float(phi @ u)
        self.matrix += np.outer(phi, phi)
        self.inverse -= np.outer(u, u) / (1.0 + q)
        self.log_det += float(np.log1p(q))
        self.n_updates += 1
        self.potential += q
        if self.n_updates % REFACTOR_EVERY == 0:
            self.refactor()
        elif self.n_updates % DRIFT_CHECK_EVERY == 0 and self.drift() > DRIFT_TOL:
            self.refactor()
        return float(np.sqrt(max(q, 0.0)))

    def refactor(self) -> None:
        self.matrix = 0.5 * (self.matrix + self.matrix.T)
        self.inverse, self.log_det = _inverse_and_logdet(self.matrix)
        self.refactorizations += 1

    def drift(self) -> float:
        return float(np.abs(self.matrix @ self.inverse - np.eye(self.d)).max())

    def solve(self, b) -> np.ndarray:
        return self.inverse @ np.asarray(b, dtype=np.float64)

    def weighted_norm(self, phi) -> np.ndarray | float:
        return weighted_norm(self, phi)

    def snapshot(self, epoch: int = 0, episode: int = 0) -> "EpochSnapshot":
        return EpochSnapshot(
            self.matrix.copy(), self.inverse.copy(), self.log_det, epoch, episode
        )


@dataclass(frozen=True, eq=False)
class EpochSnapshot:
    """Frozen copy of an accumulator, used for bonuses within one epoch."""

    matrix: np.ndarray
    inverse: np.ndarray
    log_det: float
    epoch: int
    episode: int

    def __post_init__(self):
        self.matrix.setflags(write=False)
        self.inverse.setflags(write=False)

    def weighted_norm(self, phi) -> np.ndarray | float:
        return weighted_norm(self, phi)


def weighted_norm(cov, phi):
    """``sqrt(phi^T Lambda^{-1} phi)``; ``phi`` may be a stack ``(..., d)``."""
    phi = np.asarray(phi, dtype=np.float64)
    q = np.einsum("...i,ij,...j->...", phi, cov.inverse, phi)
    out = np.sqrt(np.maximum(q, 0.0))
    return float(out) if out.ndim == 0 else out


def should_refresh_epoch(acc: CovarianceAccumulator, snapshot) -> bool:
    """True when ``det Lambda >= 2 det Lambda_hat``; always true with no snapshot yet."""
    if snapshot is None:
        return True
    return acc.log_det - snapshot.log_det >= LN2


def epoch_bound(d: int, n_updates: int) -> float:
    """Cap on determinant doublings after ``n_updates`` unit-ball updates."""
    return d * np.log(n_updates + 1) / LN2


def potential_bound(d: int, n_updates: int) -> float:
    return 2.0 * d * np.log(1.0 + n_updates / d)


def rank_one_update(acc: CovarianceAccumulator, phi) -> CovarianceAccumulator:
    acc.rank_one_update(phi)
    return acc


def solve(acc: CovarianceAccumulator, b) -> np.ndarray:
    return acc.solve(b)
