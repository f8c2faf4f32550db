"""Log-log power-law fits of regret against K."""

from __future__ import annotations

import logging
from collections import defaultdict
from dataclasses import dataclass, field

import numpy as np

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ScalingFit:
    K: list
    median: list
    q25: list
    q75: list
    n_seeds: list
    slope: float
    intercept: float
    r2: float
    excluded: int = 0
    warnings: list = field(default_factory=list)

    def predict(self, K) -> np.ndarray:
        return np.exp(self.intercept) * np.asarray(K, dtype=float) ** self.slope

    def to_dict(self) -> dict:
        return {
            "K": list(self.K),
            "median": list(self.median),
            "q25": list(self.q25),
            "q75": list(self.q75),
            "n_seeds": list(self.n_seeds),
            "slope": self.slope,
            "intercept": self.intercept,
            "r2": self.r2,
            "excluded": self.excluded,
            "warnings": list(self.warnings),
        }


def fit_power_law(K, y) -> tuple[float, float, float]:
    """OLS of log y on log K. Returns (slope, intercept, R²)."""
    x = np.log(np.asarray(K, dtype=float))
    ly = np.log(np.asarray(y, dtype=float))
    slope, intercept = np.polyfit(x, ly, 1)
    resid = ly - (slope * x + intercept)
    ss_tot = float(np.sum((ly - ly.mean()) ** 2))
    r2 = 1.0 - float(np.sum(resid**2)) / ss_tot if ss_tot > 0 else 1.0
    return float(slope), float(intercept), r2


def fit_scaling(summaries, key: str = "total_regret") -> ScalingFit:
    """Fit ``log median(regret) ~ slope * log K`` over the K grid.

    ``summaries`` is an iterable of mappings with ``K`` and ``key``; one entry
    per (K, seed). Nonpositive values cannot enter a log fit and are dropped.
    """
    by_k = defaultdict(list)
    excluded = 0
    for s in summaries:
        v = s[key]
        if v is None or not np.isfinite(v) or v <= 0:
            excluded += 1
            continue
        by_k[int(s["K"])].append(float(v))
    warnings = []
    if excluded:
        msg = f"excluded {excluded} nonpositive regret value(s) from the log-log fit"
        log.warning(msg)
        warnings.append(msg)
    Ks = sorted(by_k)
    if len(Ks) < 3:
        raise ValueError(f"scaling fit needs at least 3 K-grid points with positive regret, got {len(Ks)}")
    med, q25, q75, n = [], [], [], []
    for K in Ks:
        vals = np.asarray(by_k[K])
        med.append(float(np.median(vals)))
        q25.append(float(np.percentile(vals, 25)))
        q75.append(float(np.percentile(vals, 75)))
        n.append(len(vals))
    slope, intercept, r2 = fit_power_law(Ks, med)
    return ScalingFit(Ks, med, q25, q75, n, slope, intercept, r2, excluded, warnings)
