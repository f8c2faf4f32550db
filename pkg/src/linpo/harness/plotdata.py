"""Tidy CSVs for figures, built from a finished artifact directory."""

from __future__ import annotations

import csv
import json
import logging
from collections import defaultdict
from pathlib import Path

import numpy as np

log = logging.getLogger(__name__)

SCHEMAS = {
    "regret_curves": ["K", "seed", "episode", "instant_regret", "cumulative_regret"],
    "regret_by_K": ["K", "n_seeds", "median", "q25", "q75", "mean"],
    "bonus_decay": ["K", "seed", "episode", "max_bonus", "known_fraction_visited"],
    "epoch_events": ["K", "seed", "h", "epoch", "episode"],
    "coverage_probes": ["K", "seed", "h", "probe_max", "worst_case", "optimal"],
}


def _read_run(d: Path):
    summary = json.loads((d / "summary.json").read_text())
    with open(d / "run.csv", newline="") as f:
        rows = list(csv.DictReader(f))
    return summary, rows


def emit_plotdata(artifact_dir, out_dir=None) -> dict:
    """Write one CSV per figure under ``out_dir`` (default ``<artifact>/plotdata``).

    Runs with missing or unreadable files are skipped with a warning. Returns
    a mapping figure name -> written path.
    """
    root = Path(artifact_dir)
    out = Path(out_dir) if out_dir is not None else root / "plotdata"
    out.mkdir(parents=True, exist_ok=True)
    rows = {name: [] for name in SCHEMAS}
    finals = defaultdict(list)
    run_dirs = sorted((root / "runs").glob("K*_s*")) if (root / "runs").is_dir() else []
    for d in run_dirs:
        try:
            summary, curve = _read_run(d)
        except (OSError, ValueError) as exc:
            log.warning("skipping %s: %s", d.name, exc)
            continue
        K, seed = summary["K"], summary["seed"]
        finals[K].append(summary["total_regret"])
        for r in curve:
            rows["regret_curves"].append([K, seed, r["episode"], r["instant_regret"], r["cumulative_regret"]])
            rows["bonus_decay"].append([K, seed, r["episode"], r["max_bonus"], r["known_fraction_visited"]])
        for h, eps in enumerate(summary.get("epoch_episodes", [])):
            for j, ep in enumerate(eps):
                rows["epoch_events"].append([K, seed, h, j, ep])
        probe = summary.get("coverage_probe", {})
        for h, pm in enumerate(probe.get("probe_max", [])):
            rows["coverage_probes"].append([K, seed, h, pm, probe["worst_case"][h], probe["optimal"][h]])
    for K in sorted(finals):
        v = np.asarray(finals[K], dtype=float)
        rows["regret_by_K"].append(
            [K, len(v), np.median(v), np.percentile(v, 25), np.percentile(v, 75), v.mean()]
        )
    written = {}
    for name, header in SCHEMAS.items():
        path = out / f"{name}.csv"
        with open(path, "w", newline="") as f:
            w = csv.writer(f, lineterminator="\n")
            w.writerow(header)
            w.writerows(rows[name])
        written[name] = path
    if not run_dirs:
        log.warning("no runs found under %s; wrote header-only files", root)
    return written
