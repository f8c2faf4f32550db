"""Seed/K sweeps with warmup caching and file output."""

from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
import time
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict
from pathlib import Path

import numpy as np

from .. import __version__
from ..envmodel import STOCHASTIC
from ..evaloracle import (
    decomposition_diag,
    fixed_policy_regret,
    regret_series,
    uniform_policy,
)
from ..popt import default_eta, practical_beta, record_to_dict, run, theory_beta, theory_eps_cov
from ..warmup import KnownSetOracle, WarmupArtifacts, coverage_probe, reward_free_warmup
from .config import ExperimentConfig
from .scaling import fit_scaling

log = logging.getLogger(__name__)

RUN_CSV_COLUMNS = [
    "episode",
    "value_of_agent_policy",
    "value_of_comparator",
    "instant_regret",
    "cumulative_regret",
    "epochs_triggered",
    "max_bonus",
    "known_fraction_visited",
]

INVARIANT_KEYS = ("epoch_bound_ok", "potential_ok", "bias_ok", "bonus_terms_ok")


def warmup_key(mdp, losses, wcfg, seed) -> str:
    h = hashlib.sha256()
    h.update(mdp.digest().encode())
    h.update(losses.mode.encode())
    if losses.mode == STOCHASTIC:
        # realized bandit losses are recorded during warmup
        h.update(losses.digest().encode())
    h.update(json.dumps(asdict(wcfg), sort_keys=True).encode())
    h.update(str(seed).encode())
    return h.hexdigest()[:20]


def get_warmup(mdp, losses, wcfg, seed, cache_dir=None) -> WarmupArtifacts:
    path = None
    if cache_dir is not None:
        path = Path(cache_dir) / f"warmup_{warmup_key(mdp, losses, wcfg, seed)}.json"
        if path.exists():
            return WarmupArtifacts.from_dict(json.loads(path.read_text()), mdp)
    warm = reward_free_warmup(mdp, losses, wcfg, seed)
    if path is not None:
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp = path.with_suffix(".tmp")
        tmp.write_text(json.dumps(warm.to_dict()))
        tmp.replace(path)
    return warm


def run_csv(record, series) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(RUN_CSV_COLUMNS)
    cum = series.cumulative
    maxb = record.visited_bonus.max(axis=1)
    known = record.visited_known.mean(axis=1)
    for k in range(record.num_episodes):
        w.writerow(
            [
                k,
                repr(float(series.agent_values[k])),
                repr(float(series.comparator_values[k])),
                repr(float(series.instant[k])),
                repr(float(cum[k])),
                int(record.epochs_triggered[k]),
                repr(float(maxb[k])),
                repr(float(known[k])),
            ]
        )
    return buf.getvalue()


def execute_run(cfg: ExperimentConfig, K: int, seed: int, cache_dir=None) -> dict:
    """Warmup (cached), main phase, regret and diagnostics for one (K, seed).

    Returns the file payloads; nothing is written here.
    """
    mdp, file_losses = cfg.build_instance()
    losses = cfg.build_losses(mdp, K, file_losses)
    rcfg = cfg.run_config(K, seed).resolve(mdp)
    warm = get_warmup(mdp, losses, rcfg.warmup_config(mdp), seed, cache_dir)
    record = run(mdp, losses, warm, rcfg)
    series = regret_series(record, mdp, losses)
    oracle = KnownSetOracle.from_warmup(mdp, warm, rcfg.beta)
    diag = decomposition_diag(record, mdp, losses, oracle)
    probe = coverage_probe(mdp, losses, oracle, rng=np.random.default_rng(seed))
    uniform = fixed_policy_regret(mdp, losses, uniform_policy(mdp.horizon, mdp.num_states, mdp.num_actions), K)
    inv = record.diagnostics
    invariants_ok = all(inv[k] for k in INVARIANT_KEYS)
    audit_ok = diag.holds or not diag.good_event
    summary = {
        "K": K,
        "seed": seed,
        "feedback": cfg.feedback,
        "total_regret": series.total,
        "uniform_regret": float(uniform),
        "warmup_episodes": warm.episodes_used,
        "warmup": [
            {"h": r.h, "status": r.status, "achieved": r.achieved, "episodes": r.episodes, "levels": r.levels}
            for r in warm.steps
        ],
        "coverage_probe": {
            "probe_max": probe.probe_max.tolist(),
            "worst_case": probe.worst_case.tolist(),
            "optimal": probe.optimal.tolist(),
        },
        "params": {"eta": rcfg.eta, "beta": rcfg.beta, "eps_cov": rcfg.eps_cov, "delta": rcfg.delta},
        "epoch_episodes": record.epoch_episodes,
        "invariants": inv,
        "decomposition": diag.to_dict(),
        "invariants_ok": invariants_ok,
        "audit_ok": audit_ok,
    }
    out = {
        "K": K,
        "seed": seed,
        "csv": run_csv(record, series),
        "summary": json.dumps(_clean(summary), indent=2, sort_keys=True),
        "decomposition": json.dumps(_clean(diag.to_dict()), indent=2, sort_keys=True),
    }
    if cfg.save_records:
        out["record"] = json.dumps(record_to_dict(record))
    return out


def _clean(x):
    if isinstance(x, dict):
        return {k: _clean(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_clean(v) for v in x]
    if isinstance(x, (np.floating, np.integer, np.bool_)):
        return x.item()
    if isinstance(x, float) and not np.isfinite(x):
        return None
    return x


def _safe_run(args):
    cfg, K, seed, cache_dir = args
    try:
        return execute_run(cfg, K, seed, cache_dir)
    except Exception as exc:  # isolate per-run failures
        return {"K": K, "seed": seed, "error": f"{type(exc).__name__}: {exc}", "traceback": traceback.format_exc()}


def run_dir_name(K: int, seed: int) -> str:
    return f"K{K:06d}_s{seed:04d}"


def write_run(out_dir: Path, result: dict) -> None:
    d = out_dir / "runs" / run_dir_name(result["K"], result["seed"])
    d.mkdir(parents=True, exist_ok=True)
    if "error" in result:
        (d / "error.txt").write_text(result["error"] + "\n" + result["traceback"])
        return
    (d / "run.csv").write_text(result["csv"])
    (d / "summary.json").write_text(result["summary"])
    (d / "decomposition.json").write_text(result["decomposition"])
    if "record" in result:
        (d / "record.json").write_text(result["record"])


def recipe_defaults(cfg: ExperimentConfig) -> dict:
    mdp, _ = cfg.build_instance()
    d, H, A = mdp.feature_dim, mdp.horizon, mdp.num_actions
    out = {}
    for K in cfg.K_grid:
        out[str(K)] = {
            "eta": default_eta(A, H, K),
            "beta_theory": theory_beta(d, H, K, cfg.delta),
            "beta_practical": practical_beta(d, H, K, cfg.delta),
            "eps_cov_theory": theory_eps_cov(d, H, K, cfg.delta),
        }
    return out


def run_experiment(cfg: ExperimentConfig, workers=None) -> Path:
    """Run every (K, seed) pair and write CSVs, summaries, fit and manifest."""
    cfg.validate()
    cfg.build_instance()  # fail on a bad instance before any compute
    out = cfg.output_path()
    out.mkdir(parents=True, exist_ok=True)
    cache = out / "cache"
    workers = cfg.workers if workers is None else workers
    jobs = [(cfg, K, s, cache) for K in cfg.K_grid for s in cfg.seeds]
    start = time.time()
    # warm the cache once per seed so parallel K runs share it
    first = [(cfg, cfg.K_grid[0], s, cache) for s in cfg.seeds]
    rest = [j for j in jobs if j[1] != cfg.K_grid[0]]
    results = []
    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            for batch in (first, rest):
                for res in pool.map(_safe_run, batch):
                    write_run(out, res)
                    results.append(res)
    else:
        for job in first + rest:
            res = _safe_run(job)
            write_run(out, res)
            results.append(res)

    summaries = [json.loads(r["summary"]) for r in results if "summary" in r]
    failed = [f"{r['K']}/{r['seed']}: {r['error']}" for r in results if "error" in r]
    if len(cfg.K_grid) >= 3 and summaries:
        try:
            fit = fit_scaling(summaries)
            (out / "scaling.json").write_text(json.dumps(fit.to_dict(), indent=2, sort_keys=True))
        except ValueError as exc:
            log.warning("scaling fit skipped: %s", exc)
    manifest = {
        "config": cfg.hashable(),
        "config_hash": cfg.digest(),
        "code_version": __version__,
        "recipe_defaults": recipe_defaults(cfg),
        "runs": len(results),
        "failed": failed,
        "invariants_ok": all(s["invariants_ok"] for s in summaries) and not failed,
        "audit_ok": all(s["audit_ok"] for s in summaries),
        "wall_seconds": round(time.time() - start, 3),
        "timestamp": time.strftime("%Y-%m-%dT%H:%M:%S"),
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))
    return out
