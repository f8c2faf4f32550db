"""Command line entry point: ``linpo <subcommand>``.

Every subcommand exits 0 only if all invariant checks it performs pass.
Relative output directories are placed under ``$LINPO_OUTPUT_ROOT`` when set.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from ..envmodel import validate_instance
from ..warmup import KnownSetOracle, coverage_probe
from .config import ConfigError, ExperimentConfig, dump_config, load_config
from .plotdata import emit_plotdata
from .runner import get_warmup, run_experiment
from .scaling import fit_scaling

log = logging.getLogger("linpo")


def _int_list(text):
    return [int(x) for x in text.replace(",", " ").split()]


def _add_config_flags(p):
    p.add_argument("--config", help="YAML/JSON experiment config")
    p.add_argument("--instance-file", help="instance JSON written by save_instance")
    p.add_argument("--generator", choices=["lowrank", "tabular"])
    p.add_argument("--instance-seed", type=int)
    p.add_argument("--loss-seed", type=int)
    p.add_argument("--feedback", choices=["stochastic", "adversarial"])
    p.add_argument("--K-grid", type=_int_list, dest="K_grid", help="e.g. 250,500,1000")
    p.add_argument("--seeds", type=_int_list)
    p.add_argument("--eta", type=float)
    p.add_argument("--beta", type=float)
    p.add_argument("--eps-cov", type=float, dest="eps_cov")
    p.add_argument("--delta", type=float)
    p.add_argument("--warmup-budget", type=int, dest="warmup_budget")
    p.add_argument("--warmup-dynamics", choices=["learned", "oracle"], dest="warmup_dynamics")
    p.add_argument("--theory-mode", action="store_true", default=None, dest="theory_mode")
    p.add_argument("--output-dir", dest="output_dir")
    p.add_argument("--workers", type=int)
    p.add_argument("--save-records", action="store_true", default=None, dest="save_records")


FIELDS = (
    "feedback", "K_grid", "seeds", "eta", "beta", "eps_cov", "delta", "warmup_budget",
    "warmup_dynamics", "theory_mode", "output_dir", "workers", "save_records",
)


def config_from_args(args) -> ExperimentConfig:
    overrides = {f: getattr(args, f, None) for f in FIELDS}
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    cfg = replace(cfg, **{k: v for k, v in overrides.items() if v is not None})
    inst = dict(cfg.instance)
    if args.instance_file:
        inst = {"generator": "file", "path": args.instance_file}
    if args.generator:
        inst["generator"] = args.generator
    if args.instance_seed is not None:
        inst["seed"] = args.instance_seed
    losses = dict(cfg.losses)
    if args.loss_seed is not None:
        losses["seed"] = args.loss_seed
    return replace(cfg, instance=inst, losses=losses).validate()


def cmd_validate(args) -> int:
    cfg = config_from_args(args)
    mdp, file_losses = cfg.build_instance()
    losses = cfg.build_losses(mdp, max(cfg.K_grid), file_losses)
    report = validate_instance(mdp, losses)
    for line in report.lines():
        print(line)
    return 0 if report.passed else 1


def cmd_warmup(args) -> int:
    cfg = config_from_args(args)
    mdp, file_losses = cfg.build_instance()
    losses = cfg.build_losses(mdp, max(cfg.K_grid), file_losses)
    cache = cfg.output_path() / "cache"
    ok = True
    for seed in cfg.seeds:
        rcfg = cfg.run_config(max(cfg.K_grid), seed).resolve(mdp)
        wcfg = rcfg.warmup_config(mdp)
        warm = get_warmup(mdp, losses, wcfg, seed, cache)
        probe = coverage_probe(mdp, losses, KnownSetOracle.from_warmup(mdp, warm, rcfg.beta))
        for r in warm.steps:
            print(f"seed={seed} h={r.h} status={r.status} episodes={r.episodes} "
                  f"probe_max={probe.probe_max[r.h]:.4f} worst={probe.worst_case[r.h]:.4f}")
        ok &= bool((probe.probe_max <= wcfg.eps_cov + 1e-12).all())
    print("coverage " + ("PASS" if ok else "FAIL"))
    return 0 if ok else 1


def _report(out: Path) -> int:
    manifest = json.loads((out / "manifest.json").read_text())
    print(f"artifacts: {out}")
    print(f"runs: {manifest['runs']}  failed: {len(manifest['failed'])}")
    for f in manifest["failed"]:
        print("  failed " + f)
    if (out / "scaling.json").exists():
        fit = json.loads((out / "scaling.json").read_text())
        print(f"slope={fit['slope']:.4f} r2={fit['r2']:.4f}")
    print("invariants " + ("PASS" if manifest["invariants_ok"] else "FAIL"))
    print("decomposition audit " + ("PASS" if manifest["audit_ok"] else "FAIL"))
    return 0 if manifest["invariants_ok"] and manifest["audit_ok"] else 1


def cmd_run(args) -> int:
    cfg = config_from_args(args)
    K = args.K if args.K is not None else cfg.K_grid[-1]
    seed = args.seed if args.seed is not None else cfg.seeds[0]
    cfg = replace(cfg, K_grid=[K], seeds=[seed]).validate()
    return _report(run_experiment(cfg))


def cmd_sweep(args) -> int:
    cfg = config_from_args(args)
    if args.dump_config:
        print(dump_config(cfg), end="")
    return _report(run_experiment(cfg))


def cmd_fit(args) -> int:
    root = Path(args.artifact_dir)
    summaries = [json.loads(p.read_text()) for p in sorted(root.glob("runs/*/summary.json"))]
    try:
        fit = fit_scaling(summaries)
    except ValueError as exc:
        print(f"fit failed: {exc}", file=sys.stderr)
        return 1
    (root / "scaling.json").write_text(json.dumps(fit.to_dict(), indent=2, sort_keys=True))
    for K, m, lo, hi in zip(fit.K, fit.median, fit.q25, fit.q75):
        print(f"K={K:6d} median={m:10.3f} iqr=[{lo:.3f}, {hi:.3f}]")
    print(f"slope={fit.slope:.4f} intercept={fit.intercept:.4f} r2={fit.r2:.4f}")
    ok = True
    if args.slope_range:
        lo, hi = args.slope_range
        ok &= lo <= fit.slope <= hi
    if args.min_r2 is not None:
        ok &= fit.r2 >= args.min_r2
    return 0 if ok else 1


def cmd_emit_plots(args) -> int:
    written = emit_plotdata(args.artifact_dir, args.out)
    for name, path in written.items():
        print(f"{name}: {path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="linpo", description="Optimistic policy optimization for linear MDPs")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", help="check linear-MDP invariants of an instance")
    _add_config_flags(p)
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("warmup", help="run (or load cached) warmup and probe coverage")
    _add_config_flags(p)
    p.set_defaults(func=cmd_warmup)

    p = sub.add_parser("run", help="single (K, seed) run")
    _add_config_flags(p)
    p.add_argument("--K", type=int)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep", help="full K-grid x seeds sweep")
    _add_config_flags(p)
    p.add_argument("--dump-config", action="store_true")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("fit", help="scaling fit over an artifact directory")
    p.add_argument("artifact_dir")
    p.add_argument("--slope-range", type=float, nargs=2)
    p.add_argument("--min-r2", type=float)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("emit-plots", help="write tidy plot-data CSVs")
    p.add_argument("artifact_dir")
    p.add_argument("--out")
    p.set_defaults(func=cmd_emit_plots)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
