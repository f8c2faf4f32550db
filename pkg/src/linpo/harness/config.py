"""Experiment configuration: a single YAML (or JSON) file."""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Optional

import yaml

from ..envmodel import (
    ADVERSARIAL,
    STOCHASTIC,
    LinearMdpInstance,
    LossModel,
    NoiseSpec,
    adversarial_schedule,
    load_instance,
    random_lowrank_mdp,
    random_stochastic_losses,
    random_tabular_mdp,
    tabular_embed,
)
from ..popt import RunConfig

OUTPUT_ROOT_ENV = "LINPO_OUTPUT_ROOT"
FEEDBACK = {"stochastic": STOCHASTIC, "adversarial": ADVERSARIAL}


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    instance: dict = field(
        default_factory=lambda: {"generator": "lowrank", "d": 6, "S": 6, "A": 3, "H": 3, "seed": 1}
    )
    losses: dict = field(default_factory=lambda: {"seed": 1001})
    feedback: str = "stochastic"
    K_grid: list = field(default_factory=lambda: [250, 500, 1000, 2000])
    seeds: list = field(default_factory=lambda: list(range(10)))
    eta: Optional[float] = None
    beta: Optional[float] = None
    eps_cov: Optional[float] = 0.05
    delta: float = 0.1
    warmup_budget: int = 2000
    warmup_dynamics: str = "learned"
    theory_mode: bool = False
    output_dir: str = "linpo-out"
    save_records: bool = False
    workers: int = 1

    def validate(self) -> "ExperimentConfig":
        if self.feedback not in FEEDBACK:
            raise ConfigError(f"feedback must be one of {sorted(FEEDBACK)}, got {self.feedback!r}")
        if not self.K_grid or any(int(k) < 1 for k in self.K_grid):
            raise ConfigError("K_grid must be a non-empty list of positive integers")
        if any(b <= a for a, b in zip(self.K_grid, self.K_grid[1:])):
            raise ConfigError("K_grid must be strictly increasing")
        if not self.seeds:
            raise ConfigError("seeds must be non-empty")
        if len(set(self.seeds)) != len(self.seeds):
            raise ConfigError("seeds must be distinct")
        gen = self.instance.get("generator")
        if gen not in ("lowrank", "tabular", "file"):
            raise ConfigError("instance.generator must be 'lowrank', 'tabular' or 'file'")
        if gen == "file" and "path" not in self.instance:
            raise ConfigError("instance.path is required for generator 'file'")
        if gen != "file":
            for key in ("S", "A", "H", "seed") + (("d",) if gen == "lowrank" else ()):
                if key not in self.instance:
                    raise ConfigError(f"instance.{key} is required")
        if self.eps_cov is not None and not 0 < self.eps_cov <= 1:
            raise ConfigError("eps_cov must lie in (0, 1]")
        if self.beta is not None and self.beta <= 0:
            raise ConfigError("beta must be positive")
        if self.eta is not None and self.eta < 0:
            raise ConfigError("eta must be nonnegative")
        if self.warmup_budget < 0:
            raise ConfigError("warmup_budget must be nonnegative")
        return self

    def digest(self) -> str:
        blob = json.dumps(self.hashable(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    def hashable(self) -> dict:
        d = asdict(self)
        for key in ("output_dir", "workers", "save_records"):
            d.pop(key)
        return d

    def output_path(self) -> Path:
        p = Path(self.output_dir)
        root = os.environ.get(OUTPUT_ROOT_ENV)
        if root and not p.is_absolute():
            p = Path(root) / p
        return p

    def run_config(self, K: int, seed: int) -> RunConfig:
        return RunConfig(
            K=K,
            eta=self.eta,
            beta=self.beta,
            eps_cov=self.eps_cov,
            delta=self.delta,
            seed=seed,
            theory_mode=self.theory_mode,
            warmup_budget=self.warmup_budget,
            warmup_dynamics=self.warmup_dynamics,
        )

    def build_instance(self) -> tuple[LinearMdpInstance, Optional[LossModel]]:
        spec = self.instance
        gen = spec["generator"]
        if gen == "file":
            return load_instance(spec["path"])
        if gen == "lowrank":
            mdp = random_lowrank_mdp(
                spec["d"], spec["S"], spec["A"], spec["H"], spec["seed"],
                spec.get("concentration", 0.5),
            )
            return mdp, None
        P, losses = random_tabular_mdp(spec["S"], spec["A"], spec["H"], spec["seed"])
        mdp, lm = tabular_embed(P, losses)
        return mdp, lm

    def build_losses(self, mdp: LinearMdpInstance, K: int, file_losses=None) -> LossModel:
        lo = self.losses
        seed = lo.get("seed", 0)
        noise = NoiseSpec(lo.get("noise_kind", "uniform"), lo.get("noise_scale", 0.5))
        if self.feedback == "stochastic":
            if file_losses is not None and file_losses.mode == STOCHASTIC and not lo.get("regenerate"):
                return LossModel(STOCHASTIC, file_losses.g, noise)
            return random_stochastic_losses(mdp, seed, noise)
        if file_losses is not None and file_losses.mode == ADVERSARIAL and not lo.get("regenerate"):
            if file_losses.num_episodes < K:
                raise ConfigError("loss sequence in instance file is shorter than K")
            return LossModel(ADVERSARIAL, file_losses.g[:K], file_losses.noise)
        return adversarial_schedule(
            mdp, K, seed,
            block=lo.get("block", 50),
            bias=lo.get("bias", 0.5),
            amplitude=lo.get("amplitude", 0.5),
        )


def load_config(path, **overrides) -> ExperimentConfig:
    text = Path(path).read_text()
    data = yaml.safe_load(text) or {}
    if not isinstance(data, dict):
        raise ConfigError("config file must contain a mapping")
    known = set(ExperimentConfig.__dataclass_fields__)
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    cfg = ExperimentConfig(**data)
    cfg = replace(cfg, **{k: v for k, v in overrides.items() if v is not None})
    return cfg.validate()


def dump_config(cfg: ExperimentConfig) -> str:
    return yaml.safe_dump(asdict(cfg), sort_keys=False)
