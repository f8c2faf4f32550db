"""Named instances used by the acceptance suite and the demos."""

from __future__ import annotations

from dataclasses import replace

from ..envmodel import random_tabular_mdp, tabular_embed
from .config import ExperimentConfig

STOCHASTIC_LOSS_SEED = 1001
ADVERSARIAL_LOSS_SEED = 2001


def acceptance_config(feedback: str = "stochastic", **overrides) -> ExperimentConfig:
    """d=6, S=6, A=3, H=3 low-rank instance with the sweep grid used for the scaling checks."""
    cfg = ExperimentConfig(feedback=feedback)
    seed = STOCHASTIC_LOSS_SEED if feedback == "stochastic" else ADVERSARIAL_LOSS_SEED
    cfg = replace(cfg, losses={"seed": seed}, **overrides)
    return cfg.validate()


def acceptance_instance(feedback: str = "stochastic", K: int = 2000):
    cfg = acceptance_config(feedback)
    mdp, _ = cfg.build_instance()
    return mdp, cfg.build_losses(mdp, K)


def tiny_tabular(seed: int, S: int = 3, A: int = 2, H: int = 3):
    """One-hot embedded random tabular MDP (d = S*A) with stochastic losses."""
    P, losses = random_tabular_mdp(S, A, H, seed)
    return tabular_embed(P, losses)
