# %% [markdown]
# # Reward-free warmup
# Warmup explores each step until every reachable direction is well covered,
# which defines the known sets. The probe measures how much occupancy any
# policy can put on unknown states.

# %%
import math

import numpy as np

from linpo.envmodel import random_lowrank_mdp, random_stochastic_losses
from linpo.warmup import WarmupConfig, reward_free_warmup, KnownSetOracle, coverage_probe

mdp = random_lowrank_mdp(6, 6, 3, 3, seed=1)
losses = random_stochastic_losses(mdp, 1001)

# %%
beta = 0.5 * math.sqrt(mdp.feature_dim)
cfg = WarmupConfig(beta=beta, eps_cov=0.05, episode_budget=2000)
warm = reward_free_warmup(mdp, losses, cfg, seed=0)
for r in warm.steps:
    print(f"h={r.h} status={r.status} episodes={r.episodes} levels={len(r.levels)}")

# %% Known sets and coverage
oracle = KnownSetOracle.from_warmup(mdp, warm)
for h in range(mdp.horizon):
    print(h, np.flatnonzero(oracle.mask(h)))
probe = coverage_probe(mdp, losses, oracle, policy_sample_size=200)
print("probe max", probe.probe_max, "worst case", probe.worst_case)

# %% A large beta shrinks the threshold 1/(2 beta H); the same budget then covers nothing
big = reward_free_warmup(mdp, losses, WarmupConfig(beta=15.0, eps_cov=0.05, episode_budget=300), seed=0)
print(coverage_probe(mdp, losses, KnownSetOracle.from_warmup(mdp, big)).worst_case)
