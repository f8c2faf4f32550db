# %% [markdown]
# # Optimistic policy optimization run
# One main-phase run in bandit mode, its regret curve and built-in invariant checks.

# %%
import numpy as np

from linpo.envmodel import random_lowrank_mdp, random_stochastic_losses
from linpo.evaloracle import regret_series
from linpo.popt import RunConfig, run_with_warmup

mdp = random_lowrank_mdp(6, 6, 3, 3, seed=1)
losses = random_stochastic_losses(mdp, 1001)
cfg = RunConfig(K=2000, seed=0).resolve(mdp)
print(f"eta={cfg.eta:.4f} beta={cfg.beta:.3f} eps_cov={cfg.eps_cov}")

# %%
warm, rec = run_with_warmup(mdp, losses, cfg)
series = regret_series(rec, mdp, losses)
for K in (250, 500, 1000, 2000):
    print(K, round(float(series.cumulative[K - 1]), 2))

# %% Bonus at the visited pair shrinks as data accumulates
bonus = rec.visited_bonus.max(axis=1)
print([round(float(bonus[i : i + 200].mean()), 4) for i in range(0, 2000, 400)])

# %%
for key in ("epoch_refreshes", "epoch_bound", "potential", "potential_bound", "bias_sum", "bias_bound"):
    print(key, rec.diagnostics[key])
