# %% [markdown]
# # Regret decomposition
# Regret splits exactly into bias, mirror-descent and optimism terms on the
# known sets plus a remainder off them. The audit compares regret to the
# bound with the coverage slack.

# %%
from linpo.envmodel import random_lowrank_mdp, adversarial_schedule
from linpo.evaloracle import decomposition_diag
from linpo.popt import RunConfig, run_with_warmup
from linpo.warmup import KnownSetOracle

mdp = random_lowrank_mdp(6, 6, 3, 3, seed=1)
losses = adversarial_schedule(mdp, 1000, seed=2001)
cfg = RunConfig(K=1000, seed=0).resolve(mdp)
warm, rec = run_with_warmup(mdp, losses, cfg)

# %%
diag = decomposition_diag(rec, mdp, losses, KnownSetOracle.from_warmup(mdp, warm, cfg.beta))
for k, v in diag.to_dict().items():
    print(k, v)
