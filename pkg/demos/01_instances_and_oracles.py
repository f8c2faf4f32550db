# %% [markdown]
# # Linear MDP instances and exact evaluation
# A low-rank instance, its invariant checks, and exact values of a few policies.

# %%
import numpy as np

from linpo.envmodel import random_lowrank_mdp, random_stochastic_losses, validate_instance, rollout, episode_rng
from linpo.evaloracle import optimal_policy, policy_value, uniform_policy, occupancy

mdp = random_lowrank_mdp(d=6, S=6, A=3, H=3, seed=1)
losses = random_stochastic_losses(mdp, seed=1001)
print(mdp.features.shape, mdp.psi.shape, mdp.transitions.shape)

# %%
for line in validate_instance(mdp, losses).lines():
    print(line)

# %% Exact values: uniform vs optimal
unif = uniform_policy(mdp.horizon, mdp.num_states, mdp.num_actions)
star, vt = optimal_policy(mdp, losses.g)
v_unif = policy_value(mdp, unif, losses.g).V[0, mdp.initial_state]
print(f"uniform {v_unif:.4f}  optimal {vt.V[0, mdp.initial_state]:.4f}")

# %% Occupancy of the optimal policy vs sampled rollouts
mu = occupancy(mdp, star).state_marginals
counts = np.zeros_like(mu)
for k in range(5000):
    tr = rollout(mdp, losses, star, k, episode_rng(0, 0, k))
    counts[np.arange(mdp.horizon), tr.states] += 1
print(np.round(mu, 3))
print(np.round(counts / 5000, 3))
