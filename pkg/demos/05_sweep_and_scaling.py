# %% [markdown]
# # Seed sweep, scaling fit and plot data
# Same pipeline as `linpo sweep`, driven from Python.

# %%
import csv
import json

from linpo.harness.instances import acceptance_config
from linpo.harness.runner import run_experiment
from linpo.harness.scaling import fit_scaling
from linpo.harness.plotdata import emit_plotdata

cfg = acceptance_config("stochastic", K_grid=[250, 500, 1000], seeds=[0, 1, 2], output_dir="demo-sweep")
out = run_experiment(cfg)
print(out)

# %%
summaries = [json.loads(p.read_text()) for p in sorted(out.glob("runs/*/summary.json"))]
fit = fit_scaling(summaries)
print(f"slope {fit.slope:.3f}  r2 {fit.r2:.4f}")

# %%
paths = emit_plotdata(out)
with open(paths["regret_by_K"]) as f:
    for row in csv.reader(f):
        print(row)
