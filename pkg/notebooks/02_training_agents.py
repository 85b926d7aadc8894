# %% [markdown]
# # Training DATI, DDPG-TI and behavioral cloning
#
# A reduced budget keeps this script to a few minutes on one core. Set
# `EPISODES = 100` and `SEEDS = range(5)` for the desk-scale runs used by
# the acceptance suite.

# %%
import dataclasses
import os
import time

import numpy as np

from traji import svg
from traji.agents import BcConfig, DatiConfig, DdpgConfig, evaluate, train_agent
from traji.env import FamilyEnv
from traji.families import default_spec

EPISODES = int(os.environ.get("TRAJI_EPISODES", 10))
SEEDS = range(int(os.environ.get("TRAJI_SEEDS", 1)))

# %%
env = FamilyEnv(default_spec("Circles"))
configs = {
    "dati": dataclasses.replace(DatiConfig(), episodes=EPISODES),
    "ddpg-ti": dataclasses.replace(DdpgConfig(), episodes=EPISODES),
    "bc": dataclasses.replace(BcConfig(), episodes=EPISODES),
}

# %% [markdown]
# Each run trains one agent per seed and evaluates it on ten held-out
# references drawn from a separate random stream.

# %%
results = {}
for kind, cfg in configs.items():
    t0 = time.perf_counter()
    agents = [train_agent(kind, env, cfg, s) for s in SEEDS]
    report, refs, rolls = evaluate(agents, env, 10, keep_rollouts=True, seeds=list(SEEDS))
    results[kind] = (report, refs, rolls)
    print(f"{kind:8s} best {report.best:.3f}  median {np.median(report.matrix):.3f}  "
          f"({time.perf_counter() - t0:.0f} s)")

# %% [markdown]
# ## Rollouts against their references

# %%
report, refs, rolls = results["dati"]
best_seed = int(np.argmin(report.best_per_seed()))
series = [svg.Series(r.states, "#bbbbbb") for r in refs]
series += [svg.Series(t.states, svg.PALETTE[i % 8], 1.5) for i, t in enumerate(rolls[best_seed])]
svg.save("dati_circles.svg", series, "DATI on Circles")

# %% [markdown]
# ## Loss curves
#
# The forward critic's Wasserstein estimate keeps growing in magnitude:
# expert samples always carry a positive reward, which the critic can use to
# tell them apart from the generator's samples.

# %%
agent = train_agent("dati", env, dataclasses.replace(configs["dati"], log_every=10), 0)
hist = {}
for step, name, value in agent.history:
    hist.setdefault(name, []).append(value)
for name, values in hist.items():
    print(f"{name:15s} first {values[0]:+10.4f}  last {values[-1]:+10.4f}")
