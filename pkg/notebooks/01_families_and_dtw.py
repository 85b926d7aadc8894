# %% [markdown]
# # Trajectory families, the perfect policy and the DTW reward
#
# Each family is a map from a scalar shape parameter alpha and time to a
# planar curve. An episode draws one alpha, hides the curve from the agent
# and scores the agent's own predicted path against it with dynamic time
# warping.

# %%
import numpy as np

from traji import svg
from traji.dtw import dtw_diameter, dtw_distance, smooth
from traji.env import FamilyEnv, perfect_rollout
from traji.families import default_spec, family_names, sample_family_trajectory

# %% [markdown]
# ## The four families
#
# The two boundary members (smallest and largest alpha) define the DTW
# diameter used to normalize distances.

# %%
for kind in family_names()[:4]:
    spec = default_spec(kind)
    lo, hi = spec.alpha_range
    print(f"{kind:10s} alpha in [{lo:+.3f}, {hi:+.3f}]  horizon {spec.horizon:6.2f}  "
          f"diameter {dtw_diameter(spec):8.3f}")

# %%
spec = default_spec("Ribbons")
members = [sample_family_trajectory(spec, a) for a in np.linspace(*spec.alpha_range, 7)]
svg.save("ribbons.svg", [svg.Series(m.states, svg.PALETTE[i % 8]) for i, m in enumerate(members)], "Ribbons")

# %% [markdown]
# Ribbons rotate a fixed curve by alpha over a full turn, so both boundary
# members are the same curve. The diameter then falls back to the widest
# member on an alpha grid.

# %%
first, last = members[0], members[-1]
print("boundary DTW:", dtw_distance(first, last))
print("diameter    :", dtw_diameter(spec))

# %% [markdown]
# ## The perfect policy
#
# Inverting the kinematic map gives the speed and heading that land exactly
# on the next reference point. Rolled through the environment it reproduces
# the reference, so its distance is zero up to rounding.

# %%
env = FamilyEnv(default_spec("Circles"))
_, ref = env.reset(seed=0)
roll = perfect_rollout(env, ref)
print("max deviation:", np.max(np.abs(roll.states - ref.states)))
print("normalized smoothed DTW:", env.normalized_distance)

# %% [markdown]
# ## The sparse reward
#
# A policy that stands still earns +1 only while the smoothed prefix
# distance stays under epsilon.

# %%
env.reset(seed=0)
rewards, raw = [], []
for i in range(ref.n_steps):
    out = env.step((0.0, 0.0))
    rewards.append(out.reward)
    raw.append(out.info["raw"])
first_miss = rewards.index(-1) if -1 in rewards else None
print("first negative reward at step", first_miss)
print("smoothed tail:", smooth(raw)[-3:] / env.diameter)
