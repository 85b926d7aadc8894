# %% [markdown]
# # Vessel tracks: cleaning, clustering, kinks and anomalies
#
# The synthetic fixture plants every situation the pipeline has to handle,
# so each stage can be checked against known answers before real
# marinecadastre files are used.

# %%
import dataclasses

import numpy as np

from traji import ais, svg
from traji.agents import DatiConfig, dati_train
from traji.env import TrackEnv, roi_from_points

# %%
truth = ais.write_fixture("fixture.csv", seed=0)
records, stats = ais.ingest_csv("fixture.csv", ais.Region(ais.FIXTURE_REGION))
print(stats)

# %%
seg = {}
tracks = ais.segment_tracks(records, stats=seg)
print(len(tracks), "tracks;", seg)

# %% [markdown]
# ## Clusters and kink counts

# %%
clusters = ais.cluster_tracks(tracks)
for label, members in clusters.items():
    if members:
        h = ais.kink_histogram(members)
        print(label, {k: f"{p:.0%}" for k, p in h.proportions.items()})
print("matches planted labels:", {t.track_id: t.label for t in tracks} == truth["labels"])

# %%
colors = {"up": "#1f77b4", "down": "#2ca02c", "other": "#d62728"}
svg.save("clusters.svg", [svg.Series(np.column_stack([t.lon, t.lat]), colors[t.label]) for t in tracks],
         "fixture clusters")

# %% [markdown]
# ## A generator for the up cluster
#
# Episodes are cut to a few dozen fixes so the example trains quickly. The
# reward threshold is half a kilometre of smoothed great-circle DTW.

# %%
train = ais.build_train_set(clusters, per_cluster=170, seed=0)["up"]
trajs = [t.to_trajectory() for t in train]
roi = roi_from_points(np.concatenate([t.states for t in trajs]), 0.1)
env = TrackEnv(trajs, roi, epsilon_km=0.5, max_steps=40)
agent = dati_train(env, dataclasses.replace(DatiConfig(), episodes=10), seed=0)

# %% [markdown]
# ## Scoring the other cluster
#
# Every test track is replayed from its first fix; the DTW to the real
# track, normalized by the largest one, is the anomaly score.

# %%
test = clusters["other"]
test_env = TrackEnv([t.to_trajectory() for t in test], roi, 0.5, max_steps=40)
scores = ais.rollout_scores(agent, test_env, test_env.tracks)
report = ais.detect_anomalies([t.track_id for t in test], scores, 0.9)
print(report.to_csv())
