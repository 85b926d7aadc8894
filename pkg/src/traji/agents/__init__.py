"""Trainable agents, evaluation and checkpoints."""
from __future__ import annotations

import dataclasses
import io
import json
from dataclasses import dataclass

import numpy as np

from ..env import Roi
from .bc import BcAgent, BcConfig, bc_train
from .common import (PlanarCodec, GeoCodec, ReplayBuffer, NoiseProcess, TrainingDiverged, codec_from_dict,
                     eval_references, eval_rng, make_codec, rollout)
from .dati import DatiAgent, DatiConfig, dati_train
from .ddpg import DdpgAgent, DdpgConfig, ddpg_train

__all__ = [
    "AGENTS", "train_agent", "evaluate", "EvalReport", "ablate", "save_checkpoint", "load_checkpoint",
    "PerfectAgent", "CheckpointError", "TrainingDiverged", "DatiConfig", "DdpgConfig", "BcConfig",
    "dati_train", "ddpg_train", "bc_train", "make_codec", "rollout", "PlanarCodec", "GeoCodec",
    "ReplayBuffer", "NoiseProcess",
]

# kind -> (config class, agent class, train function)
AGENTS = {
    "dati": (DatiConfig, DatiAgent, dati_train),
    "ddpg-ti": (DdpgConfig, DdpgAgent, ddpg_train),
    "bc": (BcConfig, BcAgent, bc_train),
}

CHECKPOINT_VERSION = 1


class CheckpointError(ValueError):
    pass


def config_from_dict(kind: str, d: dict):
    cls = AGENTS[kind][0]
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(d) - names
    if unknown:
        raise KeyError(f"unknown {kind} hyperparameters: {sorted(unknown)}")
    return cls(**d)


def train_agent(kind: str, env, cfg=None, seed: int = 0, **kw):
    cfg_cls, _, train = AGENTS[kind]
    return train(env, cfg or cfg_cls(), seed, **kw)


class PerfectAgent:
    """The analytic expert, wrapped in the agent interface."""

    kind = "perfect"

    def __init__(self, env):
        self.env = env

    def make_actor(self, rng=None):
        env = self.env

        def act(state, i, elapsed):
            ref = env.reference
            return env.kinematics.perfect_action(state, ref.states[i + 1], env.reference_dt(i))
        return act


@dataclass
class EvalReport:
    """Normalized smoothed DTW per (seed, reference)."""

    seeds: list[int]
    matrix: np.ndarray           # (n_seeds, n_refs)
    raw: np.ndarray              # un-normalized smoothed distances
    epsilon: float = 0.1

    @property
    def best(self) -> float:
        return float(np.min(self.matrix))

    def best_per_seed(self) -> np.ndarray:
        return np.min(self.matrix, axis=1)

    def top(self, k: int = 2) -> list[float]:
        """The k best per-seed minima, ascending."""
        return sorted(float(v) for v in self.best_per_seed())[:k]

    @property
    def representative(self) -> np.ndarray:
        return self.matrix < self.epsilon

    def rows(self):
        for i, seed in enumerate(self.seeds):
            for j in range(self.matrix.shape[1]):
                yield seed, j, float(self.raw[i, j]), float(self.matrix[i, j])

    def to_csv(self) -> str:
        out = io.StringIO()
        out.write("seed,ref_id,dtw,norm_dtw\n")
        for seed, j, d, n in self.rows():
            out.write(f"{seed},{j},{d!r},{n!r}\n")
        return out.getvalue()


def evaluate(agents, env, n_refs: int = 10, eval_seed: int = 12345, seeds=None,
             keep_rollouts: bool = False):
    """Roll every agent against ``n_refs`` held-out references.

    ``agents`` is a list with one trained agent per run seed. The smoothed
    prefix DTW at the final step is reported, divided by the environment's
    diameter. Returns the report (and the rollouts when asked).
    """
    refs = eval_references(env, n_refs, eval_seed)
    seeds = list(seeds) if seeds is not None else [getattr(a, "seed", i) for i, a in enumerate(agents)]
    mat = np.zeros((len(agents), n_refs))
    raw = np.zeros_like(mat)
    rolls = []
    for i, (agent, seed) in enumerate(zip(agents, seeds)):
        row = []
        for j, ref in enumerate(refs):
            traj = rollout(env, ref, agent.make_actor(eval_rng(eval_seed, seed, j)))
            mat[i, j] = env.normalized_distance
            raw[i, j] = env.normalized_distance * env.diameter
            row.append(traj)
        rolls.append(row)
    report = EvalReport(seeds, mat, raw, env.epsilon)
    return (report, refs, rolls) if keep_rollouts else report


ABLATIONS = {
    "original": {},
    "no-time": {"use_time": False},
    "no-reward": {"use_reward": False},
}


def ablate(variant: str, env, seeds=(0, 1, 2), cfg: DatiConfig = DatiConfig(), n_refs: int = 10,
           eval_seed: int = 12345, progress=None):
    """Train DATI with a layer removed and return ``(top1, top2, report)``."""
    if variant not in ABLATIONS:
        raise ValueError(f"unknown ablation {variant!r}")
    cfg = dataclasses.replace(cfg, **ABLATIONS[variant])
    agents = [dati_train(env, cfg, s, progress=progress) for s in seeds]
    report = evaluate(agents, env, n_refs, eval_seed, seeds)
    top = report.top(2)
    return top[0], top[-1], report


def save_checkpoint(path, agent, extra: dict | None = None) -> None:
    """One ``.npz`` file: flat arrays plus a JSON header describing the run."""
    meta = {
        "version": CHECKPOINT_VERSION,
        "kind": agent.kind,
        "config": dataclasses.asdict(agent.cfg),
        "codec": agent.codec.to_dict(),
        "roi": agent.roi.to_dict(),
        "time_scale": agent.time_scale,
        "seed": agent.seed,
        "n_updates": agent.n_updates,
        **(extra or {}),
    }
    state = agent.state_dict()
    arrays = {f"params/{k}": v for k, v in state["params"].items()}
    for k, parts in state["opt"].items():
        for i, x in enumerate(parts):
            arrays[f"opt/{k}/{i}"] = x
    with open(path, "wb") as fh:
        np.savez(fh, __meta__=np.array(json.dumps(meta, sort_keys=True)), **arrays)


def load_checkpoint(path):
    """Rebuild an agent from :func:`save_checkpoint`; returns ``(agent, meta)``."""
    with np.load(path, allow_pickle=False) as z:
        if "__meta__" not in z:
            raise CheckpointError(f"{path}: not a checkpoint")
        meta = json.loads(str(z["__meta__"]))
        arrays = {k: z[k] for k in z.files if k != "__meta__"}
    if meta.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {meta.get('version')}")
    if meta["kind"] not in AGENTS:
        raise CheckpointError(f"{path}: unknown agent kind {meta['kind']!r}")
    cfg = config_from_dict(meta["kind"], meta["config"])
    agent_cls = AGENTS[meta["kind"]][1]
    roi = Roi(**meta["roi"])
    agent = agent_cls(cfg, codec_from_dict(meta["codec"]), roi, meta["time_scale"], meta["seed"])
    params = {k.split("/", 1)[1]: v for k, v in arrays.items() if k.startswith("params/")}
    opt: dict[str, list] = {}
    for k in sorted(a for a in arrays if a.startswith("opt/")):
        _, name, i = k.split("/")
        opt.setdefault(name, []).append((int(i), arrays[k]))
    state = {"params": params, "opt": {k: [x for _, x in sorted(v)] for k, v in opt.items()}}
    agent.load_state(state)
    agent.n_updates = meta.get("n_updates", 0)
    return agent, meta
