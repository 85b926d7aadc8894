"""Batches of independent train-then-evaluate runs.

Each job trains one agent on one family with one seed and evaluates it on
held-out references. Jobs share nothing, so they fan out over worker
processes when more than one core is available.
"""
from __future__ import annotations

import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
import multiprocessing as mp

import numpy as np

__all__ = ["Job", "run_job", "run_jobs", "collect", "available_cores"]


@dataclass(frozen=True)
class Job:
    agent: str
    family: str
    seed: int
    hyper: tuple = ()          # (name, value) overrides of the agent defaults
    n_refs: int = 10
    eval_seed: int = 12345
    tag: str = ""

    @property
    def key(self):
        return (self.tag or self.agent, self.family)


def available_cores() -> int:
    try:
        return len(os.sched_getaffinity(0))
    except AttributeError:
        return os.cpu_count() or 1


def run_job(job: Job) -> dict:
    from .agents import AGENTS, evaluate
    from .env import FamilyEnv
    from .families import default_spec

    env = FamilyEnv(default_spec(job.family))
    cfg_cls, _, train = AGENTS[job.agent]
    cfg = cfg_cls(**dict(job.hyper))
    t0 = time.perf_counter()
    agent = train(env, cfg, job.seed)
    elapsed = time.perf_counter() - t0
    report = evaluate([agent], env, job.n_refs, job.eval_seed, [job.seed])
    return {"job": job, "matrix": report.matrix[0], "raw": report.raw[0], "seconds": elapsed}


def run_jobs(jobs, workers: int | None = None, progress=None) -> list[dict]:
    """Run jobs, in order, optionally over a spawn-based process pool."""
    jobs = list(jobs)
    workers = min(workers or available_cores(), len(jobs)) or 1
    if workers == 1:
        out = []
        for j in jobs:
            out.append(run_job(j))
            if progress is not None:
                progress(out[-1])
        return out
    with ProcessPoolExecutor(workers, mp_context=mp.get_context("spawn")) as pool:
        out = []
        for r in pool.map(run_job, jobs):
            out.append(r)
            if progress is not None:
                progress(r)
        return out


def collect(results) -> dict:
    """Group results into one evaluation report per (tag or agent, family)."""
    from .agents import EvalReport

    groups: dict = {}
    for r in results:
        groups.setdefault(r["job"].key, []).append(r)
    return {k: EvalReport([r["job"].seed for r in rs], np.stack([r["matrix"] for r in rs]),
                          np.stack([r["raw"] for r in rs])) for k, rs in groups.items()}
