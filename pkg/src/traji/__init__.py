"""Trajectory imitation toolkit."""
import os

# the networks are tiny; XLA's intra-op thread pool costs more than it buys
os.environ.setdefault(
    "XLA_FLAGS", "--xla_cpu_multi_thread_eigen=false intra_op_parallelism_threads=1")

from .families import FamilySpec, Trajectory, default_spec, sample_family_trajectory, register_family
from .env import FamilyEnv, TrajectoryEnv, Roi, compute_roi, perfect_policy, env_step
from .dtw import dtw_distance, dtw_diameter, PrefixDtw, normalized_distance, is_representative

__all__ = [
    "FamilySpec", "Trajectory", "default_spec", "sample_family_trajectory", "register_family",
    "FamilyEnv", "TrajectoryEnv", "Roi", "compute_roi", "perfect_policy", "env_step",
    "dtw_distance", "dtw_diameter", "PrefixDtw", "normalized_distance", "is_representative",
]

__version__ = "0.1.0"
