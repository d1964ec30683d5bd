"""Environment profiles and the pool that steps them."""
from __future__ import annotations

from ..nn import ConfigurationError
from .base import (FALL_OVER, RUNNING, TERMINATION_NAMES, TIME_OUT, EnvConfig, EnvPool, ObsHistory,
                   Observation, PrivilegedState, ProprioObs, StepResult, VecEnv)
from .curriculum import CommandRange, CurriculumConfig, EpisodeSummary, curriculum_update, sample_command
from .pointmass import PointMassEnv
from .randomization import DomainRandomization
from .rewards import RewardConfig, compute_reward, desired_contact
from .terrain import TerrainKind, TerrainProfile, generate_terrain
from .walker import WalkerEnv

PROFILES = {"ctx-pointmass": PointMassEnv, "terrain-walker": WalkerEnv}


def env_class(profile: str):
    try:
        return PROFILES[profile]
    except KeyError:
        raise ConfigurationError(f"unknown env profile {profile!r}; expected one of {sorted(PROFILES)}") from None


def make_pool(cfg: EnvConfig, n_envs: int, seed: int, workers: int = 1) -> EnvPool:
    return EnvPool(env_class(cfg.profile), cfg, n_envs, seed, workers)
