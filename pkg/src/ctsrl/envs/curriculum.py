"""Command sampling and terrain/command curricula."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .terrain import MAX_LEVEL


@dataclass
class CurriculumConfig:
    terrain: bool = True
    commands: bool = True
    max_level: int = MAX_LEVEL
    promote_tracking: float = 0.8
    demote_progress: float = 0.5
    initial_lin_range: float = 1.0
    initial_yaw_range: float = 1.0
    lin_increment: float = 0.25
    max_lin_range: float = 2.0
    resample_steps: int = 250


@dataclass
class CommandRange:
    lin: float = 1.0
    yaw: float = 1.0
    expansions: int = 0


@dataclass
class EpisodeSummary:
    env_id: int
    level: int
    mean_lin_tracking: float
    progress: float          # m travelled along the commanded direction
    commanded: float         # m the command asked for
    timed_out: bool
    steps: int


def sample_command(rng: np.random.Generator, command_range: CommandRange,
                   lin_axes: int = 2, yaw: bool = True) -> np.ndarray:
    """Uniform (vx, vy, wz) inside the current range; disabled axes are zero."""
    cmd = np.zeros(3)
    cmd[:lin_axes] = rng.uniform(-command_range.lin, command_range.lin, size=lin_axes)
    if yaw:
        cmd[2] = rng.uniform(-command_range.yaw, command_range.yaw)
    return cmd


def curriculum_update(summary: EpisodeSummary, cfg: CurriculumConfig) -> tuple[int, bool]:
    """New terrain level, and whether this episode earns a command-range expansion."""
    level = summary.level
    promoted = summary.timed_out and summary.mean_lin_tracking > cfg.promote_tracking
    if not cfg.terrain:
        return level, bool(promoted and cfg.commands)
    expand = False
    if promoted:
        if level >= cfg.max_level:
            expand = cfg.commands
        level = min(level + 1, cfg.max_level)
    elif summary.progress < cfg.demote_progress * summary.commanded:
        level = max(level - 1, 0)
    return level, expand


def expand_range(command_range: CommandRange, cfg: CurriculumConfig) -> CommandRange:
    lin = min(command_range.lin + cfg.lin_increment, cfg.max_lin_range)
    return CommandRange(lin, command_range.yaw, command_range.expansions + 1)
