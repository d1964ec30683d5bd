"""Locomotion reward terms, vectorised over environments.

Each term is returned unweighted and non-negative (the two tracking
exponentials lie in (0, 1]); the total is the weighted sum scaled by dt.
"""
from __future__ import annotations

from dataclasses import dataclass, fields

import numpy as np

from ..nn import ConfigurationError


@dataclass
class RewardConfig:
    lin_tracking: float = 1.0
    ang_tracking: float = 0.5
    lin_vel_z: float = -2.0
    ang_vel_xy: float = -0.05
    joint_accel: float = -2.5e-7
    joint_power: float = -2e-5
    joint_torque: float = -1e-4
    base_height: float = -1.0
    action_rate: float = -0.01
    action_smoothness: float = -0.01
    collision: float = -1.0
    joint_limit: float = -2.0
    feet_regulation: float = -0.05
    orientation_xy: float = 0.0
    feet_distance: float = 0.0
    feet_contact_force: float = 0.0
    feet_velocity: float = 0.0
    desired_height: float = 0.3
    gait_period: float = 0.6
    stance_fraction: float = 0.5
    # "printed": a_t - 2a_{t-1} - a_{t-2}; "second_difference": a_t - 2a_{t-1} + a_{t-2}
    smoothness_form: str = "printed"

    @classmethod
    def quadruped(cls, **kw) -> "RewardConfig":
        return cls(**kw)

    @classmethod
    def biped(cls, **kw) -> "RewardConfig":
        base = dict(lin_vel_z=-0.5, orientation_xy=-5.0, feet_distance=-100.0,
                    feet_contact_force=-2.0, feet_velocity=-2.0)
        base.update(kw)
        return cls(**base)

    def weights(self) -> dict[str, float]:
        return {name: getattr(self, name) for name in TERM_NAMES}


TERM_NAMES = tuple(
    f.name for f in fields(RewardConfig)
    if f.name not in ("desired_height", "gait_period", "stance_fraction", "smoothness_form")
)


@dataclass
class RewardState:
    """Per-step physical quantities, batched over N environments.

    Vectors are in the base frame; F is the number of feet (0 allowed).
    """

    command: np.ndarray            # (N, 3) vx, vy, wz
    lin_vel: np.ndarray            # (N, 3)
    ang_vel: np.ndarray            # (N, 3)
    projected_gravity: np.ndarray  # (N, 3)
    base_height: np.ndarray        # (N,) above terrain
    joint_vel: np.ndarray          # (N, J)
    joint_acc: np.ndarray          # (N, J)
    torques: np.ndarray            # (N, J)
    feet_pos: np.ndarray           # (N, F, 3) world
    feet_vel: np.ndarray           # (N, F, 3)
    feet_height: np.ndarray        # (N, F) above terrain
    contact_forces: np.ndarray     # (N, F, 3)
    n_collision: np.ndarray        # (N,)
    n_limit: np.ndarray            # (N,)


def desired_contact(phase, stance_fraction: float = 0.5):
    """1 during stance (phase < stance_fraction), 0 during swing."""
    phase = np.asarray(phase, dtype=np.float64)
    return (np.mod(phase, 1.0) < stance_fraction).astype(np.float64)


def foot_phases(base_phase, n_feet: int):
    """Per-foot phases. Two feet alternate by half a cycle; four feet trot in diagonal pairs."""
    base_phase = np.asarray(base_phase, dtype=np.float64)
    if n_feet == 2:
        offsets = np.array([0.0, 0.5])
    elif n_feet == 4:
        offsets = np.array([0.0, 0.5, 0.5, 0.0])  # FL, FR, RL, RR
    else:
        offsets = np.zeros(n_feet)
    return np.mod(base_phase[..., None] + offsets, 1.0)


def compute_reward(state: RewardState, action, prev_action, prev_prev_action,
                   cfg: RewardConfig, phase=None, dt: float = 0.02):
    """Returns ``(total, per_term)``; ``phase`` holds per-foot gait phases (N, F)."""
    if cfg.smoothness_form not in ("printed", "second_difference"):
        raise ConfigurationError(f"unknown smoothness_form {cfg.smoothness_form!r}")
    a = np.atleast_2d(action)
    a1 = np.atleast_2d(prev_action)
    a2 = np.atleast_2d(prev_prev_action)
    h_des = cfg.desired_height
    terms: dict[str, np.ndarray] = {}

    lin_err = state.command[:, :2] - state.lin_vel[:, :2]
    terms["lin_tracking"] = np.exp(-4.0 * np.sum(lin_err**2, axis=1))
    terms["ang_tracking"] = np.exp(-4.0 * (state.command[:, 2] - state.ang_vel[:, 2]) ** 2)
    terms["lin_vel_z"] = state.lin_vel[:, 2] ** 2
    terms["ang_vel_xy"] = np.sum(state.ang_vel[:, :2] ** 2, axis=1)
    terms["joint_accel"] = np.sum(state.joint_acc**2, axis=1)
    terms["joint_power"] = np.sum(np.abs(state.torques) * np.abs(state.joint_vel), axis=1)
    terms["joint_torque"] = np.sum(state.torques**2, axis=1)
    terms["base_height"] = (h_des - state.base_height) ** 2
    terms["action_rate"] = np.sum((a - a1) ** 2, axis=1)
    sign = -1.0 if cfg.smoothness_form == "printed" else 1.0
    terms["action_smoothness"] = np.sum((a - 2.0 * a1 + sign * a2) ** 2, axis=1)
    terms["collision"] = np.asarray(state.n_collision, dtype=np.float64)
    terms["joint_limit"] = np.asarray(state.n_limit, dtype=np.float64)

    n_feet = state.feet_pos.shape[1]
    n = a.shape[0]
    if n_feet:
        foot_speed_sq = np.sum(state.feet_vel[:, :, :2] ** 2, axis=2)
        terms["feet_regulation"] = np.sum(
            foot_speed_sq * np.exp(-state.feet_height / (0.025 * h_des)), axis=1)
    else:
        terms["feet_regulation"] = np.zeros(n)
    terms["orientation_xy"] = np.linalg.norm(state.projected_gravity[:, :2], axis=1)
    if n_feet == 2:
        gap = np.linalg.norm(state.feet_pos[:, 0, :2] - state.feet_pos[:, 1, :2], axis=1)
        terms["feet_distance"] = np.maximum(0.0, 0.1 - gap)
    else:
        terms["feet_distance"] = np.zeros(n)
    if n_feet and phase is not None:
        c_des = desired_contact(phase, cfg.stance_fraction)
        force = np.linalg.norm(state.contact_forces, axis=2)
        foot_speed = np.linalg.norm(state.feet_vel[:, :, :2], axis=2)
        terms["feet_contact_force"] = np.sum((1.0 - c_des) * (1.0 - np.exp(-0.04 * force)), axis=1)
        terms["feet_velocity"] = np.sum(c_des * (1.0 - np.exp(-4.0 * foot_speed)), axis=1)
    else:
        terms["feet_contact_force"] = np.zeros(n)
        terms["feet_velocity"] = np.zeros(n)

    weights = cfg.weights()
    total = np.zeros(n)
    for name in TERM_NAMES:
        total += weights[name] * terms[name]
    return total * dt, terms
