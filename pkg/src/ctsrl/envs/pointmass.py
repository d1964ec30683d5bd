"""Planar point mass with hidden dynamics context.

Each axis (vx, vy, yaw rate) follows ``v' = v + dt (g K a - mu v) / m`` with a
per-episode mass ``m``, drag ``mu`` and motor gain ``g``. The gyro reads the yaw
rate; the accelerometer reads the linear acceleration plus a per-episode bias.
Linear velocity itself is never observed, so a student must infer the
gain/drag ratio from its history.
"""
from __future__ import annotations

import numpy as np

from .base import EnvConfig, PrivilegedState, ProprioObs, VecEnv
from .rewards import RewardState

NOMINAL_MASS = 10.0      # kg
NOMINAL_GAIN = 160.0     # N per unit joint target
NOMINAL_DRAG = 40.0      # N s / m
ACCEL_BIAS = 0.1         # m/s^2, uniform +/-
ACCEL_NOISE = 0.05
GYRO_NOISE = 0.02


class PointMassEnv(VecEnv):
    action_dim = 3
    obs_dim = 1 + 2 + 3 + 3
    n_feet = 0
    lin_axes = 2

    def __init__(self, cfg: EnvConfig, env_ids, seed: int, command_range=None):
        n = len(env_ids)
        self.pos = np.zeros((n, 2))
        self.vel = np.zeros((n, 3))
        self.acc = np.zeros((n, 3))
        self.force = np.zeros((n, 3))
        self.accel_meas = np.zeros((n, 2))
        self.gyro = np.zeros(n)
        self.mass = np.full(n, NOMINAL_MASS)
        self.gain = np.full(n, NOMINAL_GAIN)
        self.drag = np.full(n, NOMINAL_DRAG)
        self.bias = np.zeros((n, 2))
        super().__init__(cfg, env_ids, seed, command_range)

    def _reset_physics(self, idx: np.ndarray) -> None:
        for j in idx:
            s = self.dr[j]
            self.mass[j] = NOMINAL_MASS * s["link_mass_scale"] + s["payload_mass"]
            self.gain[j] = NOMINAL_GAIN * s["kp_scale"]
            self.drag[j] = NOMINAL_DRAG * s["kd_scale"]
            if self.cfg.randomization.enabled:
                self.bias[j] = self.rngs[j].uniform(-ACCEL_BIAS, ACCEL_BIAS, size=2)
            else:
                self.bias[j] = 0.0
        self.pos[idx] = 0.0
        self.vel[idx] = 0.0
        self.acc[idx] = 0.0
        self.force[idx] = 0.0
        self.accel_meas[idx] = self.bias[idx]
        self.gyro[idx] = 0.0

    def _simulate(self, actions: np.ndarray) -> None:
        cfg = self.cfg
        h = cfg.dt / cfg.substeps
        v0 = self.vel.copy()
        m = self.mass[:, None]
        for k in range(cfg.substeps):
            use_new = (k >= self.delay_substeps)[:, None]
            a = np.where(use_new, actions, self.actions)
            self.force = self.gain[:, None] * cfg.action_scale * a
            self.vel = self.vel + h * (self.force - self.drag[:, None] * self.vel) / m
            self.pos = self.pos + h * self.vel[:, :2]
        self.acc = (self.vel - v0) / cfg.dt
        noise = np.empty((self.n, 3))
        for j in range(self.n):
            noise[j] = self.rngs[j].standard_normal(3)
        scale = self.cfg.obs_noise
        self.accel_meas = self.acc[:, :2] + self.bias + scale * ACCEL_NOISE * noise[:, :2]
        self.gyro = self.vel[:, 2] + scale * GYRO_NOISE * noise[:, 2]

    def _finite_rows(self) -> np.ndarray:
        return np.all(np.isfinite(self.vel), axis=1) & np.all(np.isfinite(self.pos), axis=1)

    def _reward_state(self) -> RewardState:
        n = self.n
        lin = np.zeros((n, 3))
        lin[:, :2] = self.vel[:, :2]
        ang = np.zeros((n, 3))
        ang[:, 2] = self.vel[:, 2]
        grav = np.zeros((n, 3))
        grav[:, 2] = -1.0
        return RewardState(
            command=self.command, lin_vel=lin, ang_vel=ang, projected_gravity=grav,
            base_height=np.full(n, self.cfg.reward.desired_height),
            joint_vel=self.vel, joint_acc=self.acc, torques=self.force,
            feet_pos=np.zeros((n, 0, 3)), feet_vel=np.zeros((n, 0, 3)),
            feet_height=np.zeros((n, 0)), contact_forces=np.zeros((n, 0, 3)),
            n_collision=np.zeros(n), n_limit=np.zeros(n))

    def _proprio(self) -> ProprioObs:
        n = self.n
        return ProprioObs(
            angular_velocity=self.gyro[:, None], projected_gravity=np.zeros((n, 0)),
            joint_positions=np.zeros((n, 0)), joint_velocities=np.zeros((n, 0)),
            command=self.command, previous_action=self.actions, extra=self.accel_meas,
            scales={"extra": 0.5})

    def hidden_context(self) -> np.ndarray:
        return np.column_stack([
            self.mass, self.drag / NOMINAL_DRAG, self.gain / NOMINAL_GAIN, self.bias[:, 0], self.bias[:, 1]])

    def _privileged(self, proprio: ProprioObs) -> PrivilegedState:
        n = self.n
        return PrivilegedState(
            proprio=proprio, base_lin_velocity=self.vel[:, :2],
            terrain_heights=np.zeros((n, self.cfg.height_samples)),
            contact_forces=np.zeros((n, 0)), joint_torques=self.force,
            joint_accelerations=self.acc, hidden_context=self.hidden_context(),
            scales={"joint_torques": 1.0 / NOMINAL_GAIN, "joint_accelerations": 0.5,
                    "hidden_context": np.array([0.25, 5.0, 5.0, 10.0, 10.0])},
            offsets={"hidden_context": np.array([NOMINAL_MASS, 1.0, 1.0, 0.0, 0.0])})

    def base_xy_velocity(self) -> np.ndarray:
        return self.vel[:, :2].copy()

    def true_lin_velocity(self) -> np.ndarray:
        return self.vel[:, :2].copy()

    def push(self, idx, delta) -> None:
        idx = np.asarray(idx)
        self.vel[idx, :2] += np.asarray(delta).reshape(len(idx), 2)
