"""Planar walker: a rigid trunk (x, z, pitch) on two telescoping legs.

Each leg has a hip angle and a length joint, both PD-driven. Legs are massless
rods ending in point-mass feet; feet touch the terrain through a spring-damper
normal force and Coulomb friction resolved at the velocity level. The
quadruped profile mounts the hips fore and aft of the CoM (a sagittal slice of
a trotting quadruped); the biped profile mounts both hips at the CoM with the
legs splayed.
"""
from __future__ import annotations

import numpy as np

from .base import EnvConfig, PrivilegedState, ProprioObs, VecEnv
from .rewards import RewardState
from .terrain import HALF_LENGTH, RESOLUTION, interp_height

G = 9.81
BASE_MASS = 6.0
FOOT_MASS = 0.4
BODY_LENGTH = 0.50
BODY_HEIGHT = 0.10
CONTACT_STIFFNESS = 4000.0
CONTACT_DAMPING = 100.0     # at restitution 0.5
STOP_STIFFNESS = 5000.0
HIP_KP, HIP_KD = 40.0, 1.0
LEG_KP, LEG_KD = 2000.0, 40.0
HIP_TORQUE_LIMIT = 20.0
LEG_FORCE_LIMIT = 150.0
HIP_LIMITS = (-0.8, 0.8)
LEG_LIMITS = (0.15, 0.45)
LEG_ACTION_RATIO = 0.2      # leg-length target moves 0.2 m per rad of hip target

PROFILES = {
    # hip mount offsets along the trunk (m) and nominal hip angles (rad)
    "quadruped": dict(hip_offset=(0.18, -0.18), hip_nominal=(0.0, 0.0)),
    "biped": dict(hip_offset=(0.0, 0.0), hip_nominal=(0.3, -0.3)),
}


def _cross(ax, az, bx, bz):
    return ax * bz - az * bx


class WalkerEnv(VecEnv):
    action_dim = 4
    obs_dim = 1 + 2 + 4 + 4 + 3 + 4 + 2
    n_feet = 2
    lin_axes = 1
    yaw_command = False

    def _alloc(self) -> None:
        n = self.n
        prof = PROFILES[self.cfg.reward_profile]
        self.hip_offset = np.array(prof["hip_offset"], dtype=np.float64)
        self.hip_nominal = np.array(prof["hip_nominal"], dtype=np.float64)
        h_des = self.cfg.reward.desired_height
        # nominal leg length chosen so the undisturbed stand settles at h_des
        f_leg = BASE_MASS * G / 2.0 / np.cos(self.hip_nominal)
        pen = (f_leg * np.cos(self.hip_nominal) + FOOT_MASS * G) / CONTACT_STIFFNESS
        self.leg_nominal = (h_des + pen) / np.cos(self.hip_nominal) + f_leg / LEG_KP
        self.q_nominal = np.concatenate([self.hip_nominal, self.leg_nominal])
        self.scale_vec = self.cfg.action_scale * np.array([1.0, 1.0, LEG_ACTION_RATIO, LEG_ACTION_RATIO])
        z = lambda *s: np.zeros((n, *s))
        self.x, self.z, self.th = z(), z(), z()
        self.vx, self.vz, self.w = z(), z(), z()
        self.fx, self.fz, self.fvx, self.fvz = z(2), z(2), z(2), z(2)
        self.mass = np.full(n, BASE_MASS)
        self.inertia = np.full(n, BASE_MASS * (BODY_LENGTH**2 + BODY_HEIGHT**2) / 12.0)
        self.com_off = z()
        self.kp_scale, self.kd_scale = np.ones(n), np.ones(n)
        self.q, self.qd, self.qd_prev, self.qdd, self.tau = z(4), z(4), z(4), z(4), z(4)
        self.grf = z(2, 2)
        self.n_collision = z()
        self.gyro, self.q_meas, self.qd_meas = z(), z(4), z(4)

    # -- kinematics ---------------------------------------------------------------------
    def _frames(self):
        c, s = np.cos(self.th), np.sin(self.th)
        return c, s, -s, c  # ex = (c, s), ez = (-s, c)

    def _legs(self):
        exx, exz, ezx, ezz = self._frames()
        r = self.hip_offset[None, :] - self.com_off[:, None]
        rx, rz = r * exx[:, None], r * exz[:, None]
        hx, hz = self.x[:, None] + rx, self.z[:, None] + rz
        hvx = self.vx[:, None] - self.w[:, None] * rz
        hvz = self.vz[:, None] + self.w[:, None] * rx
        dx, dz = self.fx - hx, self.fz - hz
        length = np.sqrt(dx * dx + dz * dz)
        dbx = dx * exx[:, None] + dz * exz[:, None]
        dbz = dx * ezx[:, None] + dz * ezz[:, None]
        qh = np.arctan2(dbx, -dbz)
        safe = np.maximum(length, 1e-6)
        ux, uz = dx / safe, dz / safe
        cq, sq = np.cos(qh), np.sin(qh)
        tx = cq * exx[:, None] + sq * ezx[:, None]
        tz = cq * exz[:, None] + sq * ezz[:, None]
        relx, relz = self.fvx - hvx, self.fvz - hvz
        ql_dot = relx * ux + relz * uz
        qh_dot = (relx * tx + relz * tz) / safe - self.w[:, None]
        return dict(rx=rx, rz=rz, length=length, safe=safe, qh=qh, ux=ux, uz=uz, tx=tx, tz=tz,
                    qh_dot=qh_dot, ql_dot=ql_dot)

    def _terrain(self, x):
        h = self.terrain_heights_at(x)
        eps = 0.025
        slope = (self.terrain_heights_at(x + eps) - self.terrain_heights_at(x - eps)) / (2 * eps)
        return h, slope

    # -- reset --------------------------------------------------------------------------
    def _reset_physics(self, idx: np.ndarray) -> None:
        idx = np.asarray(idx)
        for j in idx:
            s = self.dr[j]
            self.mass[j] = BASE_MASS * s["link_mass_scale"] + s["payload_mass"]
            self.inertia[j] = self.mass[j] * (BODY_LENGTH**2 + BODY_HEIGHT**2) / 12.0
            self.com_off[j] = s["com_offset_x"]
            self.kp_scale[j] = s["kp_scale"]
            self.kd_scale[j] = s["kd_scale"]
        m = self.mass[idx]
        off = self.hip_offset[None, :] - self.com_off[idx, None]
        span = off[:, 0] - off[:, 1]
        # static load split by the lever rule (equal split when hips coincide)
        w_front = np.where(np.abs(span) > 1e-9, -off[:, 1] / np.where(np.abs(span) > 1e-9, span, 1.0), 0.5)
        loads = m[:, None] * G * np.column_stack([w_front, 1.0 - w_front])
        cos_n = np.cos(self.hip_nominal)[None, :]
        radial = loads / cos_n
        length = self.leg_nominal[None, :] - radial / (LEG_KP * self.kp_scale[idx, None])
        pen = (loads + FOOT_MASS * G) / CONTACT_STIFFNESS
        foot_x = off + length * np.sin(self.hip_nominal)[None, :]
        ground = interp_height(self.heightfields[idx], -HALF_LENGTH, RESOLUTION, foot_x)
        foot_z = ground - pen
        hip_z = foot_z + length * cos_n
        self.th[idx] = 0.0
        self.x[idx] = 0.0
        self.z[idx] = hip_z.mean(axis=1)
        self.fx[idx] = foot_x
        self.fz[idx] = foot_z
        for a in (self.vx, self.vz, self.w):
            a[idx] = 0.0
        for a in (self.fvx, self.fvz):
            a[idx] = 0.0
        legs = self._legs()
        self.q[idx] = np.concatenate([legs["qh"], legs["length"]], axis=1)[idx]
        self.qd[idx] = 0.0
        self.qd_prev[idx] = 0.0
        self.qdd[idx] = 0.0
        self.tau[idx] = 0.0
        self.grf[idx] = 0.0
        self.n_collision[idx] = 0.0
        self.gyro[idx] = 0.0
        self.q_meas[idx] = self.q[idx]
        self.qd_meas[idx] = 0.0

    # -- dynamics -----------------------------------------------------------------------
    def _simulate(self, actions: np.ndarray) -> None:
        cfg = self.cfg
        h = cfg.dt / cfg.substeps
        kp = np.array([HIP_KP, HIP_KP, LEG_KP, LEG_KP])[None, :] * self.kp_scale[:, None]
        kd = np.array([HIP_KD, HIP_KD, LEG_KD, LEG_KD])[None, :] * self.kd_scale[:, None]
        lim = np.array([HIP_TORQUE_LIMIT, HIP_TORQUE_LIMIT, LEG_FORCE_LIMIT, LEG_FORCE_LIMIT])
        damping = CONTACT_DAMPING * (1.0 - self.restitution) / 0.5
        mu = self.friction
        m, inertia = self.mass, self.inertia
        self.n_collision[:] = 0.0
        for k in range(cfg.substeps):
            use_new = (k >= self.delay_substeps)[:, None]
            a = np.where(use_new, actions, self.actions)
            q_ref = self.q_nominal[None, :] + self.scale_vec[None, :] * a
            legs = self._legs()
            q = np.concatenate([legs["qh"], legs["length"]], axis=1)
            qd = np.concatenate([legs["qh_dot"], legs["ql_dot"]], axis=1)
            tau = np.clip(kp * (q_ref - q) - kd * qd, -lim, lim)
            self.tau = tau
            tau_h, tau_l = tau[:, :2], tau[:, 2:]
            stop = STOP_STIFFNESS * np.maximum(0.0, LEG_LIMITS[0] - legs["length"])
            radial = tau_l + stop
            f_x = radial * legs["ux"] + tau_h / legs["safe"] * legs["tx"]
            f_z = radial * legs["uz"] + tau_h / legs["safe"] * legs["tz"]
            # reaction on the trunk: -F at each hip plus the motor reaction torque
            base_fx = -f_x.sum(axis=1)
            base_fz = -f_z.sum(axis=1)
            base_tq = (_cross(legs["rx"], legs["rz"], -f_x, -f_z) - tau_h).sum(axis=1)

            ground, slope = self._terrain(self.fx)
            inv = 1.0 / np.sqrt(1.0 + slope * slope)
            nx, nz = -slope * inv, inv
            tcx, tcz = inv, slope * inv
            pen = (ground - self.fz) * nz
            vn = self.fvx * nx + self.fvz * nz
            normal = np.where(pen > 0, np.maximum(0.0, CONTACT_STIFFNESS * pen - damping[:, None] * vn), 0.0)
            ox = f_x + normal * nx
            oz = f_z + normal * nz - FOOT_MASS * G
            vtx = self.fvx + h * ox / FOOT_MASS
            vtz = self.fvz + h * oz / FOOT_MASS
            vt = vtx * tcx + vtz * tcz
            cap = mu[:, None] * normal
            fric = np.clip(-FOOT_MASS * vt / h, -cap, cap)
            gx, gz = normal * nx + fric * tcx, normal * nz + fric * tcz
            self.grf[:, :, 0], self.grf[:, :, 1] = gx, gz
            self.fvx = vtx + h * fric * tcx / FOOT_MASS
            self.fvz = vtz + h * fric * tcz / FOOT_MASS
            self.fx = self.fx + h * self.fvx
            self.fz = self.fz + h * self.fvz

            # trunk corners touching the ground count as collisions and are pushed out
            exx, exz, ezx, ezz = self._frames()
            hits = np.zeros(self.n)
            for sx in (-0.5, 0.5):
                px = self.x + sx * BODY_LENGTH * exx - 0.5 * BODY_HEIGHT * ezx
                pz = self.z + sx * BODY_LENGTH * exz - 0.5 * BODY_HEIGHT * ezz
                gh = self.terrain_heights_at(px[:, None])[:, 0]
                depth = gh - pz
                hit = depth > 0
                hits += hit
                rx_c, rz_c = px - self.x, pz - self.z
                pvz = self.vz + self.w * rx_c
                pvx = self.vx - self.w * rz_c
                fzc = np.where(hit, np.maximum(0.0, CONTACT_STIFFNESS * depth - CONTACT_DAMPING * pvz), 0.0)
                fxc = np.where(hit, np.clip(-CONTACT_DAMPING * pvx, -mu * fzc, mu * fzc), 0.0)
                base_fx = base_fx + fxc
                base_fz = base_fz + fzc
                base_tq = base_tq + _cross(rx_c, rz_c, fxc, fzc)

            self.n_collision = np.maximum(self.n_collision, hits)
            self.vx = self.vx + h * base_fx / m
            self.vz = self.vz + h * (base_fz / m - G)
            self.w = self.w + h * base_tq / inertia
            self.x = self.x + h * self.vx
            self.z = self.z + h * self.vz
            self.th = self.th + h * self.w

        legs = self._legs()
        self.q = np.concatenate([legs["qh"], legs["length"]], axis=1)
        self.qd_prev = self.qd
        self.qd = np.concatenate([legs["qh_dot"], legs["ql_dot"]], axis=1)
        self.qdd = (self.qd - self.qd_prev) / cfg.dt
        noise = np.empty((self.n, 9))
        for j in range(self.n):
            noise[j] = self.rngs[j].standard_normal(9)
        ns = cfg.obs_noise
        self.gyro = self.w + ns * 0.05 * noise[:, 0]
        self.q_meas = self.q + ns * 0.005 * noise[:, 1:5]
        self.qd_meas = self.qd + ns * 0.1 * noise[:, 5:9]

    def _finite_rows(self) -> np.ndarray:
        state = np.column_stack([self.x, self.z, self.th, self.vx, self.vz, self.w,
                                 self.fx, self.fz, self.fvx, self.fvz])
        return np.all(np.isfinite(state), axis=1) & (np.abs(state).max(axis=1) < 1e4)

    # -- observations -------------------------------------------------------------------
    def base_height(self) -> np.ndarray:
        return self.z - self.terrain_heights_at(self.x[:, None])[:, 0]

    def _fallen(self) -> np.ndarray:
        # trunk contact also ends the episode: a slumped body can sit above the height threshold
        low = self.base_height() < 0.3 * self.cfg.reward.desired_height
        return low | (np.abs(self.th) > 1.0) | (self.n_collision > 0)

    def base_xy_velocity(self) -> np.ndarray:
        exx, exz, _, _ = self._frames()
        return np.column_stack([self.vx * exx + self.vz * exz, np.zeros(self.n)])

    def true_lin_velocity(self) -> np.ndarray:
        exx, exz, ezx, ezz = self._frames()
        return np.column_stack([self.vx * exx + self.vz * exz, self.vx * ezx + self.vz * ezz])

    def feet_heights(self) -> np.ndarray:
        return self.fz - self.terrain_heights_at(self.fx)

    def _n_limit(self) -> np.ndarray:
        lo = np.array([HIP_LIMITS[0], HIP_LIMITS[0], LEG_LIMITS[0], LEG_LIMITS[0]])
        hi = np.array([HIP_LIMITS[1], HIP_LIMITS[1], LEG_LIMITS[1], LEG_LIMITS[1]])
        margin = 0.02 * (hi - lo)
        return np.sum((self.q < lo + margin) | (self.q > hi - margin), axis=1).astype(np.float64)

    def _reward_state(self) -> RewardState:
        n = self.n
        exx, exz, ezx, ezz = self._frames()
        lin = np.zeros((n, 3))
        lin[:, 0] = self.vx * exx + self.vz * exz
        lin[:, 2] = self.vx * ezx + self.vz * ezz
        ang = np.zeros((n, 3))
        ang[:, 1] = self.w
        grav = np.column_stack([-exz, np.zeros(n), -ezz])
        feet_pos = np.stack([self.fx, np.zeros((n, 2)), self.fz], axis=2)
        feet_vel = np.stack([self.fvx, np.zeros((n, 2)), self.fvz], axis=2)
        contact = np.stack([self.grf[:, :, 0], np.zeros((n, 2)), self.grf[:, :, 1]], axis=2)
        return RewardState(
            command=self.command, lin_vel=lin, ang_vel=ang, projected_gravity=grav,
            base_height=self.base_height(), joint_vel=self.qd, joint_acc=self.qdd, torques=self.tau,
            feet_pos=feet_pos, feet_vel=feet_vel, feet_height=self.feet_heights(),
            contact_forces=contact, n_collision=self.n_collision.copy(), n_limit=self._n_limit())

    def _proprio(self) -> ProprioObs:
        exx, exz, ezx, ezz = self._frames()
        phase = 2.0 * np.pi * self.gait_phase()
        return ProprioObs(
            angular_velocity=self.gyro[:, None],
            projected_gravity=np.column_stack([-exz, -ezz]),
            joint_positions=self.q_meas - self.q_nominal[None, :],
            joint_velocities=self.qd_meas,
            command=self.command, previous_action=self.actions,
            extra=np.column_stack([np.sin(phase), np.cos(phase)]),
            scales={"angular_velocity": 0.25, "joint_positions": 1.0, "joint_velocities": 0.05})

    def hidden_context(self) -> np.ndarray:
        delay = self.delay_substeps * self.cfg.dt / self.cfg.substeps
        return np.column_stack([self.mass, self.com_off, self.friction, self.restitution,
                                self.kp_scale, self.kd_scale, delay])

    def _privileged(self, proprio: ProprioObs) -> PrivilegedState:
        offsets = (np.arange(self.cfg.height_samples) - (self.cfg.height_samples - 1) / 2) * self.cfg.height_spacing
        heights = self.terrain_heights_at(self.x[:, None] + offsets[None, :]) - self.z[:, None]
        return PrivilegedState(
            proprio=proprio, base_lin_velocity=self.true_lin_velocity(),
            terrain_heights=heights, contact_forces=self.grf.reshape(self.n, 4),
            joint_torques=self.tau, joint_accelerations=self.qdd,
            hidden_context=self.hidden_context(),
            scales={"base_lin_velocity": 2.0, "terrain_heights": 5.0, "contact_forces": 0.02,
                    "joint_torques": 0.05, "joint_accelerations": 0.002,
                    "hidden_context": np.array([0.25, 10.0, 1.0, 2.0, 5.0, 5.0, 50.0])},
            offsets={"terrain_heights": -self.cfg.reward.desired_height,
                     "hidden_context": np.array([BASE_MASS, 0.0, 1.0, 0.5, 1.0, 1.0, 0.01])})

    def push(self, idx, delta) -> None:
        idx = np.asarray(idx)
        self.vx[idx] += np.asarray(delta).reshape(len(idx), 2)[:, 0]
