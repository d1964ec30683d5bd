"""Observation containers, history buffer and the vectorised env skeleton."""
from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from ..nn import ConfigurationError
from .curriculum import (CommandRange, CurriculumConfig, EpisodeSummary, curriculum_update,
                         expand_range, sample_command)
from .randomization import DomainRandomization
from .rewards import RewardConfig, RewardState, compute_reward, foot_phases
from .terrain import (HALF_LENGTH, RESOLUTION, TerrainKind, generate_terrain, interp_height)

log = logging.getLogger(__name__)

RUNNING, FALL_OVER, TIME_OUT = 0, 1, 2
TERMINATION_NAMES = {RUNNING: "Running", FALL_OVER: "FallOver", TIME_OUT: "TimeOut"}


@dataclass
class ProprioObs:
    """Student-visible observation, batched (N, ...). ``extra`` holds profile-specific
    proprioceptive channels (accelerometer for the point mass, gait clock for the walker)."""

    angular_velocity: np.ndarray
    projected_gravity: np.ndarray
    joint_positions: np.ndarray
    joint_velocities: np.ndarray
    command: np.ndarray
    previous_action: np.ndarray
    extra: np.ndarray
    scales: dict = field(default_factory=dict, repr=False)

    ORDER = ("angular_velocity", "projected_gravity", "joint_positions", "joint_velocities",
             "command", "previous_action", "extra")

    def flat(self) -> np.ndarray:
        parts = [getattr(self, k) * self.scales.get(k, 1.0) for k in self.ORDER]
        return np.ascontiguousarray(np.concatenate(parts, axis=1))


@dataclass
class PrivilegedState:
    proprio: ProprioObs
    base_lin_velocity: np.ndarray
    terrain_heights: np.ndarray
    contact_forces: np.ndarray
    joint_torques: np.ndarray
    joint_accelerations: np.ndarray
    hidden_context: np.ndarray
    scales: dict = field(default_factory=dict, repr=False)
    offsets: dict = field(default_factory=dict, repr=False)

    ORDER = ("base_lin_velocity", "terrain_heights", "contact_forces", "joint_torques",
             "joint_accelerations", "hidden_context")

    def flat(self, proprio_flat: np.ndarray | None = None) -> np.ndarray:
        head = self.proprio.flat() if proprio_flat is None else proprio_flat
        n = head.shape[0]
        parts = [head] + [(getattr(self, k).reshape(n, -1) - self.offsets.get(k, 0.0)) * self.scales.get(k, 1.0)
                          for k in self.ORDER]
        return np.ascontiguousarray(np.concatenate(parts, axis=1))


class ObsHistory:
    """Last H+1 flat observations per env, oldest first."""

    def __init__(self, n_envs: int, obs_dim: int, history_len: int = 5):
        if history_len < 0:
            raise ConfigurationError("history_len must be >= 0")
        self.H = history_len
        self.buf = np.zeros((n_envs, history_len + 1, obs_dim))

    def reset(self, idx, obs: np.ndarray) -> None:
        self.buf[idx] = obs[:, None, :]

    def push(self, obs: np.ndarray) -> None:
        self.buf[:, :-1] = self.buf[:, 1:]
        self.buf[:, -1] = obs

    def flat(self) -> np.ndarray:
        return self.buf.reshape(self.buf.shape[0], -1).copy()

    @property
    def latest(self) -> np.ndarray:
        return self.buf[:, -1]


@dataclass
class EnvConfig:
    profile: str = "ctx-pointmass"
    reward_profile: str = "quadruped"
    history_len: int = 5
    episode_steps: int = 1000
    dt: float = 0.02
    substeps: int = 4
    action_scale: float = 0.25
    terrain_kinds: tuple[str, ...] = ("flat",)
    initial_level: int = 0
    height_samples: int = 11
    height_spacing: float = 0.1
    push_interval_s: float = 0.0
    push_max: float = 0.5
    obs_noise: float = 1.0
    randomization: DomainRandomization = field(default_factory=DomainRandomization)
    curriculum: CurriculumConfig = field(default_factory=CurriculumConfig)
    reward: RewardConfig = field(default_factory=RewardConfig)

    @property
    def control_hz(self) -> float:
        return 1.0 / self.dt


@dataclass
class Observation:
    obs: np.ndarray        # (N, O) student-visible o_t
    priv: np.ndarray       # (N, P) full state s_t; priv[:, :O] is o_t
    history: np.ndarray    # (N, (H+1)*O)


@dataclass
class StepResult:
    observation: Observation
    reward: np.ndarray
    termination: np.ndarray            # RUNNING / FALL_OVER / TIME_OUT
    lin_tracking: np.ndarray
    terms: dict
    terminal_priv: np.ndarray          # pre-reset s_T (rows valid where termination != RUNNING)
    terminal_history: np.ndarray
    summaries: list = field(default_factory=list)
    invalid: np.ndarray | None = None
    velocity: np.ndarray | None = None     # planar base velocity after the step, before any reset


class VecEnv:
    """A block of independent environments stepped together with elementwise math.

    Every env owns a generator seeded from ``(seed, env_id)`` so results do not depend on
    how envs are split into blocks.
    """

    n_feet = 0
    joint_dim = 0
    lin_axes = 2
    yaw_command = True

    def __init__(self, cfg: EnvConfig, env_ids, seed: int,
                 command_range: Callable[[], CommandRange] | None = None):
        self.cfg = cfg
        self.env_ids = np.asarray(env_ids, dtype=np.int64)
        self.n = len(self.env_ids)
        self.seed = int(seed)
        self.rngs = [np.random.default_rng([self.seed, int(i), 7]) for i in self.env_ids]
        self._command_range = command_range or (lambda: CommandRange(
            cfg.curriculum.initial_lin_range, cfg.curriculum.initial_yaw_range))
        self.kinds = [TerrainKind.parse(cfg.terrain_kinds[int(i) % len(cfg.terrain_kinds)])
                      for i in self.env_ids]
        self.levels = np.full(self.n, int(cfg.initial_level), dtype=np.int64)
        n_field = int(round(2 * HALF_LENGTH / RESOLUTION)) + 1
        self.heightfields = np.zeros((self.n, n_field))
        self.step_count = np.zeros(self.n, dtype=np.int64)
        self.command = np.zeros((self.n, 3))
        self.actions = np.zeros((self.n, self.action_dim))
        self.prev_actions = np.zeros((self.n, self.action_dim))
        self.prev_prev_actions = np.zeros((self.n, self.action_dim))
        self.delay_substeps = np.zeros(self.n, dtype=np.int64)
        self.dr: list[dict] = [{} for _ in range(self.n)]
        self.friction = np.ones(self.n)
        self.restitution = np.full(self.n, 0.5)
        self.next_push = np.full(self.n, np.inf)
        self._ep_track = np.zeros(self.n)
        self._ep_progress = np.zeros(self.n)
        self._ep_commanded = np.zeros(self.n)
        self.history = ObsHistory(self.n, self.obs_dim, cfg.history_len)
        self._alloc()
        self.reset_all()

    # -- profile hooks -------------------------------------------------------------------
    action_dim = 0
    obs_dim = 0

    def _alloc(self) -> None:
        pass

    def _reset_physics(self, idx: np.ndarray) -> None:
        raise NotImplementedError

    def _simulate(self, actions: np.ndarray) -> None:
        raise NotImplementedError

    def _reward_state(self) -> RewardState:
        raise NotImplementedError

    def _proprio(self) -> ProprioObs:
        raise NotImplementedError

    def _privileged(self, proprio: ProprioObs) -> PrivilegedState:
        raise NotImplementedError

    def _fallen(self) -> np.ndarray:
        return np.zeros(self.n, dtype=bool)

    def _finite_rows(self) -> np.ndarray:
        return np.ones(self.n, dtype=bool)

    def base_xy_velocity(self) -> np.ndarray:
        raise NotImplementedError

    def push(self, idx, delta: np.ndarray) -> None:
        raise NotImplementedError

    def feet_heights(self) -> np.ndarray:
        return np.zeros((self.n, 0))

    def true_lin_velocity(self) -> np.ndarray:
        raise NotImplementedError

    # -- shared machinery ---------------------------------------------------------------
    def terrain_heights_at(self, x: np.ndarray) -> np.ndarray:
        return interp_height(self.heightfields, -HALF_LENGTH, RESOLUTION, x)

    def gait_phase(self) -> np.ndarray:
        t = self.step_count * self.cfg.dt
        return np.mod(t / self.cfg.reward.gait_period, 1.0)

    def _reset_idx(self, idx: np.ndarray) -> None:
        cr = self._command_range()
        for j in idx:
            rng = self.rngs[j]
            sample = self.cfg.randomization.sample(rng)
            self.dr[j] = sample
            self.friction[j] = sample["friction"]
            self.restitution[j] = sample["restitution"]
            self.delay_substeps[j] = int(round(sample["action_delay"] / (self.cfg.dt / self.cfg.substeps)))
            terrain_seed = int(rng.integers(0, 2**31 - 1))
            prof = generate_terrain(self.kinds[j], int(self.levels[j]), terrain_seed,
                                    max_level=self.cfg.curriculum.max_level)
            self.heightfields[j] = prof.heightfield
            self.command[j] = sample_command(rng, cr, self.lin_axes, self.yaw_command)
            if self.cfg.push_interval_s > 0:
                self.next_push[j] = self._draw_push_step(rng)
        self.step_count[idx] = 0
        self.actions[idx] = 0.0
        self.prev_actions[idx] = 0.0
        self.prev_prev_actions[idx] = 0.0
        self._ep_track[idx] = 0.0
        self._ep_progress[idx] = 0.0
        self._ep_commanded[idx] = 0.0
        self._reset_physics(idx)
        obs = self._proprio().flat()
        self.history.reset(idx, obs[idx])

    def _draw_push_step(self, rng) -> float:
        interval = self.cfg.push_interval_s / self.cfg.dt
        return float(rng.integers(int(0.5 * interval), int(1.5 * interval) + 1))

    def reset_all(self) -> Observation:
        self._reset_idx(np.arange(self.n))
        return self.observe()

    def observe(self) -> Observation:
        proprio = self._proprio()
        obs = proprio.flat()
        priv = self._privileged(proprio).flat(obs)
        return Observation(obs, priv, self.history.flat())

    def privileged_state(self) -> PrivilegedState:
        return self._privileged(self._proprio())

    def step(self, actions) -> StepResult:
        actions = np.asarray(actions, dtype=np.float64).reshape(self.n, self.action_dim)
        if not np.all(np.isfinite(actions)):
            raise ConfigurationError("non-finite action passed to env.step")
        self._simulate(actions)
        self.step_count += 1
        finite = self._finite_rows()
        rs = self._reward_state()
        phase = foot_phases(self.gait_phase(), self.n_feet) if self.n_feet else None
        reward, terms = compute_reward(rs, actions, self.actions, self.prev_actions,
                                       self.cfg.reward, phase, self.cfg.dt)
        self.prev_prev_actions = self.prev_actions
        self.prev_actions = self.actions
        self.actions = actions.copy()
        invalid = ~finite | ~np.isfinite(reward)
        if np.any(invalid):
            for j in np.flatnonzero(invalid):
                log.warning("env %d: non-finite dynamics, episode terminated", int(self.env_ids[j]))
            reward = np.where(invalid, 0.0, reward)
            terms = {k: np.where(invalid, 0.0, v) for k, v in terms.items()}
            self._sanitize(np.flatnonzero(invalid))

        term = np.full(self.n, RUNNING, dtype=np.int64)
        term[self.step_count >= self.cfg.episode_steps] = TIME_OUT
        term[self._fallen() | invalid] = FALL_OVER

        v = self.base_xy_velocity()
        cmd = self.command[:, :2]
        speed = np.linalg.norm(cmd, axis=1)
        self._ep_track += terms["lin_tracking"]
        self._ep_commanded += speed * self.cfg.dt
        self._ep_progress += np.where(speed > 1e-9, np.sum(v * cmd, axis=1) / np.maximum(speed, 1e-9), 0.0) * self.cfg.dt

        self.history.push(self._proprio().flat())
        obs_now = self.observe()
        done = np.flatnonzero(term != RUNNING)
        summaries = []
        for j in done:
            steps = int(self.step_count[j])
            summaries.append(EpisodeSummary(
                env_id=int(self.env_ids[j]), level=int(self.levels[j]),
                mean_lin_tracking=float(self._ep_track[j] / max(steps, 1)),
                progress=float(self._ep_progress[j]), commanded=float(self._ep_commanded[j]),
                timed_out=bool(term[j] == TIME_OUT), steps=steps))
            self.levels[j], _ = curriculum_update(summaries[-1], self.cfg.curriculum)
        terminal_priv = obs_now.priv.copy()
        terminal_hist = obs_now.history.copy()

        if done.size:
            self._reset_idx(done)
        resample = np.flatnonzero((term == RUNNING) & (self.step_count % self.cfg.curriculum.resample_steps == 0))
        if resample.size:
            cr = self._command_range()
            for j in resample:
                self.command[j] = sample_command(self.rngs[j], cr, self.lin_axes, self.yaw_command)
        if self.cfg.push_interval_s > 0:
            due = np.flatnonzero((term == RUNNING) & (self.step_count >= self.next_push))
            for j in due:
                rng = self.rngs[j]
                self.push([j], self._random_push(rng, rng.uniform(0.0, self.cfg.push_max))[None])
                self.next_push[j] = self.step_count[j] + self._draw_push_step(rng)
        if done.size or resample.size:
            obs_now = self.observe()
        return StepResult(obs_now, reward, term, terms["lin_tracking"], terms,
                          terminal_priv, terminal_hist, summaries, invalid, v)

    def _random_push(self, rng, magnitude: float) -> np.ndarray:
        if self.lin_axes == 1:
            return np.array([magnitude * (1.0 if rng.random() < 0.5 else -1.0), 0.0])
        ang = rng.uniform(0.0, 2.0 * np.pi)
        return magnitude * np.array([np.cos(ang), np.sin(ang)])

    def _sanitize(self, idx) -> None:
        """Put non-finite rows into a harmless state before they are reset."""
        self._reset_physics(np.asarray(idx))


class EnvPool:
    """All environments of a run, split into blocks that may be stepped by worker threads."""

    def __init__(self, env_cls, cfg: EnvConfig, n_envs: int, seed: int, workers: int = 1):
        if n_envs < 1:
            raise ConfigurationError("n_envs must be >= 1")
        self.cfg = cfg
        self.num_envs = n_envs
        self.command_range = CommandRange(cfg.curriculum.initial_lin_range, cfg.curriculum.initial_yaw_range)
        workers = max(1, min(int(workers), n_envs))
        bounds = np.linspace(0, n_envs, workers + 1).astype(int)
        self.blocks = [env_cls(cfg, np.arange(bounds[i], bounds[i + 1]), seed, self._range)
                       for i in range(workers)]
        self._executor = ThreadPoolExecutor(workers) if workers > 1 else None
        b0 = self.blocks[0]
        self.obs_dim, self.action_dim = b0.obs_dim, b0.action_dim
        self.priv_dim = b0.observe().priv.shape[1]
        self.history_dim = (cfg.history_len + 1) * self.obs_dim
        self.n_feet = b0.n_feet
        self.lin_axes = b0.lin_axes

    def _range(self) -> CommandRange:
        return self.command_range

    def _map(self, fn, *args):
        if self._executor is None:
            return [fn(b, *a) for b, *a in zip(self.blocks, *args)] if args else [fn(b) for b in self.blocks]
        if args:
            return list(self._executor.map(lambda p: fn(p[0], *p[1:]), zip(self.blocks, *args)))
        return list(self._executor.map(fn, self.blocks))

    def _split(self, arr):
        out, start = [], 0
        for b in self.blocks:
            out.append(arr[start:start + b.n])
            start += b.n
        return out

    def observe(self) -> Observation:
        parts = self._map(lambda b: b.observe())
        return Observation(*(np.concatenate([getattr(p, k) for p in parts]) for k in ("obs", "priv", "history")))

    def reset(self) -> Observation:
        self._map(lambda b: b.reset_all())
        return self.observe()

    def step(self, actions) -> StepResult:
        parts = self._map(lambda b, a: b.step(a), self._split(np.asarray(actions)))
        cat = lambda k: np.concatenate([getattr(p, k) for p in parts])
        obs = Observation(*(np.concatenate([getattr(p.observation, k) for p in parts])
                            for k in ("obs", "priv", "history")))
        terms = {k: np.concatenate([p.terms[k] for p in parts]) for k in parts[0].terms}
        summaries = [s for p in parts for s in p.summaries]
        res = StepResult(obs, cat("reward"), cat("termination"), cat("lin_tracking"), terms,
                         cat("terminal_priv"), cat("terminal_history"), summaries, cat("invalid"),
                         cat("velocity"))
        cur = self.cfg.curriculum
        if cur.commands and any(curriculum_update(s, cur)[1] for s in summaries):
            self.command_range = expand_range(self.command_range, cur)
        return res

    @property
    def levels(self) -> np.ndarray:
        return np.concatenate([b.levels for b in self.blocks])

    def base_xy_velocity(self) -> np.ndarray:
        return np.concatenate(self._map(lambda b: b.base_xy_velocity()))

    def commands(self) -> np.ndarray:
        return np.concatenate([b.command for b in self.blocks])

    def set_commands(self, cmd: np.ndarray) -> None:
        for b, c in zip(self.blocks, self._split(cmd)):
            b.command[:] = c

    def push(self, env_mask: np.ndarray, deltas: np.ndarray) -> None:
        for b, m, d in zip(self.blocks, self._split(env_mask), self._split(deltas)):
            idx = np.flatnonzero(m)
            if idx.size:
                b.push(idx, d[idx])

    def feet_heights(self) -> np.ndarray:
        return np.concatenate([b.feet_heights() for b in self.blocks])

    def base_lin_velocity(self) -> np.ndarray:
        return np.concatenate([b.true_lin_velocity() for b in self.blocks])

    def close(self) -> None:
        if self._executor is not None:
            self._executor.shutdown()
