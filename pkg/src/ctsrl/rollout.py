"""Trajectory collection for the teacher and student groups, and GAE."""
from __future__ import annotations

from dataclasses import dataclass, field
from enum import IntEnum

import numpy as np

from .envs import FALL_OVER, TIME_OUT, EnvPool
from .networks import Networks
from .nn import ConfigurationError, NonFiniteError


class GroupTag(IntEnum):
    TEACHER = 0
    STUDENT = 1


def assign_groups(n_envs: int, teacher_fraction: float = 0.5) -> np.ndarray:
    """Static split: the first ``round(n * fraction)`` envs are teachers."""
    if not 0.0 <= teacher_fraction <= 1.0:
        raise ConfigurationError("teacher_fraction must lie in [0, 1]")
    n_teacher = int(round(n_envs * teacher_fraction))
    groups = np.full(n_envs, int(GroupTag.STUDENT), dtype=np.int8)
    groups[:n_teacher] = int(GroupTag.TEACHER)
    return groups


@dataclass
class RolloutBatch:
    """Arrays are (T, N, ...) with T steps and N envs; ``groups`` is per env."""

    obs: np.ndarray
    priv: np.ndarray
    history: np.ndarray
    latents: np.ndarray
    actions: np.ndarray
    log_probs: np.ndarray
    action_mean: np.ndarray
    log_std: np.ndarray
    values: np.ndarray
    rewards: np.ndarray          # with the TimeOut bootstrap already folded in
    raw_rewards: np.ndarray
    dones: np.ndarray
    timeouts: np.ndarray
    falls: np.ndarray
    lin_tracking: np.ndarray
    groups: np.ndarray
    bootstrap_value: np.ndarray  # V(s_T, z_T) after the last step
    estimates: np.ndarray | None = None
    estimate_targets: np.ndarray | None = None
    summaries: list = field(default_factory=list)
    advantages: np.ndarray | None = None
    returns: np.ndarray | None = None

    @property
    def steps(self) -> int:
        return self.obs.shape[0]

    @property
    def n_envs(self) -> int:
        return self.obs.shape[1]

    def flat(self, name: str) -> np.ndarray:
        a = getattr(self, name)
        return a.reshape(self.steps * self.n_envs, *a.shape[2:])

    def row_groups(self) -> np.ndarray:
        return np.broadcast_to(self.groups[None, :], (self.steps, self.n_envs)).reshape(-1)


def compute_latents(nets: Networks, groups: np.ndarray, priv: np.ndarray, history: np.ndarray) -> np.ndarray:
    """Teacher rows encode the full state, student rows the observation history."""
    z = np.empty((priv.shape[0], nets.cfg.latent_dim))
    t = groups == GroupTag.TEACHER
    if np.any(t):
        z[t] = nets.encode_teacher(priv[t])[0]
    if np.any(~t):
        z[~t] = nets.encode_student(history[~t])[0]
    return z


def estimate_targets(pool: EnvPool, with_feet: bool) -> np.ndarray:
    v = pool.base_lin_velocity()
    return np.concatenate([v, pool.feet_heights()], axis=1) if with_feet else v


def collect_rollouts(nets: Networks, pool: EnvPool, groups: np.ndarray, steps: int,
                     rng: np.random.Generator, gamma: float = 0.99, deterministic: bool = False,
                     estimator_feet: bool = False) -> RolloutBatch:
    """Step every env ``steps`` times with the current networks.

    Envs auto-reset inside the pool. A TimeOut adds ``gamma * V(s_T, z_T)`` to the final
    reward so the episode cut does not look like a failure; a FallOver adds nothing.
    """
    if steps < 1:
        raise ConfigurationError("steps must be >= 1")
    groups = np.asarray(groups)
    N, A = pool.num_envs, pool.action_dim
    if groups.shape != (N,):
        raise ConfigurationError(f"groups must have shape ({N},)")
    use_est = nets.has_estimator
    buf = {k: [] for k in ("obs", "priv", "history", "latents", "actions", "log_probs", "action_mean",
                           "values", "rewards", "raw_rewards", "dones", "timeouts", "falls",
                           "lin_tracking", "estimates", "estimate_targets")}
    summaries = []
    ob = pool.observe()
    for t in range(steps):
        z = compute_latents(nets, groups, ob.priv, ob.history)
        _check_finite(z, "latent")
        est = None
        if use_est:
            est = nets.estimate(ob.history)[0]
            buf["estimates"].append(est)
            buf["estimate_targets"].append(estimate_targets(pool, estimator_feet))
        mean = nets.policy_mean(ob.obs, z, est)[0]
        dist = nets.distribution(mean)
        noise = rng.standard_normal((N, A))
        actions = mean.copy() if deterministic else mean + dist.std * noise
        _check_finite(actions, "action")
        value = nets.value(ob.priv, z)[0]
        res = pool.step(actions)

        reward = res.reward.copy()
        timeout = res.termination == TIME_OUT
        if np.any(timeout):
            idx = np.flatnonzero(timeout)
            zt = compute_latents(nets, groups[idx], res.terminal_priv[idx], res.terminal_history[idx])
            reward[idx] += gamma * nets.value(res.terminal_priv[idx], zt)[0]
        for k, v in (("obs", ob.obs), ("priv", ob.priv), ("history", ob.history), ("latents", z),
                     ("actions", actions), ("log_probs", dist.log_prob(actions)), ("action_mean", mean),
                     ("values", value), ("rewards", reward), ("raw_rewards", res.reward),
                     ("dones", (res.termination != 0).astype(np.float64)),
                     ("timeouts", timeout), ("falls", res.termination == FALL_OVER),
                     ("lin_tracking", res.lin_tracking)):
            buf[k].append(v)
        summaries.extend(res.summaries)
        ob = res.observation

    z = compute_latents(nets, groups, ob.priv, ob.history)
    bootstrap = nets.value(ob.priv, z)[0]
    arr = {k: (np.stack(v) if v else None) for k, v in buf.items()}
    return RolloutBatch(log_std=nets.params["policy"].log_std.copy(), groups=groups.copy(),
                        bootstrap_value=bootstrap, summaries=summaries, **arr)


def _check_finite(x: np.ndarray, what: str) -> None:
    bad = ~np.all(np.isfinite(x), axis=1)
    if np.any(bad):
        raise NonFiniteError(f"non-finite {what} in env {int(np.flatnonzero(bad)[0])}")


def compute_gae(rewards, values, dones, bootstrap_value, gamma: float = 0.99, lam: float = 0.95):
    """Generalised advantage estimation along axis 0; trailing axes are independent envs.

    ``dones[t] = 1`` cuts both the value bootstrap and the advantage recursion after step t.
    """
    rewards = np.asarray(rewards, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    dones = np.asarray(dones, dtype=np.float64)
    if not (rewards.shape == values.shape == dones.shape):
        raise ConfigurationError("rewards, values and dones must have equal shapes")
    T = rewards.shape[0]
    adv = np.zeros_like(rewards)
    next_value = np.broadcast_to(np.asarray(bootstrap_value, dtype=np.float64), rewards.shape[1:])
    last = np.zeros(rewards.shape[1:])
    for t in range(T - 1, -1, -1):
        keep = 1.0 - dones[t]
        delta = rewards[t] + gamma * next_value * keep - values[t]
        last = delta + gamma * lam * keep * last
        adv[t] = last
        next_value = values[t]
    return adv, adv + values


def normalize_advantages(adv: np.ndarray, groups: np.ndarray) -> np.ndarray:
    """Zero mean, unit variance within each group (columns are envs)."""
    out = adv.copy()
    for g in np.unique(groups):
        cols = groups == g
        block = adv[:, cols]
        out[:, cols] = (block - block.mean()) / (block.std() + 1e-8)
    return out
