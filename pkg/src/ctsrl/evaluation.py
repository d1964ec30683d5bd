"""Post-training measurements: tracking error, push survival, latent export, seed aggregation."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Iterable

import numpy as np

from .algo import deployed_encoder
from .envs import TIME_OUT, EnvConfig, EnvPool, Observation, env_class
from .networks import Networks
from .nn import ConfigurationError

Policy = Callable[[Observation], np.ndarray]


class DeployedPolicy:
    """Deterministic (mean) action from the encoder a mode deploys with."""

    def __init__(self, nets: Networks, mode: str = "concurrent"):
        self.nets = nets
        self.encoder = deployed_encoder(mode)
        self.latents_seen = 0
        self.max_norm_error = 0.0

    def latent(self, ob: Observation) -> np.ndarray:
        if self.encoder == "privileged_encoder":
            z = self.nets.encode_teacher(ob.priv)[0]
        else:
            z = self.nets.encode_student(ob.history)[0]
        self.latents_seen += z.shape[0]
        self.max_norm_error = max(self.max_norm_error, float(np.max(np.abs(np.linalg.norm(z, axis=1) - 1.0))))
        return z

    def __call__(self, ob: Observation) -> np.ndarray:
        est = self.nets.estimate(ob.history)[0] if self.nets.has_estimator else None
        return self.nets.policy_mean(ob.obs, self.latent(ob), est)[0]


def zero_policy(action_dim: int) -> Policy:
    return lambda ob: np.zeros((ob.obs.shape[0], action_dim))


def eval_env_config(cfg: EnvConfig, kind: str, level: int | None = None) -> EnvConfig:
    """Single-terrain copy with frozen curricula, fixed +/-1 m/s commands and no training pushes."""
    cur = replace(cfg.curriculum, terrain=False, commands=False, initial_lin_range=1.0, initial_yaw_range=1.0)
    return replace(cfg, terrain_kinds=(kind,), curriculum=cur, push_interval_s=0.0,
                   initial_level=cfg.initial_level if level is None else int(level))


def _pool(cfg: EnvConfig, n_envs: int, seed: int, env_cls=None) -> EnvPool:
    return EnvPool(env_cls or env_class(cfg.profile), cfg, n_envs, seed)


@dataclass
class EvalReport:
    tracking: dict = field(default_factory=dict)      # terrain -> (mean error, std)
    survival: dict = field(default_factory=dict)      # terrain -> survival %
    level_curve: list = field(default_factory=list)
    seeds: dict = field(default_factory=dict)         # metric -> (count, mean, std)


def eval_tracking(policy: Policy, env_cfg: EnvConfig, terrain_kinds: Iterable[str], n_envs: int = 64,
                  episodes: int = 1, seed: int = 0, steps_per_episode: int | None = None,
                  level: int | None = None, env_cls=None) -> dict:
    """Mean and std (over envs) of ||v_cmd_xy - v_xy|| per terrain kind, deterministic policy."""
    if episodes < 1 or n_envs < 1:
        raise ConfigurationError("episodes and n_envs must be >= 1")
    out = {}
    for kind in terrain_kinds:
        cfg = eval_env_config(env_cfg, kind, level)
        steps = episodes * (steps_per_episode or cfg.episode_steps)
        pool = _pool(cfg, n_envs, seed, env_cls)
        ob = pool.observe()
        err_sum = np.zeros(n_envs)
        for _ in range(steps):
            cmd = pool.commands()[:, :2]
            res = pool.step(policy(ob))
            err_sum += np.linalg.norm(cmd - res.velocity, axis=1)
            ob = res.observation
        per_env = err_sum / steps
        out[kind] = (float(per_env.mean()), float(per_env.std()))
        pool.close()
    return out


def eval_push_survival(policy: Policy, env_cfg: EnvConfig, terrain_kinds: Iterable[str], push_delta: float,
                       n_trials: int = 64, seed: int = 0, episode_steps: int | None = None,
                       level: int | None = None, env_cls=None) -> dict:
    """Percentage of episodes reaching TimeOut after one mid-episode velocity kick of ``push_delta``.

    The kick lands at a uniformly random step in the middle half of the episode, in a uniformly
    random planar direction (forward/backward for single-axis bodies).
    """
    if push_delta < 0:
        raise ConfigurationError("push_delta must be >= 0")
    out = {}
    for kind in terrain_kinds:
        cfg = eval_env_config(env_cfg, kind, level)
        if episode_steps is not None:
            cfg = replace(cfg, episode_steps=int(episode_steps))
        T = cfg.episode_steps
        rng = np.random.default_rng([seed, 99])
        push_step = rng.integers(T // 4, max(T // 4 + 1, 3 * T // 4), size=n_trials)
        pool = _pool(cfg, n_trials, seed, env_cls)
        if pool.lin_axes == 1:
            dirs = np.column_stack([rng.choice([-1.0, 1.0], size=n_trials), np.zeros(n_trials)])
        else:
            ang = rng.uniform(0.0, 2.0 * math.pi, size=n_trials)
            dirs = np.column_stack([np.cos(ang), np.sin(ang)])
        ob = pool.observe()
        outcome = np.zeros(n_trials, dtype=np.int64)
        for t in range(T):
            due = (push_step == t) & (outcome == 0)
            if push_delta > 0 and np.any(due):
                pool.push(due, push_delta * dirs)
                ob = pool.observe()
            res = pool.step(policy(ob))
            first = (outcome == 0) & (res.termination != 0)
            outcome[first] = res.termination[first]
            ob = res.observation
            if np.all(outcome != 0):
                break
        out[kind] = 100.0 * float(np.mean(outcome == TIME_OUT))
        pool.close()
    return out


def export_latents(nets: Networks, env_cfg: EnvConfig, terrain_kinds: Iterable[str], n_samples: int,
                   seed: int = 0, level: int | None = None, mode: str = "concurrent",
                   n_envs: int = 50, env_cls=None) -> list[tuple[str, np.ndarray]]:
    """``n_samples`` proprioceptive latents per terrain, collected while the deployed policy runs."""
    rows = []
    policy = DeployedPolicy(nets, mode)
    for kind in terrain_kinds:
        cfg = eval_env_config(env_cfg, kind, level)
        n = max(1, min(n_envs, n_samples))
        pool = _pool(cfg, n, seed, env_cls)
        ob = pool.observe()
        got = []
        count = 0
        while count < n_samples:
            z = nets.encode_student(ob.history)[0]
            take = z[: n_samples - count]
            got.append(take)
            count += take.shape[0]
            ob = pool.step(policy(ob)).observation
        rows.extend((kind, zi) for zi in np.concatenate(got))
        pool.close()
    return rows


def aggregate_seeds(values) -> tuple[int, float, float]:
    v = np.asarray(list(values), dtype=np.float64)
    if v.size == 0:
        return 0, float("nan"), float("nan")
    return int(v.size), float(v.mean()), float(v.std(ddof=1)) if v.size > 1 else 0.0


def linear_probe_accuracy(latents: np.ndarray, labels: np.ndarray, seed: int = 0) -> float:
    """Held-out accuracy of a least-squares one-vs-rest classifier (half train, half test)."""
    rng = np.random.default_rng(seed)
    classes = np.unique(labels)
    idx = rng.permutation(len(labels))
    tr, te = idx[: len(idx) // 2], idx[len(idx) // 2:]
    X = np.column_stack([latents, np.ones(len(labels))])
    Y = (labels[:, None] == classes[None, :]).astype(np.float64)
    W, *_ = np.linalg.lstsq(X[tr], Y[tr], rcond=None)
    pred = classes[np.argmax(X[te] @ W, axis=1)]
    return float(np.mean(pred == labels[te]))


# -- CSV writers -----------------------------------------------------------------------------
def write_tracking_csv(path, results: dict) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["terrain", "mean_error", "std"])
        for kind, (mean, std) in results.items():
            w.writerow([kind, repr(mean), repr(std)])


def write_survival_csv(path, results: dict, push_delta: float, n_trials: int) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["terrain", "push_delta", "survival_pct", "n_trials"])
        for kind, pct in results.items():
            w.writerow([kind, repr(float(push_delta)), repr(pct), n_trials])


def write_latents_csv(path, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        dim = len(rows[0][1]) if rows else 0
        w.writerow(["terrain"] + [f"z{i}" for i in range(dim)])
        for kind, z in rows:
            w.writerow([kind] + [repr(float(v)) for v in z])


def write_curves_csv(path, curves: Iterable[dict]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=["mode", "seed", "iteration", "terrain_level", "tracking_reward"])
        w.writeheader()
        for row in curves:
            w.writerow(row)
