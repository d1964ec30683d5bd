"""Concurrent teacher-student PPO and its ablation modes.

One iteration:
  1. collect ``steps_per_iter`` steps from every env with the current networks;
  2. GAE per env, advantages normalised per group;
  3. PPO epochs: ascend the teacher and student clipped objectives (the teacher one also
     trains the privileged encoder) and descend the value loss on the critic;
  4. reconstruction epochs: pull the proprioceptive encoder towards the privileged one.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable

import numpy as np

from .envs import EnvPool
from .networks import Networks
from .nn import (AdamState, ConfigurationError, DiagGaussian, NetworkParams, NonFiniteError,
                 adam_step, clip_grad_norm, mlp_backward)
from .rollout import (GroupTag, RolloutBatch, assign_groups, collect_rollouts, compute_gae,
                      normalize_advantages)

log = logging.getLogger(__name__)


class Mode(str, Enum):
    CONCURRENT = "concurrent"
    TWO_STAGE = "two_stage"
    BASELINE = "baseline"
    ORACLE = "oracle"
    ESTIMATOR_NET = "estimator_net"

    @classmethod
    def parse(cls, value) -> "Mode":
        if isinstance(value, Mode):
            return value
        try:
            return cls(str(value).lower().replace("-", "_"))
        except ValueError:
            raise ConfigurationError(
                f"unknown mode {value!r}; expected one of {[m.value for m in cls]}") from None


@dataclass
class AlgoConfig:
    mode: str = "concurrent"
    clip_range: float = 0.2
    entropy_coef: float = 0.01
    gamma: float = 0.99
    gae_lambda: float = 0.95
    desired_kl: float = 0.01
    adaptive_lr: bool = True
    lr_ppo: float = 1e-3
    lr_min: float = 1e-5
    lr_max: float = 1e-2
    ppo_epochs: int = 5
    minibatches: int = 4
    lr_rec: float = 1e-3
    rec_epochs: int = 5
    rec_minibatches: int = 4
    steps_per_iter: int = 24
    max_grad_norm: float = 1.0
    normalize_advantages: bool = True
    critic_through_encoder: bool = False
    refresh_student_latent: bool = False
    teacher_fraction: float = 0.5
    use_estimator: bool = False
    estimator_lr: float = 1e-3
    two_stage_split: float = 0.6          # fraction of iterations spent on the teacher phase
    imitation_weight: float = 1.0
    reconstruction_weight: float = 1.0

    def validate(self) -> None:
        Mode.parse(self.mode)
        checks = [("clip_range", self.clip_range > 0), ("ppo_epochs", self.ppo_epochs >= 0),
                  ("rec_epochs", self.rec_epochs >= 0), ("minibatches", self.minibatches >= 1),
                  ("rec_minibatches", self.rec_minibatches >= 1), ("steps_per_iter", self.steps_per_iter >= 1),
                  ("lr_ppo", self.lr_ppo > 0), ("lr_rec", self.lr_rec > 0), ("desired_kl", self.desired_kl > 0),
                  ("lr_min", 0 < self.lr_min <= self.lr_max), ("gamma", 0 <= self.gamma <= 1),
                  ("gae_lambda", 0 <= self.gae_lambda <= 1), ("teacher_fraction", 0 <= self.teacher_fraction <= 1),
                  ("two_stage_split", 0 <= self.two_stage_split <= 1)]
        for name, ok in checks:
            if not ok:
                raise ConfigurationError(f"algo.{name}: invalid value {getattr(self, name)!r}")

    @property
    def mode_enum(self) -> Mode:
        return Mode.parse(self.mode)

    @property
    def estimator_enabled(self) -> bool:
        return self.mode_enum is Mode.ESTIMATOR_NET or self.use_estimator


# -- loss functions -------------------------------------------------------------------------
def ppo_ratio(new_log_prob, old_log_prob):
    return np.exp(np.asarray(new_log_prob) - np.asarray(old_log_prob))


def clipped_objective(ratio, adv, clip_range: float):
    """Per-row ``min(r A, clip(r, 1-eps, 1+eps) A)``."""
    ratio, adv = np.asarray(ratio, dtype=np.float64), np.asarray(adv, dtype=np.float64)
    return np.minimum(ratio * adv, np.clip(ratio, 1.0 - clip_range, 1.0 + clip_range) * adv)


def clipped_objective_weight(ratio, adv, clip_range: float, clipped: bool = True):
    """d objective / d log_prob per row: ``r A`` where the unclipped branch is the minimum, else 0."""
    ratio, adv = np.asarray(ratio), np.asarray(adv)
    if not clipped:
        return ratio * adv
    active = ratio * adv <= np.clip(ratio, 1.0 - clip_range, 1.0 + clip_range) * adv
    return np.where(active, ratio * adv, 0.0)


def ppo_clip_loss(ratio, adv, clip_range: float, entropy=None, entropy_coef: float = 0.0) -> float:
    """Objective to maximise for one group: mean clipped surrogate plus the entropy bonus."""
    ratio = np.asarray(ratio)
    if ratio.size == 0:
        raise ConfigurationError("ppo_clip_loss needs at least one row of the group")
    obj = float(np.mean(clipped_objective(ratio, adv, clip_range)))
    if entropy is not None:
        obj += entropy_coef * float(np.mean(entropy))
    return obj


def value_loss(values, returns) -> float:
    d = np.asarray(values, dtype=np.float64) - np.asarray(returns, dtype=np.float64)
    return float(np.mean(d * d))


def reconstruction_loss(z_student, z_teacher) -> float:
    d = np.asarray(z_student) - np.asarray(z_teacher)
    return float(np.mean(np.sum(d * d, axis=-1)))


def estimator_loss(prediction, target) -> float:
    """Mean over rows of the squared error summed over target components."""
    if prediction is None:
        raise ConfigurationError("estimator head is disabled")
    d = np.asarray(prediction) - np.asarray(target)
    return float(np.mean(np.sum(d * d, axis=-1)))


def adaptive_lr(current_lr: float, measured_kl: float, desired_kl: float = 0.01,
                lr_min: float = 1e-5, lr_max: float = 1e-2) -> float:
    if current_lr <= 0:
        raise ConfigurationError("learning rate must be positive")
    lr = current_lr
    if measured_kl > 2.0 * desired_kl:
        lr = lr / 1.5
    elif measured_kl < 0.5 * desired_kl:
        lr = lr * 1.5
    return float(min(max(lr, lr_min), lr_max))


# -- reporting ------------------------------------------------------------------------------
@dataclass
class UpdateReport:
    iteration: int = 0
    phase: int = 1
    mean_reward_teacher: float = float("nan")
    mean_reward_student: float = float("nan")
    tracking_teacher: float = float("nan")
    tracking_student: float = float("nan")
    terrain_level: float = 0.0
    ppo_loss_teacher: float = 0.0
    ppo_loss_student: float = 0.0
    value_loss: float = 0.0
    rec_loss: float = 0.0
    imitation_loss: float = 0.0
    estimator_loss: float = 0.0
    mean_kl: float = 0.0
    entropy: float = 0.0
    lr: float = 0.0
    grad_norms: dict = field(default_factory=dict)
    first_ratio_error: float = 0.0
    first_grad_gap: float = 0.0
    episodes: int = 0
    falls: int = 0

    CSV_FIELDS = ("iteration", "phase", "mean_reward_teacher", "mean_reward_student", "tracking_teacher",
                  "tracking_student", "terrain_level", "ppo_loss_teacher", "ppo_loss_student", "value_loss",
                  "rec_loss", "imitation_loss", "estimator_loss", "mean_kl", "entropy", "lr", "episodes", "falls")

    def row(self) -> dict:
        return {k: getattr(self, k) for k in self.CSV_FIELDS}


class TrainingAborted(RuntimeError):
    def __init__(self, message: str, checkpoint_path: str | None = None):
        super().__init__(message)
        self.checkpoint_path = checkpoint_path


class _Mean:
    def __init__(self):
        self.total, self.count = {}, {}

    def add(self, key, value):
        self.total[key] = self.total.get(key, 0.0) + float(value)
        self.count[key] = self.count.get(key, 0) + 1

    def get(self, key, default=0.0):
        return self.total[key] / self.count[key] if key in self.count else default


# -- trainer --------------------------------------------------------------------------------
class Trainer:
    """Owns the networks' optimiser state and runs training iterations on an env pool."""

    def __init__(self, cfg: AlgoConfig, nets: Networks, pool: EnvPool, seed: int = 0,
                 total_iterations: int = 0, on_abort: Callable[[Networks, int], str] | None = None):
        cfg.validate()
        self.cfg = cfg
        self.mode = cfg.mode_enum
        if cfg.estimator_enabled and not nets.has_estimator:
            raise ConfigurationError(f"mode {self.mode.value} needs networks built with an estimator head")
        self.nets = nets
        self.pool = pool
        self.rng = np.random.default_rng([int(seed), 1])
        self.opt = {name: AdamState.for_params(p) for name, p in nets.params.items()}
        self.lr = cfg.lr_ppo
        self.iteration = 0
        self.phase_boundary = int(round(total_iterations * cfg.two_stage_split))
        self.on_abort = on_abort
        self.estimator_feet = self.mode is Mode.ESTIMATOR_NET

    # -- group layout -------------------------------------------------------------------
    @property
    def phase(self) -> int:
        if self.mode is Mode.TWO_STAGE and self.iteration >= self.phase_boundary:
            return 2
        return 1

    def groups(self) -> np.ndarray:
        n = self.pool.num_envs
        if self.mode is Mode.CONCURRENT:
            return assign_groups(n, self.cfg.teacher_fraction)
        if self.mode is Mode.ORACLE or (self.mode is Mode.TWO_STAGE and self.phase == 1):
            return assign_groups(n, 1.0)
        return assign_groups(n, 0.0)

    @property
    def student_by_policy_gradient(self) -> bool:
        return self.mode in (Mode.BASELINE, Mode.ESTIMATOR_NET)

    # -- public API ---------------------------------------------------------------------
    def train_iteration(self) -> UpdateReport:
        snapshot = self.nets.copy()
        phase = self.phase
        try:
            batch = collect_rollouts(self.nets, self.pool, self.groups(), self.cfg.steps_per_iter,
                                     self.rng, self.cfg.gamma, estimator_feet=self.estimator_feet)
            report = self.update(batch, phase)
        except NonFiniteError as exc:
            path = self.on_abort(snapshot, self.iteration) if self.on_abort else None
            raise TrainingAborted(f"iteration {self.iteration}: {exc}", path) from exc
        report.iteration = self.iteration
        report.terrain_level = float(np.mean(self.pool.levels))
        self.iteration += 1
        return report

    def update(self, batch: RolloutBatch, phase: int = 1) -> UpdateReport:
        """Steps 2-4 of an iteration on an already collected batch."""
        report = UpdateReport(phase=phase)
        self._rollout_stats(batch, report)
        adv, ret = compute_gae(batch.rewards, batch.values, batch.dones, batch.bootstrap_value,
                               self.cfg.gamma, self.cfg.gae_lambda)
        if self.cfg.normalize_advantages:
            adv = normalize_advantages(adv, batch.groups)
        batch.advantages, batch.returns = adv, ret
        if phase == 2:
            self._distill(batch, report)
        else:
            self._ppo(batch, report)
            if self.mode is Mode.CONCURRENT:
                self._reconstruct(batch, report)
        report.lr = self.lr
        for k, v in report.row().items():
            if isinstance(v, float) and k.endswith("loss") and not np.isfinite(v):
                raise NonFiniteError(f"non-finite {k}")
        return report

    # -- pieces -------------------------------------------------------------------------
    def _rollout_stats(self, batch: RolloutBatch, report: UpdateReport) -> None:
        for tag, suffix in ((GroupTag.TEACHER, "teacher"), (GroupTag.STUDENT, "student")):
            cols = batch.groups == tag
            if np.any(cols):
                setattr(report, f"mean_reward_{suffix}", float(batch.raw_rewards[:, cols].mean()))
                setattr(report, f"tracking_{suffix}", float(batch.lin_tracking[:, cols].mean()))
        report.episodes = len(batch.summaries)
        report.falls = int(batch.falls.sum())

    def _step(self, name: str, grads: NetworkParams, lr: float, norms: _Mean) -> None:
        norms.add(name, clip_grad_norm(grads, self.cfg.max_grad_norm))
        adam_step(self.nets.params[name], grads, self.opt[name], lr, name)

    def _ppo(self, batch: RolloutBatch, report: UpdateReport) -> None:
        cfg, nets = self.cfg, self.nets
        if cfg.ppo_epochs == 0:
            return
        obs, priv, hist = batch.flat("obs"), batch.flat("priv"), batch.flat("history")
        z_old, act = batch.flat("latents"), batch.flat("actions")
        old_logp, old_mean = batch.flat("log_probs"), batch.flat("action_mean")
        adv, ret = batch.flat("advantages"), batch.flat("returns")
        groups = batch.row_groups()
        est = batch.flat("estimates") if batch.estimates is not None else None
        est_target = batch.flat("estimate_targets") if batch.estimates is not None else None
        O, L = nets.dims.obs_dim, nets.cfg.latent_dim
        P = nets.dims.priv_dim
        stats, norms = _Mean(), _Mean()
        R = obs.shape[0]
        for epoch in range(cfg.ppo_epochs):
            for k, idx in enumerate(np.array_split(self.rng.permutation(R), cfg.minibatches)):
                if idx.size == 0:
                    continue
                t_mask = groups[idx] == GroupTag.TEACHER
                s_mask = ~t_mask
                z = z_old[idx].copy()
                cache_t = cache_s = None
                if np.any(t_mask):
                    z[t_mask], cache_t = nets.encode_teacher(priv[idx][t_mask])
                if np.any(s_mask) and self.student_by_policy_gradient:
                    z[s_mask], cache_s = nets.encode_student(hist[idx][s_mask])
                elif np.any(s_mask) and cfg.refresh_student_latent:
                    z[s_mask] = nets.encode_student(hist[idx][s_mask])[0]
                mb_est = None if est is None else est[idx]
                mean, cache_p = nets.policy_mean(obs[idx], z, mb_est)
                dist = nets.distribution(mean)
                logp = dist.log_prob(act[idx])
                ratio = ppo_ratio(logp, old_logp[idx])
                kl = float(np.mean(DiagGaussian(old_mean[idx], batch.log_std).kl_to(dist)))
                if cfg.adaptive_lr:
                    self.lr = adaptive_lr(self.lr, kl, cfg.desired_kl, cfg.lr_min, cfg.lr_max)
                entropy = dist.entropy()

                weight = np.zeros(idx.size)
                weight_unclipped = np.zeros(idx.size)
                n_groups = 0
                for mask, name in ((t_mask, "teacher"), (s_mask, "student")):
                    if not np.any(mask):
                        continue
                    n_groups += 1
                    a = adv[idx][mask]
                    stats.add(name, ppo_clip_loss(ratio[mask], a, cfg.clip_range, entropy[mask], cfg.entropy_coef))
                    weight[mask] = clipped_objective_weight(ratio[mask], a, cfg.clip_range) / mask.sum()
                    weight_unclipped[mask] = ratio[mask] * a / mask.sum()
                d_mean, d_log_std = dist.log_prob_grads(act[idx])
                # descend the negated objective
                g_pol, g_in = mlp_backward(cache_p, -weight[:, None] * d_mean)
                g_pol.log_std = -(weight[:, None] * d_log_std).sum(axis=0) - cfg.entropy_coef * n_groups
                if epoch == 0 and k == 0:
                    report.first_ratio_error = float(np.max(np.abs(ratio - 1.0)))
                    gap = (weight - weight_unclipped)[:, None]
                    g_gap, _ = mlp_backward(cache_p, -gap * d_mean)
                    g_gap.log_std = -(gap * d_log_std).sum(axis=0)
                    report.first_grad_gap = float(max(np.max(np.abs(a)) for a in g_gap.arrays()))

                # critic sees the current latent; gradient stops there unless configured otherwise
                values, cache_v = nets.value(priv[idx], z)
                vl = value_loss(values, ret[idx])
                g_crit, g_cin = mlp_backward(cache_v, (2.0 * (values - ret[idx]) / idx.size)[:, None])

                grads = {"policy": g_pol, "critic": g_crit}
                if cache_t is not None:
                    gz_t = g_in[t_mask, O:O + L]
                    if cfg.critic_through_encoder:
                        gz_t = gz_t + g_cin[t_mask, P:P + L]
                    grads["privileged_encoder"] = mlp_backward(cache_t, gz_t)[0]
                if cache_s is not None:
                    grads["proprio_encoder"] = mlp_backward(cache_s, g_in[s_mask, O:O + L])[0]
                for name in ("policy", "privileged_encoder", "proprio_encoder", "critic"):
                    if name in grads:
                        self._step(name, grads[name], self.lr, norms)

                if est is not None:
                    pred, cache_e = nets.estimate(hist[idx])
                    stats.add("estimator", estimator_loss(pred, est_target[idx]))
                    g_est = mlp_backward(cache_e, 2.0 * (pred - est_target[idx]) / idx.size)[0]
                    self._step("estimator", g_est, cfg.estimator_lr, norms)

                stats.add("value", vl)
                stats.add("kl", kl)
                stats.add("entropy", float(np.mean(entropy)))
                if not (np.isfinite(vl) and np.all(np.isfinite(ratio))):
                    raise NonFiniteError("non-finite PPO loss")
        report.ppo_loss_teacher = stats.get("teacher")
        report.ppo_loss_student = stats.get("student")
        report.value_loss = stats.get("value")
        report.mean_kl = stats.get("kl")
        report.entropy = stats.get("entropy")
        report.estimator_loss = stats.get("estimator")
        report.grad_norms.update({k: norms.get(k) for k in norms.count})

    def _student_rows(self, batch: RolloutBatch):
        rows = batch.row_groups() == GroupTag.STUDENT
        return batch.flat("obs")[rows], batch.flat("priv")[rows], batch.flat("history")[rows], rows

    def _reconstruct(self, batch: RolloutBatch, report: UpdateReport) -> None:
        cfg, nets = self.cfg, self.nets
        _, priv, hist, rows = self._student_rows(batch)
        if cfg.rec_epochs == 0 or not np.any(rows):
            return
        stats, norms = _Mean(), _Mean()
        for _ in range(cfg.rec_epochs):
            for idx in np.array_split(self.rng.permutation(priv.shape[0]), cfg.rec_minibatches):
                if idx.size == 0:
                    continue
                z_s, cache_s = nets.encode_student(hist[idx])
                z_t = nets.encode_teacher(priv[idx])[0]
                loss = reconstruction_loss(z_s, z_t)
                if not np.isfinite(loss):
                    raise NonFiniteError("non-finite reconstruction loss")
                stats.add("rec", loss)
                g = mlp_backward(cache_s, 2.0 * (z_s - z_t) / idx.size)[0]
                self._step("proprio_encoder", g, cfg.lr_rec, norms)
        report.rec_loss = stats.get("rec")
        report.grad_norms.update({k: norms.get(k) for k in norms.count})

    def _distill(self, batch: RolloutBatch, report: UpdateReport) -> None:
        """Second phase of the two-stage baseline: only the proprioceptive encoder learns,
        from the latent target and the frozen teacher's mean action."""
        cfg, nets = self.cfg, self.nets
        obs, priv, hist, rows = self._student_rows(batch)
        if cfg.rec_epochs == 0 or not np.any(rows):
            return
        O, L = nets.dims.obs_dim, nets.cfg.latent_dim
        est = batch.flat("estimates")[rows] if batch.estimates is not None else None
        stats, norms = _Mean(), _Mean()
        for _ in range(cfg.rec_epochs):
            for idx in np.array_split(self.rng.permutation(obs.shape[0]), cfg.rec_minibatches):
                if idx.size == 0:
                    continue
                mb_est = None if est is None else est[idx]
                z_s, cache_s = nets.encode_student(hist[idx])
                z_t = nets.encode_teacher(priv[idx])[0]
                mean_s, cache_p = nets.policy_mean(obs[idx], z_s, mb_est)
                mean_t = nets.policy_mean(obs[idx], z_t, mb_est)[0]
                rec = reconstruction_loss(z_s, z_t)
                imit = float(np.mean(np.sum((mean_s - mean_t) ** 2, axis=1)))
                if not (np.isfinite(rec) and np.isfinite(imit)):
                    raise NonFiniteError("non-finite distillation loss")
                stats.add("rec", rec)
                stats.add("imit", imit)
                _, g_in = mlp_backward(cache_p, cfg.imitation_weight * 2.0 * (mean_s - mean_t) / idx.size)
                gz = g_in[:, O:O + L] + cfg.reconstruction_weight * 2.0 * (z_s - z_t) / idx.size
                self._step("proprio_encoder", mlp_backward(cache_s, gz)[0], cfg.lr_rec, norms)
        report.rec_loss = stats.get("rec")
        report.imitation_loss = stats.get("imit")
        report.grad_norms.update({k: norms.get(k) for k in norms.count})


def deployed_encoder(mode) -> str:
    """Which encoder feeds the policy at evaluation time for a given training mode."""
    return "privileged_encoder" if Mode.parse(mode) is Mode.ORACLE else "proprio_encoder"
