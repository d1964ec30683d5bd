"""Finite-difference verification of the MLP backward pass, plus update-routing checks."""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field, replace

import numpy as np

from . import nn
from .nn import MlpSpec, init_params, mlp_backward, mlp_forward

log = logging.getLogger(__name__)

FD_STEP = 1e-5
REL_TOL = 1e-4
REL_FLOOR = 1e-6


@dataclass
class GradFailure:
    seed: int
    where: str
    analytic: float
    numeric: float
    rel_error: float

    def __str__(self) -> str:
        return (f"seed {self.seed}: {self.where} analytic={self.analytic:.6e} "
                f"numeric={self.numeric:.6e} rel_err={self.rel_error:.2e}")


@dataclass
class GradcheckResult:
    n_configs: int = 0
    max_rel_error: float = 0.0
    failures: list = field(default_factory=list)
    routing_failures: list = field(default_factory=list)
    warnings: list = field(default_factory=list)
    seconds: float = 0.0

    @property
    def passed(self) -> bool:
        return not self.failures and not self.routing_failures


def rel_error(a, n) -> np.ndarray:
    a, n = np.asarray(a), np.asarray(n)
    return np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), REL_FLOOR)


def random_config(seed: int) -> tuple[MlpSpec, np.ndarray, np.ndarray, nn.NetworkParams]:
    """1-3 layers, widths 1-16, ELU or identity, with or without output normalisation."""
    rng = np.random.default_rng([seed, 2024])
    n_layers = int(rng.integers(1, 4))
    widths = [int(w) for w in rng.integers(1, 17, size=n_layers + 1)]
    normalize = bool(rng.random() < 0.5)
    activation = "elu" if rng.random() < 0.8 else "identity"
    spec = MlpSpec(widths[0], tuple(widths[1:-1]), widths[-1], activation, normalize)
    params = init_params(spec, rng)
    for _, b in params.layers:
        b[:] = rng.normal(0.0, 0.5, size=b.shape)
    batch = int(rng.integers(1, 4))
    x = rng.normal(size=(batch, spec.input_dim))
    g = rng.normal(size=(batch, spec.output_dim))
    return spec, params, x, g


def check_config(seed: int) -> tuple[float, list[GradFailure]]:
    spec, params, x, g = random_config(seed)

    def objective() -> float:
        return float(np.sum(g * mlp_forward(params, spec, x)[0]))

    _, cache = mlp_forward(params, spec, x)
    grads, gx = mlp_backward(cache, g)
    failures, worst = [], 0.0
    n_layers = len(params.layers)
    for li, ((w, b), (gw, gb)) in enumerate(zip(params.layers, grads.layers)):
        for label, arr, garr in (("weight", w, gw), ("bias", b, gb)):
            for idx in np.ndindex(arr.shape):
                old = arr[idx]
                arr[idx] = old + FD_STEP
                up = objective()
                arr[idx] = old - FD_STEP
                down = objective()
                arr[idx] = old
                num = (up - down) / (2 * FD_STEP)
                err = float(rel_error(garr[idx], num))
                worst = max(worst, err)
                if err >= REL_TOL:
                    failures.append(GradFailure(seed, f"layer {li + 1}/{n_layers} {label}{list(idx)}",
                                                float(garr[idx]), num, err))
    for idx in np.ndindex(x.shape):
        old = x[idx]
        x[idx] = old + FD_STEP
        up = objective()
        x[idx] = old - FD_STEP
        down = objective()
        x[idx] = old
        num = (up - down) / (2 * FD_STEP)
        err = float(rel_error(gx[idx], num))
        worst = max(worst, err)
        if err >= REL_TOL:
            failures.append(GradFailure(seed, f"input{list(idx)}", float(gx[idx]), num, err))
    return worst, failures


def routing_checks(seed: int = 0) -> list[str]:
    """Isolated reconstruction and PPO updates must leave the other networks bit-for-bit untouched."""
    from .algo import AlgoConfig, Trainer
    from .envs import EnvConfig, make_pool
    from .networks import EnvDims, NetworkConfig, Networks
    from .rollout import collect_rollouts

    problems = []
    env_cfg = EnvConfig(profile="ctx-pointmass")
    ncfg = NetworkConfig(latent_dim=4, encoder_hidden=(8,), policy_hidden=(8,), critic_hidden=(8,))
    for label, algo, must_change, must_keep in (
        ("reconstruction only", AlgoConfig(ppo_epochs=0, rec_epochs=1),
         {"proprio_encoder"}, {"policy", "privileged_encoder", "critic"}),
        ("ppo/value only", AlgoConfig(rec_epochs=0),
         {"policy", "privileged_encoder", "critic"}, {"proprio_encoder"}),
    ):
        pool = make_pool(env_cfg, 4, seed)
        dims = EnvDims(pool.obs_dim, pool.priv_dim, pool.history_dim, pool.action_dim)
        nets = Networks(dims, ncfg, np.random.default_rng(seed))
        trainer = Trainer(replace(algo, steps_per_iter=6, minibatches=2, rec_minibatches=2), nets, pool, seed)
        before = {k: [a.copy() for a in p.arrays()] for k, p in nets.params.items()}
        batch = collect_rollouts(nets, pool, trainer.groups(), 6, trainer.rng)
        trainer.update(batch)
        for name, arrs in before.items():
            same = all(np.array_equal(a, b) for a, b in zip(arrs, nets.params[name].arrays()))
            if name in must_keep and not same:
                problems.append(f"{label}: {name} changed")
            if name in must_change and same:
                problems.append(f"{label}: {name} did not change")
        pool.close()
    return problems


def run_gradcheck(trials: int = 100, seed: int = 0, routing: bool = True) -> GradcheckResult:
    start = time.perf_counter()
    res = GradcheckResult()
    if trials <= 0:
        res.warnings.append("no gradient configurations requested; finite-difference check is vacuous")
        log.warning(res.warnings[-1])
    for k in range(max(trials, 0)):
        worst, fails = check_config(seed + k)
        res.n_configs += 1
        res.max_rel_error = max(res.max_rel_error, worst)
        res.failures.extend(fails)
    if routing and trials > 0:
        res.routing_failures = routing_checks(seed)
    res.seconds = time.perf_counter() - start
    return res
