"""The five networks of a run and their forward helpers.

``privileged_encoder``  full state -> unit latent
``proprio_encoder``     observation history -> unit latent
``policy``              (observation, latent[, estimate]) -> action mean, plus log-std
``critic``              (full state, latent) -> value
``estimator``           observation history -> base velocity and foot heights (optional)
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .nn import DiagGaussian, MlpSpec, NetworkParams, init_params, mlp_forward

NAMES = ("privileged_encoder", "proprio_encoder", "policy", "critic", "estimator")


@dataclass
class NetworkConfig:
    latent_dim: int = 32
    encoder_hidden: tuple[int, ...] = (256, 128)
    policy_hidden: tuple[int, ...] = (256, 128, 64)
    critic_hidden: tuple[int, ...] = (256, 128, 64)
    estimator_hidden: tuple[int, ...] = (128, 64)
    init_std: float = 1.0


@dataclass(frozen=True)
class EnvDims:
    obs_dim: int
    priv_dim: int
    history_dim: int
    action_dim: int
    estimate_dim: int = 0      # 0 disables the estimator head


class Networks:
    def __init__(self, dims: EnvDims, cfg: NetworkConfig, rng: np.random.Generator | None = None,
                 params: dict[str, NetworkParams] | None = None):
        self.dims = dims
        self.cfg = cfg
        L = cfg.latent_dim
        self.specs: dict[str, MlpSpec] = {
            "privileged_encoder": MlpSpec(dims.priv_dim, cfg.encoder_hidden, L, normalize_output=True),
            "proprio_encoder": MlpSpec(dims.history_dim, cfg.encoder_hidden, L, normalize_output=True),
            "policy": MlpSpec(dims.obs_dim + L + dims.estimate_dim, cfg.policy_hidden, dims.action_dim),
            "critic": MlpSpec(dims.priv_dim + L, cfg.critic_hidden, 1),
        }
        if dims.estimate_dim:
            self.specs["estimator"] = MlpSpec(dims.history_dim, cfg.estimator_hidden, dims.estimate_dim)
        if params is None:
            rng = rng if rng is not None else np.random.default_rng(0)
            params = {}
            for name in NAMES:
                if name not in self.specs:
                    continue
                if name == "policy":
                    params[name] = init_params(self.specs[name], rng, output_gain=0.01,
                                               log_std_dim=dims.action_dim, init_std=cfg.init_std)
                else:
                    params[name] = init_params(self.specs[name], rng)
        for name, spec in self.specs.items():
            params[name].check_spec(spec)
        self.params = params

    @property
    def has_estimator(self) -> bool:
        return "estimator" in self.specs

    def copy(self) -> "Networks":
        return Networks(self.dims, self.cfg, params={k: p.copy() for k, p in self.params.items()})

    # -- forward helpers (return output and cache) --------------------------------------
    def _fwd(self, name, x):
        return mlp_forward(self.params[name], self.specs[name], x)

    def encode_teacher(self, priv):
        return self._fwd("privileged_encoder", priv)

    def encode_student(self, history):
        return self._fwd("proprio_encoder", history)

    def estimate(self, history):
        return self._fwd("estimator", history)

    def policy_mean(self, obs, z, est=None):
        return self._fwd("policy", policy_input(obs, z, est))

    def value(self, priv, z):
        out, cache = self._fwd("critic", np.concatenate([priv, z], axis=-1))
        return out[..., 0], cache

    def distribution(self, mean) -> DiagGaussian:
        return DiagGaussian(mean, self.params["policy"].log_std)


def policy_input(obs, z, est=None):
    parts = [obs, z] if est is None else [obs, z, est]
    return np.concatenate(parts, axis=-1)
