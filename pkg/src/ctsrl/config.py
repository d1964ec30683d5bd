"""Run configuration and its flat ``section.key = value`` text format.

Every field has a default, so an empty file is a valid config. ``dump`` writes every key, and
``loads(dump(cfg)) == cfg`` holds exactly (floats are written with ``repr``).
"""
from __future__ import annotations

import dataclasses
import hashlib
import typing
from dataclasses import dataclass, field

from .algo import AlgoConfig, Mode
from .envs import PROFILES, EnvConfig, RewardConfig, TerrainKind
from .envs.curriculum import CurriculumConfig
from .envs.randomization import DomainRandomization
from .networks import NetworkConfig
from .nn import ConfigurationError


@dataclass
class RunConfig:
    env: EnvConfig = field(default_factory=EnvConfig)
    algo: AlgoConfig = field(default_factory=AlgoConfig)
    network: NetworkConfig = field(default_factory=NetworkConfig)
    n_envs: int = 256
    iterations: int = 1000
    seed: int = 0
    out_dir: str = "runs/default"
    workers: int = 1
    checkpoint_every: int = 100

    def validate(self) -> None:
        if self.env.profile not in PROFILES:
            raise ConfigurationError(f"env.profile: unknown profile {self.env.profile!r}")
        if self.env.reward_profile not in ("quadruped", "biped"):
            raise ConfigurationError(f"env.reward_profile: expected quadruped or biped, got {self.env.reward_profile!r}")
        for kind in self.env.terrain_kinds:
            try:
                TerrainKind.parse(kind)
            except ConfigurationError as exc:
                raise ConfigurationError(f"env.terrain_kinds: {exc}") from None
        if self.env.reward.smoothness_form not in ("printed", "second_difference"):
            raise ConfigurationError("env.reward.smoothness_form: expected printed or second_difference")
        for name, ok in (("n_envs", self.n_envs >= 1), ("iterations", self.iterations >= 0),
                         ("workers", self.workers >= 1), ("checkpoint_every", self.checkpoint_every >= 0),
                         ("env.history_len", self.env.history_len >= 0),
                         ("env.episode_steps", self.env.episode_steps >= 1),
                         ("network.latent_dim", self.network.latent_dim >= 1)):
            if not ok:
                raise ConfigurationError(f"{name}: invalid value")
        try:
            self.algo.validate()
        except ConfigurationError as exc:
            if "mode" in str(exc):
                raise ConfigurationError(f"algo.mode: {exc}") from None
            raise

    @property
    def mode(self) -> Mode:
        return self.algo.mode_enum


# -- flat text format ---------------------------------------------------------------------
def _flatten(obj, prefix: str = "") -> list[tuple[str, object]]:
    out = []
    for f in dataclasses.fields(obj):
        v = getattr(obj, f.name)
        key = prefix + f.name
        if dataclasses.is_dataclass(v):
            out.extend(_flatten(v, key + "."))
        else:
            out.append((key, v))
    return out


def _format(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, tuple):
        return ", ".join(_format(x) for x in v)
    return str(v)


def dumps(cfg: RunConfig) -> str:
    lines = [f"{k} = {_format(v)}" for k, v in _flatten(cfg)]
    return "\n".join(lines) + "\n"


def dump(cfg: RunConfig, path) -> None:
    with open(path, "w") as fh:
        fh.write(dumps(cfg))


def _parse_scalar(text: str, typ, key: str):
    text = text.strip()
    try:
        if typ is bool:
            low = text.lower()
            if low in ("true", "yes", "1", "on"):
                return True
            if low in ("false", "no", "0", "off"):
                return False
            raise ValueError(text)
        if typ is int:
            return int(text)
        if typ is float:
            return float(text)
        if typ is str:
            return text
    except ValueError:
        raise ConfigurationError(f"{key}: cannot parse {text!r} as {typ.__name__}") from None
    raise ConfigurationError(f"{key}: unsupported field type {typ}")


def _parse_value(text: str, typ, key: str):
    origin = typing.get_origin(typ)
    if origin is tuple:
        args = typing.get_args(typ)
        items = [t for t in (s.strip() for s in text.split(",")) if t]
        if len(args) == 2 and args[1] is Ellipsis:
            return tuple(_parse_scalar(s, args[0], key) for s in items)
        if len(items) != len(args):
            raise ConfigurationError(f"{key}: expected {len(args)} comma-separated values, got {len(items)}")
        return tuple(_parse_scalar(s, t, key) for s, t in zip(items, args))
    return _parse_scalar(text, typ, key)


def _build(cls, values: dict, prefix: str, base=None):
    hints = typing.get_type_hints(cls)
    kwargs = {}
    for f in dataclasses.fields(cls):
        key = prefix + f.name
        typ = hints[f.name]
        if dataclasses.is_dataclass(typ):
            sub_base = getattr(base, f.name) if base is not None else None
            kwargs[f.name] = _build(typ, values, key + ".", sub_base)
        elif key in values:
            kwargs[f.name] = _parse_value(values.pop(key), typ, key)
        elif base is not None:
            kwargs[f.name] = getattr(base, f.name)
    return cls(**kwargs)


def loads(text: str) -> RunConfig:
    values: dict[str, str] = {}
    for n, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigurationError(f"line {n}: expected 'key = value', got {raw.strip()!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if key in values:
            raise ConfigurationError(f"line {n}: duplicate key {key!r}")
        values[key] = value
    # biped configs start from the biped reward weights; explicit keys still override
    base = None
    if values.get("env.reward_profile", "").strip() == "biped":
        base = RunConfig(env=EnvConfig(reward_profile="biped", reward=RewardConfig.biped()))
    cfg = _build(RunConfig, values, "", base)
    if values:
        raise ConfigurationError(f"unknown config key(s): {', '.join(sorted(values))}")
    cfg.validate()
    return cfg


def load(path) -> RunConfig:
    with open(path) as fh:
        return loads(fh.read())


def config_hash(cfg: RunConfig) -> str:
    return hashlib.sha256(dumps(cfg).encode()).hexdigest()[:16]


def keys() -> list[str]:
    """All normative key names, in file order."""
    return [k for k, _ in _flatten(RunConfig())]


__all__ = ["RunConfig", "EnvConfig", "AlgoConfig", "NetworkConfig", "RewardConfig", "DomainRandomization",
           "CurriculumConfig", "dump", "dumps", "load", "loads", "config_hash", "keys"]
