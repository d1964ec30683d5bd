"""Binary checkpoints.

Layout::

    b"CTSRLCKP"  | u32 version | u32 header length | JSON header | f32 blobs

Blobs follow the header's network order; within a network each layer writes its weight
matrix row-major and then its bias, with the policy log-std last. Everything is little-endian.
"""
from __future__ import annotations

import dataclasses
import hashlib
import json
import os
import struct
from dataclasses import dataclass

import numpy as np

from .config import RunConfig, config_hash, dumps, loads
from .networks import EnvDims, NetworkConfig, Networks
from .nn import NetworkParams

MAGIC = b"CTSRLCKP"
VERSION = 1


class CheckpointError(RuntimeError):
    pass


@dataclass
class Checkpoint:
    nets: Networks
    config: RunConfig
    header: dict

    @property
    def mode(self) -> str:
        return self.header["mode"]

    @property
    def iteration(self) -> int:
        return int(self.header["iteration"])


def save_checkpoint(path, nets: Networks, cfg: RunConfig, iteration: int = 0, extra: dict | None = None) -> str:
    path = os.fspath(path)
    header = {
        "config_hash": config_hash(cfg),
        "profile": cfg.env.profile,
        "mode": cfg.algo.mode,
        "iteration": int(iteration),
        "config": dumps(cfg),
        "env_dims": dataclasses.asdict(nets.dims),
        "network_config": dataclasses.asdict(nets.cfg),
        "networks": [],
    }
    blobs = []
    for name, params in nets.params.items():
        spec = nets.specs[name]
        arrs = params.arrays()
        header["networks"].append({"name": name, "dims": list(spec.dims), "activation": spec.activation,
                                   "normalize_output": spec.normalize_output,
                                   "has_log_std": params.log_std is not None,
                                   "count": int(sum(a.size for a in arrs))})
        blobs.extend(np.ascontiguousarray(a, dtype="<f4").tobytes() for a in arrs)
    if extra:
        header["extra"] = extra
    head = json.dumps(header, sort_keys=True).encode()
    tmp = path + ".tmp"
    with open(tmp, "wb") as fh:
        fh.write(MAGIC + struct.pack("<II", VERSION, len(head)) + head)
        for b in blobs:
            fh.write(b)
    os.replace(tmp, path)
    return path


def read_header(path) -> tuple[dict, bytes]:
    try:
        with open(path, "rb") as fh:
            data = fh.read()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from None
    if len(data) < 16 or data[:8] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
    version, n = struct.unpack("<II", data[8:16])
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version} (expected {VERSION})")
    try:
        header = json.loads(data[16:16 + n].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: corrupt header ({exc})") from None
    return header, data[16 + n:]


def load_checkpoint(path, expect_hash: str | None = None, expect_profile: str | None = None,
                    force: bool = False) -> Checkpoint:
    header, body = read_header(path)
    cfg = loads(header["config"])
    if config_hash(cfg) != header["config_hash"]:
        raise CheckpointError(f"{path}: stored config does not match its hash")
    if expect_hash is not None and expect_hash != header["config_hash"] and not force:
        raise CheckpointError(f"{path}: config hash {header['config_hash']} != expected {expect_hash}")
    if expect_profile is not None and expect_profile != header["profile"] and not force:
        raise CheckpointError(f"{path}: checkpoint was trained on {header['profile']!r}, "
                              f"not {expect_profile!r} (use --force to override)")
    dims = EnvDims(**header["env_dims"])
    ncfg_raw = header["network_config"]
    ncfg = NetworkConfig(**{k: tuple(v) if isinstance(v, list) else v for k, v in ncfg_raw.items()})
    template = Networks(dims, ncfg, np.random.default_rng(0))
    expected = sum(e["count"] for e in header["networks"]) * 4
    if len(body) != expected:
        raise CheckpointError(f"{path}: body has {len(body)} bytes, header promises {expected}")
    flat = np.frombuffer(body, dtype="<f4").astype(np.float64)
    pos = 0
    params = {}
    for entry in header["networks"]:
        name = entry["name"]
        if name not in template.specs or list(template.specs[name].dims) != entry["dims"]:
            raise CheckpointError(f"{path}: network {name} has dims {entry['dims']}, "
                                  f"expected {list(template.specs.get(name).dims) if name in template.specs else None}")
        tp = template.params[name]
        layers = []
        for w, b in tp.layers:
            W = flat[pos:pos + w.size].reshape(w.shape).copy()
            pos += w.size
            layers.append((W, flat[pos:pos + b.size].copy()))
            pos += b.size
        log_std = None
        if entry["has_log_std"]:
            n = tp.log_std.size
            log_std = flat[pos:pos + n].copy()
            pos += n
        params[name] = NetworkParams(layers, log_std)
    missing = set(template.specs) - set(params)
    if missing:
        raise CheckpointError(f"{path}: missing networks {sorted(missing)}")
    return Checkpoint(Networks(dims, ncfg, params=params), cfg, header)


def params_digest(nets: Networks) -> str:
    """Hash of every parameter byte, used to show that evaluation is read-only."""
    h = hashlib.sha256()
    for name in sorted(nets.params):
        for a in nets.params[name].arrays():
            h.update(np.ascontiguousarray(a).tobytes())
    return h.hexdigest()
