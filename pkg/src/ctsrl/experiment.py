"""Build a run from a RunConfig and drive it, writing metrics and checkpoints."""
from __future__ import annotations

import csv
import logging
import os
import time
from dataclasses import dataclass, field

import numpy as np

from .algo import Mode, Trainer, TrainingAborted, UpdateReport
from .checkpoint import save_checkpoint
from .config import RunConfig, dump
from .envs import EnvPool, make_pool
from .networks import EnvDims, Networks

log = logging.getLogger(__name__)


def estimate_dim(cfg: RunConfig, pool: EnvPool) -> int:
    if not cfg.algo.estimator_enabled:
        return 0
    vel = pool.base_lin_velocity().shape[1]
    return vel + (pool.n_feet if cfg.mode is Mode.ESTIMATOR_NET else 0)


def build(cfg: RunConfig, on_abort=None) -> tuple[EnvPool, Networks, Trainer]:
    cfg.validate()
    pool = make_pool(cfg.env, cfg.n_envs, cfg.seed, cfg.workers)
    dims = EnvDims(pool.obs_dim, pool.priv_dim, pool.history_dim, pool.action_dim, estimate_dim(cfg, pool))
    nets = Networks(dims, cfg.network, np.random.default_rng([cfg.seed, 0]))
    trainer = Trainer(cfg.algo, nets, pool, cfg.seed, cfg.iterations, on_abort)
    return pool, nets, trainer


class MetricsWriter:
    """Append-only CSV; every row is flushed so the file parses at any point of a run."""

    def __init__(self, path, fields):
        self.fields = list(fields)
        self.fh = open(path, "w", newline="")
        self.writer = csv.writer(self.fh)
        self.writer.writerow(self.fields)
        self.fh.flush()

    def write(self, row: dict) -> None:
        self.writer.writerow([_fmt(row[k]) for k in self.fields])
        self.fh.flush()

    def close(self) -> None:
        self.fh.close()


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


@dataclass
class RunResult:
    reports: list = field(default_factory=list)
    out_dir: str = ""
    final_checkpoint: str = ""
    nets: Networks | None = None
    seconds: float = 0.0


def train(cfg: RunConfig, out_dir: str | None = None, progress=None) -> RunResult:
    """Run ``cfg.iterations`` iterations. With ``out_dir`` set, writes config.txt, metrics.csv,
    timing.csv and checkpoints there. Raises TrainingAborted on non-finite values."""
    out = out_dir or None
    if out:
        os.makedirs(out, exist_ok=True)

    def on_abort(snapshot: Networks, iteration: int) -> str | None:
        if not out:
            return None
        return save_checkpoint(os.path.join(out, f"postmortem_{iteration:05d}.ckpt"), snapshot, cfg, iteration)

    pool, nets, trainer = build(cfg, on_abort)
    result = RunResult(out_dir=out or "", nets=nets)
    metrics = timing = None
    if out:
        dump(cfg, os.path.join(out, "config.txt"))
        metrics = MetricsWriter(os.path.join(out, "metrics.csv"), UpdateReport.CSV_FIELDS)
        timing = MetricsWriter(os.path.join(out, "timing.csv"), ("iteration", "wall_ms"))
        save_checkpoint(os.path.join(out, "initial.ckpt"), nets, cfg, 0)
    start = time.perf_counter()
    try:
        for it in range(cfg.iterations):
            t0 = time.perf_counter()
            report = trainer.train_iteration()
            wall_ms = (time.perf_counter() - t0) * 1e3
            result.reports.append(report)
            if metrics:
                metrics.write(report.row())
                timing.write({"iteration": it, "wall_ms": round(wall_ms, 3)})
                if cfg.checkpoint_every and (it + 1) % cfg.checkpoint_every == 0:
                    save_checkpoint(os.path.join(out, f"ckpt_{it + 1:05d}.ckpt"), nets, cfg, it + 1)
            if progress:
                progress(report)
        if out:
            result.final_checkpoint = save_checkpoint(os.path.join(out, "final.ckpt"), nets, cfg, cfg.iterations)
    finally:
        if metrics:
            metrics.close()
            timing.close()
        pool.close()
    result.seconds = time.perf_counter() - start
    return result


__all__ = ["build", "train", "RunResult", "MetricsWriter", "TrainingAborted"]
