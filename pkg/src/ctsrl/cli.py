"""Command-line entry points: train, eval, gradcheck, export-latents."""
from __future__ import annotations

import argparse
import logging
import os
import sys
from dataclasses import replace

from .algo import Mode, TrainingAborted
from .checkpoint import CheckpointError, load_checkpoint
from .config import RunConfig, load
from .envs import TerrainKind
from .evaluation import (DeployedPolicy, eval_push_survival, eval_tracking, export_latents,
                         write_latents_csv, write_survival_csv, write_tracking_csv)
from .gradcheck import run_gradcheck
from .nn import ConfigurationError

log = logging.getLogger("ctsrl")

DEFAULT_TERRAINS = "flat,slope,rough_slope,stairs,discrete_obstacles"


def _setup_logging() -> None:
    level = os.environ.get("CTSRL_LOG_LEVEL", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")


def _terrains(text: str) -> list[str]:
    kinds = [t.strip() for t in text.split(",") if t.strip()]
    for k in kinds:
        TerrainKind.parse(k)
    return kinds


# -- train --------------------------------------------------------------------------------
def cmd_train(args) -> int:
    from .experiment import train

    cfg = load(args.config) if args.config else RunConfig()
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.iterations is not None:
        overrides["iterations"] = args.iterations
    if args.workers is not None:
        overrides["workers"] = args.workers
    if args.out is not None:
        overrides["out_dir"] = args.out
    cfg = replace(cfg, **overrides)
    if args.mode is not None:
        cfg = replace(cfg, algo=replace(cfg.algo, mode=Mode.parse(args.mode).value))
    cfg.validate()

    def progress(r):
        if r.iteration % max(1, args.log_every) == 0:
            log.info("iter %d phase %d tracking T=%.3f S=%.3f value=%.4f rec=%.4f kl=%.4f lr=%.2e",
                     r.iteration, r.phase, r.tracking_teacher, r.tracking_student, r.value_loss,
                     r.rec_loss, r.mean_kl, r.lr)

    try:
        result = train(cfg, cfg.out_dir, progress)
    except TrainingAborted as exc:
        print(f"training aborted: {exc}", file=sys.stderr)
        if exc.checkpoint_path:
            print(f"post-mortem checkpoint: {exc.checkpoint_path}", file=sys.stderr)
        return 1
    print(f"wrote {os.path.join(cfg.out_dir, 'metrics.csv')} ({cfg.iterations} iterations, "
          f"{result.seconds:.1f} s); final checkpoint {result.final_checkpoint}")
    return 0


# -- eval ---------------------------------------------------------------------------------
def _load_for_eval(args):
    expect_profile = None
    env_cfg = None
    if args.config:
        env_cfg = load(args.config).env
        expect_profile = env_cfg.profile
    if args.profile:
        expect_profile = args.profile
    ckpt = load_checkpoint(args.checkpoint, expect_profile=expect_profile, force=args.force)
    env = env_cfg or ckpt.config.env
    if args.profile and args.profile != env.profile:
        env = replace(env, profile=args.profile)
    if env.profile != ckpt.config.env.profile and not args.force:
        raise CheckpointError(f"checkpoint trained on {ckpt.config.env.profile!r}, eval env is "
                              f"{env.profile!r} (use --force to override)")
    return ckpt, env


def _print_table(title: str, rows: list[tuple]) -> None:
    print(title)
    for row in rows:
        print("  " + "  ".join(f"{c:>14}" if not isinstance(c, float) else f"{c:14.4f}" for c in row))


def cmd_eval(args) -> int:
    ckpt, env = _load_for_eval(args)
    terrains = _terrains(args.terrains)
    os.makedirs(args.out, exist_ok=True)
    policy = DeployedPolicy(ckpt.nets, ckpt.mode)
    if args.suite == "tracking":
        res = eval_tracking(policy, env, terrains, n_envs=args.n_envs, episodes=args.episodes,
                            seed=args.seed, steps_per_episode=args.steps)
        path = os.path.join(args.out, "tracking.csv")
        write_tracking_csv(path, res)
        _print_table("terrain  mean_error  std", [(k, m, s) for k, (m, s) in res.items()])
    elif args.suite == "push":
        delta = args.delta if args.delta is not None else 0.5 * env.curriculum.initial_lin_range
        res = eval_push_survival(policy, env, terrains, delta, n_trials=args.trials, seed=args.seed,
                                 episode_steps=args.steps)
        path = os.path.join(args.out, "survival.csv")
        write_survival_csv(path, res, delta, args.trials)
        _print_table(f"terrain  survival_% (push {delta} m/s)", [(k, v) for k, v in res.items()])
    else:
        rows = export_latents(ckpt.nets, env, terrains, args.samples, seed=args.seed, mode=ckpt.mode)
        path = os.path.join(args.out, "latents.csv")
        write_latents_csv(path, rows)
        print(f"{len(rows)} latent rows ({len(terrains)} terrains x {args.samples})")
    print(f"wrote {path}")
    return 0


def cmd_export_latents(args) -> int:
    args.suite = "latents"
    return cmd_eval(args)


# -- gradcheck ----------------------------------------------------------------------------
def cmd_gradcheck(args) -> int:
    res = run_gradcheck(args.trials, args.seed, routing=not args.no_routing)
    for w in res.warnings:
        print(f"warning: {w}")
    for f in res.failures[:20]:
        print(f"FAIL {f}")
    for f in res.routing_failures:
        print(f"FAIL routing: {f}")
    status = "PASS" if res.passed else "FAIL"
    print(f"{status}: {res.n_configs} configurations, max relative error {res.max_rel_error:.2e}, "
          f"{res.seconds:.1f} s")
    if res.failures:
        seeds = sorted({f.seed for f in res.failures})
        print(f"failing configuration seeds: {seeds}")
    return 0 if res.passed else 1


# -- parser -------------------------------------------------------------------------------
def _eval_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("checkpoint")
    p.add_argument("--config", help="config file whose env section defines the evaluation env")
    p.add_argument("--profile", help="evaluate on this env profile")
    p.add_argument("--force", action="store_true", help="allow an env profile different from training")
    p.add_argument("--terrains", default=DEFAULT_TERRAINS)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=".")
    p.add_argument("--n-envs", type=int, default=64)
    p.add_argument("--episodes", type=int, default=1)
    p.add_argument("--steps", type=int, default=None, help="steps per episode (default: env episode length)")
    p.add_argument("--delta", type=float, default=None, help="push size in m/s (default 0.5 x max command)")
    p.add_argument("--trials", type=int, default=64)
    p.add_argument("--samples", type=int, default=1000)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ctsrl", description="Concurrent teacher-student PPO at desk scale.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a policy")
    p.add_argument("config", nargs="?", help="config file (flat key = value); defaults apply when omitted")
    p.add_argument("--seed", type=int)
    p.add_argument("--mode", help="concurrent | two_stage | baseline | oracle | estimator_net")
    p.add_argument("--out")
    p.add_argument("--iterations", type=int)
    p.add_argument("--workers", type=int)
    p.add_argument("--log-every", type=int, default=10)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    _eval_args(p)
    p.add_argument("--suite", choices=("tracking", "push", "latents"), default="tracking")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("export-latents", help="write proprioceptive latents with terrain labels")
    _eval_args(p)
    p.set_defaults(func=cmd_export_latents)

    p = sub.add_parser("gradcheck", help="finite-difference check of the network gradients")
    p.add_argument("--trials", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--no-routing", action="store_true", help="skip the update-routing checks")
    p.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv=None) -> int:
    _setup_logging()
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigurationError, CheckpointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
