"""Train every mode for several seeds on the point mass and tabulate final tracking error.

    python scripts/ablation.py --iterations 150 --seeds 0 1 2 --out runs/ablation
"""
import argparse
import csv
import os
from dataclasses import replace

from ctsrl.algo import Mode
from ctsrl.config import load
from ctsrl.evaluation import DeployedPolicy, aggregate_seeds, eval_tracking
from ctsrl.experiment import train

HERE = os.path.dirname(os.path.abspath(__file__))


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config", default=os.path.join(HERE, "toy_pointmass.cfg"))
    ap.add_argument("--iterations", type=int, default=150)
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    ap.add_argument("--modes", nargs="+", default=[m.value for m in Mode])
    ap.add_argument("--terrain", default="flat")
    ap.add_argument("--out", default="runs/ablation")
    args = ap.parse_args(argv)

    base = load(args.config)
    os.makedirs(args.out, exist_ok=True)
    per_seed = []
    for mode in args.modes:
        for seed in args.seeds:
            cfg = replace(base, seed=seed, iterations=args.iterations, checkpoint_every=0,
                          algo=replace(base.algo, mode=mode))
            run = train(cfg, os.path.join(args.out, f"{mode}_s{seed}"))
            res = eval_tracking(DeployedPolicy(run.nets, mode), cfg.env, [args.terrain], n_envs=64,
                                steps_per_episode=500, seed=1000 + seed)
            per_seed.append((mode, seed, res[args.terrain][0]))
            print(f"{mode:14s} seed {seed}: tracking error {res[args.terrain][0]:.4f} ({run.seconds:.0f}s)",
                  flush=True)

    with open(os.path.join(args.out, "ablation.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["mode", "n_seeds", "mean_error", "std"])
        for mode in args.modes:
            n, mean, std = aggregate_seeds([e for m, _, e in per_seed if m == mode])
            w.writerow([mode, n, repr(mean), repr(std)])
            print(f"{mode:14s} {mean:.4f} +/- {std:.4f}")


if __name__ == "__main__":
    main()
