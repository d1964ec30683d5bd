"""Compare push survival of a checkpoint against its untrained initial weights.

    python -m ctsrl train scripts/walker_concurrent.cfg
    python scripts/push_survival.py runs/walker/final.ckpt runs/walker/initial.ckpt
"""
import argparse

from ctsrl.checkpoint import load_checkpoint
from ctsrl.evaluation import DeployedPolicy, eval_push_survival


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("trained")
    ap.add_argument("untrained")
    ap.add_argument("--terrains", default="flat,rough_slope")
    ap.add_argument("--deltas", type=float, nargs="+", default=[0.0, 0.25, 0.5, 0.75, 1.0])
    ap.add_argument("--trials", type=int, default=128)
    ap.add_argument("--seed", type=int, default=5)
    args = ap.parse_args(argv)

    kinds = args.terrains.split(",")
    runs = {name: load_checkpoint(path) for name, path in (("trained", args.trained), ("untrained", args.untrained))}
    env_cfg = runs["trained"].config.env
    print("delta  " + "  ".join(f"{n[:9]:>9s}:{k:<12s}" for n in runs for k in kinds))
    for delta in args.deltas:
        cells = []
        for ck in runs.values():
            res = eval_push_survival(DeployedPolicy(ck.nets, ck.mode), env_cfg, kinds, delta,
                                     n_trials=args.trials, seed=args.seed)
            cells += [f"{res[k]:22.1f}" for k in kinds]
        print(f"{delta:5.2f}  " + "  ".join(cells), flush=True)


if __name__ == "__main__":
    main()
