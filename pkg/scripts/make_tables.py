"""Train and evaluate every action-space design on one cohort, then write Table 2/3/4-shaped CSVs.

Usage: python3 scripts/make_tables.py --out runs/tables [--set train.epochs=20 ...]

Extra ``--set`` overrides apply to every model (for example a smaller
``sim.n_patients`` for a quick look).
"""

import argparse
import sys

from vasorl.cli import run

MODELS = {
    "binary": ["action_space.kind=binary"],
    "dual_mixed": ["action_space.kind=dual_mixed"],
    "dual_bd_5": ["action_space.kind=block_discrete", "action_space.n_bins=5"],
    "dual_bd_10": ["action_space.kind=block_discrete", "action_space.n_bins=10"],
    "stepwise_0.1": ["action_space.kind=stepwise", "action_space.max_step=0.1"],
    "stepwise_0.2": ["action_space.kind=stepwise", "action_space.max_step=0.2"],
    "lstm_bd_10": ["action_space.kind=lstm_block_discrete", "action_space.n_bins=10"],
}


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="runs/tables")
    ap.add_argument("--config")
    ap.add_argument("--seed", type=int, default=42)
    ap.add_argument("--set", dest="overrides", action="append", default=[])
    ap.add_argument("--models", nargs="+", default=list(MODELS), choices=list(MODELS))
    args = ap.parse_args()
    common = ["--seed", str(args.seed)] + (["--config", args.config] if args.config else [])
    for o in args.overrides:
        common += ["--set", o]
    dirs = []
    for name in args.models:
        out = f"{args.out}/{name}"
        sets = [x for o in MODELS[name] for x in ("--set", o)]
        for cmd in ("train", "evaluate"):
            status = run([cmd, "--out", out, *common, *sets])
            if status != 0:
                sys.exit(status)
        dirs.append(out)
        print(f"{name}: done", flush=True)
    sys.exit(run(["report", "--out", args.out, *common, *dirs]))


if __name__ == "__main__":
    main()
