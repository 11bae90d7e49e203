"""Train one architecture on Big-style and Small-style pairs with the same step budget.

    python3 scripts/big_vs_small.py --arch odeunet --steps 2000 --out runs/big_vs_small
"""

import argparse
from pathlib import Path

from _common import evaluate, run, simulate, train


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--arch", default="odeunet")
    ap.add_argument("--steps", type=int, default=2000)
    ap.add_argument("--participants", type=int, default=300)
    ap.add_argument("--seed", type=int, default=42)
    ap.add_argument("--out", type=Path, default=Path("runs/big_vs_small"))
    args = ap.parse_args()

    manifest = simulate(args.out / "cohort", n_participants=args.participants, seed=args.seed)
    reports = []
    for style in ("big", "small"):
        # patience equal to the budget so both styles get exactly the same number of steps
        run_dir = train(args.out / style, arch=args.arch, data_dir=str(manifest.parent), dataset_style=style,
                        max_steps=args.steps, eval_every=250, patience=args.steps, n_val=40, n_test=140)
        reports.append(evaluate(run_dir, manifest, args.out / f"{style}.csv"))
    run("report", "--inputs", *reports, "--out", args.out / "table.csv")


if __name__ == "__main__":
    main()
