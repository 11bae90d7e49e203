"""Train one architecture on a synthetic cohort and compare it with the identity and oracle predictors.

    python3 scripts/synthetic_forecast.py --arch unet --steps 4000 --out runs/synthetic
"""

import argparse
from pathlib import Path

from _common import evaluate, run, simulate, train


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--arch", default="unet")
    ap.add_argument("--steps", type=int, default=4000)
    ap.add_argument("--eval-every", type=int, default=250)
    ap.add_argument("--participants", type=int, default=300)
    ap.add_argument("--seed", type=int, default=42)
    ap.add_argument("--out", type=Path, default=Path("runs/synthetic"))
    args = ap.parse_args()

    manifest = simulate(args.out / "cohort", n_participants=args.participants, seed=args.seed)
    run_dir = train(args.out / args.arch, arch=args.arch, data_dir=str(manifest.parent), max_steps=args.steps,
                    eval_every=args.eval_every, n_val=40, n_test=140)
    reports = [evaluate(run_dir, manifest, args.out / f"{args.arch}.csv")]
    for ref in ("identity", "oracle"):
        reports.append(evaluate(run_dir, manifest, args.out / f"{ref}.csv", ckpt=ref))
    run("report", "--inputs", *reports, "--out", args.out / "table.csv")


if __name__ == "__main__":
    main()
