"""Evaluate a trained run on a shifted external cohort (faster atrophy, new seed).

    python3 scripts/cross_cohort.py --run runs/synthetic/unet --out runs/shifted
"""

import argparse
from pathlib import Path

from _common import evaluate, run, simulate


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--run", type=Path, required=True, help="training output directory")
    ap.add_argument("--rate-factor", type=float, default=1.25)
    ap.add_argument("--participants", type=int, default=140)
    ap.add_argument("--seed", type=int, default=4242)
    ap.add_argument("--out", type=Path, default=Path("runs/shifted"))
    args = ap.parse_args()

    manifest = simulate(args.out / "cohort", n_participants=args.participants, seed=args.seed,
                        global_rate_mean=0.002 * args.rate_factor)
    reports = [evaluate(args.run, manifest, args.out / "model.csv", split=False, test_set="shifted")]
    for ref in ("identity", "oracle"):
        reports.append(evaluate(args.run, manifest, args.out / f"{ref}.csv", ckpt=ref, split=False, test_set="shifted"))
    run("report", "--inputs", *reports, "--out", args.out / "table.csv")


if __name__ == "__main__":
    main()
