"""``volforecast`` command line: simulate, train, predict, evaluate, report."""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

from .checkpoint import CheckpointError, load_checkpoint
from .volume import ShapeMismatchError, VolumeFormatError, load_volume, save_volume

EXIT_FORMAT = 2
EXIT_SHAPE = 3
EXIT_CHECKPOINT = 4


def _fail(msg: str, code: int) -> int:
    print(f"volforecast: {msg}", file=sys.stderr)
    return code


def cmd_simulate(args) -> int:
    from .synth import CohortSpec, generate_cohort, write_cohort
    from .train import RunRecord, source_revision

    t0 = time.perf_counter()
    spec = CohortSpec.from_dict(json.loads(Path(args.spec).read_text()))
    manifest = write_cohort(generate_cohort(spec), args.out)
    RunRecord("simulate", spec.to_dict(), source_revision(), None, None, 0, False,
              time.perf_counter() - t0, paths={"manifest": str(manifest)}).write(Path(args.out) / "run_record.json")
    return 0


def cmd_train(args) -> int:
    from .train import TrainConfig, TrainingDivergedError, train

    config = TrainConfig.from_json(args.config)
    try:
        record = train(config)
    except TrainingDivergedError as e:
        return _fail(str(e), 1)
    print(f"best validation loss {record.best_val_loss!r} at step {record.best_step}; "
          f"checkpoint {record.paths['checkpoint']}")
    return 0


def cmd_predict(args) -> int:
    from .train import RunRecord, source_revision

    t0 = time.perf_counter()
    try:
        model = load_checkpoint(args.ckpt)
    except CheckpointError as e:
        return _fail(str(e), EXIT_CHECKPOINT)
    try:
        source = load_volume(args.input)
    except OSError as e:
        return _fail(f"cannot read {args.input}: {e}", EXIT_FORMAT)
    except VolumeFormatError as e:
        return _fail(str(e), EXIT_FORMAT)
    try:
        out = model.predict(source, args.t1, args.horizon)
    except ShapeMismatchError as e:
        return _fail(str(e), EXIT_SHAPE)
    save_volume(out, args.out)
    config = {"ckpt": str(args.ckpt), "input": str(args.input), "t1": args.t1, "horizon": args.horizon}
    RunRecord("predict", config, source_revision(), None, None, 0, False, time.perf_counter() - t0,
              paths={"prediction": str(args.out)}).write(Path(args.out).with_suffix(".run_record.json"))
    return 0


def cmd_evaluate(args) -> int:
    from .evaluate import evaluate

    report, _ = evaluate(args.ckpt, args.manifest, args.mask, args.report, split_file=args.split,
                         split_part=args.part, follow_up_month=args.follow_up_month, model_name=args.model_name,
                         train_set=args.train_set, test_set=args.test_set)
    dp = "undefined" if report.dpearson_global is None else f"{report.dpearson_global:.4f}"
    print(f"{report.n_participants} participants: mse {report.mse_mean:.6g}, psnr {report.psnr_mean:.3f} dB, "
          f"ssim {report.ssim_mean:.4f}, delta-pearson {dp} ({report.n_undefined} undefined)")
    return 0


def cmd_report(args) -> int:
    from .reporting import merge_reports, render_table, write_table
    from .train import RunRecord, source_revision

    t0 = time.perf_counter()
    rows = merge_reports(args.inputs)
    write_table(rows, args.out)
    sys.stdout.write(render_table(rows))
    RunRecord("report", {"inputs": [str(p) for p in args.inputs]}, source_revision(), None, None, 0, False,
              time.perf_counter() - t0, paths={"table": str(args.out)}).write(
        Path(args.out).with_suffix(".run_record.json"))
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="volforecast", description="Longitudinal 3D volume forecasting.")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="generate a synthetic cohort")
    s.add_argument("--spec", required=True, help="cohort spec JSON")
    s.add_argument("--out", required=True, help="output directory")
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("train", help="train a model")
    s.add_argument("--config", required=True, help="training config JSON")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("predict", help="forecast one volume")
    s.add_argument("--ckpt", required=True)
    s.add_argument("--in", dest="input", required=True)
    s.add_argument("--t1", type=float, default=0)
    s.add_argument("--horizon", type=float, default=24)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_predict)

    s = sub.add_parser("evaluate", help="evaluate a checkpoint on a cohort")
    s.add_argument("--ckpt", required=True, help="checkpoint path, or 'identity' / 'oracle'")
    s.add_argument("--manifest", required=True)
    s.add_argument("--mask", required=True, help="mask volume (voxels > 0.5 are in-mask)")
    s.add_argument("--report", required=True, help="output report CSV")
    s.add_argument("--split", help="split JSON; restricts evaluation to one partition")
    s.add_argument("--part", default="test", choices=("train", "val", "test"))
    s.add_argument("--follow-up-month", type=int, help="extrapolate this follow-up month to 24")
    s.add_argument("--model-name")
    s.add_argument("--train-set")
    s.add_argument("--test-set")
    s.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("report", help="merge report CSVs into one comparison table")
    s.add_argument("--inputs", nargs="+", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
