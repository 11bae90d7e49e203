"""Helpers shared by the experiment scripts: thin wrappers over the CLI."""

import json
from pathlib import Path

from volforecast.cli import main


def run(*argv) -> None:
    code = main([str(a) for a in argv])
    if code:
        raise SystemExit(code)


def simulate(out: Path, **spec) -> Path:
    out = Path(out)
    out.parent.mkdir(parents=True, exist_ok=True)
    spec_path = out.with_suffix(".spec.json")
    spec_path.write_text(json.dumps(spec, indent=2))
    run("simulate", "--spec", spec_path, "--out", out)
    return out / "manifest.csv"


def train(out: Path, **config) -> Path:
    out = Path(out)
    out.parent.mkdir(parents=True, exist_ok=True)
    cfg_path = out.with_suffix(".train.json")
    cfg_path.write_text(json.dumps(dict(config, output_dir=str(out)), indent=2))
    run("train", "--config", cfg_path)
    return out


def evaluate(run_dir: Path, manifest: Path, report: Path, ckpt=None, split: bool = True, **extra) -> Path:
    args = ["evaluate", "--ckpt", ckpt or Path(run_dir) / "best.ckpt", "--manifest", manifest,
            "--mask", Path(run_dir) / "mask.vol", "--report", report]
    if split:
        args += ["--split", Path(run_dir) / "split.json"]
    for k, v in extra.items():
        args += [f"--{k.replace('_', '-')}", v]
    run(*args)
    return Path(report)
