"""Test-split evaluation for trained checkpoints and reference predictors."""

from __future__ import annotations

import json
import time
from pathlib import Path
from typing import Callable

import numpy as np
from threadpoolctl import threadpool_limits

from .checkpoint import load_checkpoint
from .metrics import MetricsReport, evaluate_predictions
from .models import ForecastModel
from .reporting import write_evaluation
from .synth import load_truths, oracle_predict
from .train import RunRecord, source_revision
from .volume import (CohortSplit, LongitudinalPair, ShapeMismatchError, Volume, build_pairs,
                     extrapolate_follow_up, load_scans, load_volume)

# (participant_id, source, t1, horizon) -> predicted follow-up
Predictor = Callable[[str, Volume, int, int], Volume]


def identity_predictor(pid: str, source: Volume, t1: int, horizon: int) -> Volume:
    return source


def model_predictor(model: ForecastModel) -> Predictor:
    def run(pid, source, t1, horizon):
        if tuple(source.shape) != tuple(model.input_shape):
            raise ShapeMismatchError(f"volume shape {source.shape} != model input {model.input_shape}")
        return model.predict(source, t1, horizon)
    return run


def oracle_predictor(cohort_dir) -> Predictor:
    truths = load_truths(cohort_dir)

    def run(pid, source, t1, horizon):
        return oracle_predict(truths[pid], source, t1, horizon, pid)
    return run


def evaluation_pairs(manifest, ids=None, follow_up_month: int | None = None) -> list[LongitudinalPair]:
    """Baseline-to-24 pairs; with ``follow_up_month`` the 24-month target is linearly extrapolated."""
    scans = load_scans(manifest, ids)
    if follow_up_month is None:
        return build_pairs(scans, "small")
    pairs = []
    for pid in sorted(scans):
        by_month = dict(scans[pid])
        if 0 in by_month and follow_up_month in by_month:
            target = extrapolate_follow_up(by_month[0], by_month[follow_up_month], follow_up_month, 24)
            pairs.append(LongitudinalPair(pid, 0, by_month[0], target))
    return pairs


def evaluate_pairs(predictor: Predictor, pairs: list[LongitudinalPair], mask: np.ndarray) -> MetricsReport:
    if not pairs:
        raise ValueError("empty test set")
    if mask.shape != pairs[0].source.shape:
        raise ShapeMismatchError(f"mask shape {mask.shape} != volume shape {pairs[0].source.shape}")
    preds = [predictor(p.participant_id, p.source, p.t1, p.t2 - p.t1) for p in pairs]
    return evaluate_predictions([p.participant_id for p in pairs], [p.source.data for p in pairs],
                                [p.target.data for p in pairs], [v.data for v in preds], mask)


def load_mask(path) -> np.ndarray:
    return load_volume(path).data > 0.5


def _split_ids(split_file, which: str):
    if split_file is None:
        return None
    split = CohortSplit.from_dict(json.loads(Path(split_file).read_text()))
    split.assert_disjoint()
    return set(getattr(split, f"{which}_ids"))


def _train_set_label(ckpt) -> str:
    rr = Path(ckpt).parent / "run_record.json"
    if rr.exists():
        return json.loads(rr.read_text())["config"]["dataset_style"]
    return "unknown"


def evaluate(ckpt, manifest, mask_path, report_path, split_file=None, split_part: str = "test",
             follow_up_month: int | None = None, model_name: str | None = None,
             train_set: str | None = None, test_set: str | None = None) -> tuple[MetricsReport, RunRecord]:
    """Evaluate a checkpoint, or the ``identity``/``oracle`` reference predictors, on a manifest.

    ``ckpt`` may be a checkpoint path, ``"identity"``, or ``"oracle"`` (the
    latter needs the synthetic truth sidecar next to the manifest).
    """
    t0 = time.perf_counter()
    ids = _split_ids(split_file, split_part)
    pairs = evaluation_pairs(manifest, ids, follow_up_month)
    mask = load_mask(mask_path)
    if ckpt == "identity":
        predictor, name, trained_on = identity_predictor, "identity", "-"
    elif ckpt == "oracle":
        predictor, name, trained_on = oracle_predictor(Path(manifest).parent), "oracle", "-"
    else:
        model = load_checkpoint(ckpt)
        predictor, name, trained_on = model_predictor(model), model.arch, _train_set_label(ckpt)
    with threadpool_limits(1):
        report = evaluate_pairs(predictor, pairs, mask)
    paths = write_evaluation(report, report_path, model_name or name, train_set or trained_on,
                             test_set or Path(manifest).parent.name, pairs[0].source.voxel_size_mm)
    record = RunRecord(
        command="evaluate",
        config={"ckpt": str(ckpt), "manifest": str(manifest), "mask": str(mask_path),
                "split_file": None if split_file is None else str(split_file), "split_part": split_part,
                "follow_up_month": follow_up_month},
        source_revision=source_revision(),
        best_val_loss=None,
        best_step=None,
        steps_run=0,
        stopped_early=False,
        wall_time_s=time.perf_counter() - t0,
        paths={k: str(v) for k, v in paths.items()},
        notes={"n_pairs": len(pairs), "n_undefined": report.n_undefined},
    )
    # named after the report so it cannot clobber a training run's record
    record.write(Path(report_path).with_suffix(".run_record.json"))
    return report, record
