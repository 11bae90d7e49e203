"""Training loop: seeded pair shuffling, validation-based early stopping, checkpoints."""

from __future__ import annotations

import csv
import json
import math
import subprocess
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from .autodiff import Tensor, adam_step, no_grad
from .checkpoint import save_checkpoint
from .losses import LossWeights, mse_loss, total_loss
from .models import ForecastModel, ModelSpec, build, normalize_arch
from .volume import (DEFAULT_MASK_THRESHOLD, CohortSplit, LongitudinalPair, Volume, build_pairs,
                     compute_mask, load_scans, read_manifest, save_volume, split_by_participant)

LOG_COLUMNS = ("step", "mse", "feat", "ode", "total")


class TrainingDivergedError(RuntimeError):
    def __init__(self, step: int, checkpoint: Path | None):
        self.step = step
        self.checkpoint = checkpoint
        super().__init__(f"non-finite loss at step {step}; last good checkpoint: {checkpoint}")


@dataclass
class TrainConfig:
    arch: str
    data_dir: str
    output_dir: str
    dataset_style: str = "big"
    lr: float = 1e-4
    weight_decay: float = 1e-5
    batch_size: int = 1
    max_steps: int = 1000
    patience: int = 10
    eval_every: int = 100
    seed: int = 0
    # None picks the architecture default: 0.1/0.1 for odeunet, plain MSE otherwise
    lambda_feat: float | None = None
    lambda_ode: float | None = None
    n_val: int = 40
    n_test: int = 140
    split_file: str | None = None
    mask_threshold: float = DEFAULT_MASK_THRESHOLD
    model: dict = field(default_factory=dict)

    def __post_init__(self):
        self.arch = normalize_arch(self.arch)
        self.dataset_style = self.dataset_style.lower()
        self.validate()

    def validate(self) -> None:
        if self.batch_size != 1:
            raise ValueError("batch_size is fixed at 1")
        if self.dataset_style not in ("big", "small"):
            raise ValueError(f"dataset_style must be big or small, got {self.dataset_style!r}")
        if self.max_steps < 0 or self.eval_every < 1:
            raise ValueError("max_steps must be >= 0 and eval_every >= 1")
        if self.max_steps and self.max_steps < self.eval_every:
            raise ValueError("max_steps must be >= eval_every")
        if self.patience < 1:
            raise ValueError("patience must be >= 1")
        if self.lr <= 0 or self.weight_decay < 0:
            raise ValueError("lr must be positive and weight_decay non-negative")

    @property
    def loss_weights(self) -> LossWeights:
        default = 0.1 if self.arch == "odeunet" else 0.0
        lf = default if self.lambda_feat is None else self.lambda_feat
        lo = default if self.lambda_ode is None else self.lambda_ode
        return LossWeights(lf, lo)

    @property
    def model_spec(self) -> ModelSpec:
        return ModelSpec(self.arch, **self.model)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def from_json(cls, path) -> "TrainConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))


@dataclass
class RunRecord:
    command: str
    config: dict
    source_revision: str
    best_val_loss: float | None
    best_step: int | None
    steps_run: int
    stopped_early: bool
    wall_time_s: float
    evaluations: list = field(default_factory=list)
    paths: dict = field(default_factory=dict)
    notes: dict = field(default_factory=dict)

    def write(self, path) -> None:
        Path(path).write_text(json.dumps(asdict(self), indent=2, sort_keys=True) + "\n")


def source_revision() -> str:
    try:
        out = subprocess.run(["git", "rev-parse", "HEAD"], cwd=Path(__file__).parent, capture_output=True,
                             text=True, timeout=5)
    except (OSError, subprocess.SubprocessError):
        return "unknown"
    return out.stdout.strip() or "unknown"


def epoch_order(n: int, seed: int, epoch: int) -> np.ndarray:
    return np.random.default_rng([seed, epoch]).permutation(n)


def _arr(v: Volume) -> np.ndarray:
    return v.data[None, None].astype(np.float32)


def validation_loss(model: ForecastModel, pairs: list[LongitudinalPair], mask: np.ndarray) -> float:
    """Mean masked MSE over validation pairs."""
    with no_grad():
        vals = []
        for p in pairs:
            pred = model(Tensor(_arr(p.source)), p.t1, p.t2 - p.t1)
            vals.append(float(mse_loss(pred, _arr(p.target), mask[None, None]).data))
    return float(np.mean(vals))


@dataclass
class TrainResult:
    model: ForecastModel
    best_val_loss: float | None
    best_step: int | None
    steps_run: int
    stopped_early: bool
    evaluations: list
    log: list


def fit(model: ForecastModel, train_pairs: list[LongitudinalPair], val_pairs: list[LongitudinalPair],
        mask: np.ndarray, config: TrainConfig, checkpoint_path=None, log_path=None) -> TrainResult:
    """Run the optimisation loop; the model is left holding the best-validation weights."""
    if not train_pairs:
        raise ValueError("empty training set")
    if config.max_steps and not val_pairs:
        raise ValueError("empty validation set")
    weights = config.loss_weights
    is_ode = model.arch == "odeunet"
    params = model.trainable_parameters()
    best_state = [p.data.copy() for p in params]
    best_val, best_step = None, None
    evaluations, log = [], []
    bad = 0
    stopped_early = False
    step = 0
    if checkpoint_path is not None:
        save_checkpoint(model, checkpoint_path)
    log_file = open(log_path, "w", newline="") if log_path is not None else None
    writer = csv.writer(log_file, lineterminator="\n") if log_file else None
    if writer:
        writer.writerow(LOG_COLUMNS)
    n = len(train_pairs)
    order = None
    try:
        while step < config.max_steps:
            if step % n == 0:
                order = epoch_order(n, config.seed, step // n)
            pair = train_pairs[order[step % n]]
            step += 1
            x = Tensor(_arr(pair.source))
            target = _arr(pair.target)
            horizon = pair.t2 - pair.t1
            model.zero_grad()
            if is_ode:
                pred, z_end = model.forward_with_latent(x, pair.t1, horizon)
            else:
                pred, z_end = model(x, pair.t1, horizon), None
            loss, parts = total_loss(pred, target, model, x, pair.t1, horizon, weights, z_end=z_end)
            if not math.isfinite(parts["total"]):
                raise TrainingDivergedError(step, Path(checkpoint_path) if checkpoint_path else None)
            loss.backward()
            adam_step(params, lr=config.lr, weight_decay=config.weight_decay)
            row = (step, parts["mse"], parts["feat"], parts["ode"], parts["total"])
            log.append(row)
            if writer:
                writer.writerow([row[0]] + [repr(v) for v in row[1:]])
            if step % config.eval_every == 0 or step == config.max_steps:
                v = validation_loss(model, val_pairs, mask)
                evaluations.append([step, v])
                if best_val is None or v < best_val:
                    best_val, best_step, bad = v, step, 0
                    best_state = [p.data.copy() for p in params]
                    if checkpoint_path is not None:
                        save_checkpoint(model, checkpoint_path)
                else:
                    bad += 1
                    if bad >= config.patience:
                        stopped_early = True
                        break
    finally:
        if log_file:
            log_file.close()
    for p, d in zip(params, best_state):
        p.data = d
    return TrainResult(model, best_val, best_step, step, stopped_early, evaluations, log)


def prepare_data(config: TrainConfig):
    """Split, pairs and mask for a config; test participants are never loaded."""
    data_dir = Path(config.data_dir)
    manifest = data_dir / "manifest.csv"
    ids = sorted({r.participant_id for r in read_manifest(manifest)})
    if config.split_file:
        split = CohortSplit.from_dict(json.loads(Path(config.split_file).read_text()))
    else:
        split = split_by_participant(ids, config.n_val, config.n_test, config.seed)
    split.assert_disjoint()
    scans = load_scans(manifest, set(split.train_ids) | set(split.val_ids))
    train_scans = {k: scans[k] for k in split.train_ids}
    train_pairs = build_pairs(train_scans, config.dataset_style)
    val_pairs = build_pairs({k: scans[k] for k in split.val_ids}, "small")
    baselines = [min(visits, key=lambda mv: mv[0])[1] for _, visits in sorted(train_scans.items())]
    mask = compute_mask(baselines, config.mask_threshold)
    return split, train_pairs, val_pairs, mask, baselines[0].voxel_size_mm


def train(config: TrainConfig) -> RunRecord:
    """Train from a cohort directory; writes checkpoint, mask, split, log and run_record.json."""
    config.validate()
    t0 = time.perf_counter()
    out = Path(config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    split, train_pairs, val_pairs, mask, voxel_size = prepare_data(config)
    if not train_pairs:
        raise ValueError("empty training set")
    paths = {
        "checkpoint": out / "best.ckpt",
        "mask": out / "mask.vol",
        "split": out / "split.json",
        "log": out / "train_log.csv",
        "run_record": out / "run_record.json",
    }
    save_volume(Volume(mask.astype(np.float32), voxel_size), paths["mask"])
    paths["split"].write_text(json.dumps(split.to_dict(), indent=2) + "\n")
    model = build(config.model_spec, train_pairs[0].source.shape, seed=config.seed)
    with threadpool_limits(1):
        result = fit(model, train_pairs, val_pairs, mask, config, paths["checkpoint"], paths["log"])
    record = RunRecord(
        command="train",
        config=config.to_dict(),
        source_revision=source_revision(),
        best_val_loss=result.best_val_loss,
        best_step=result.best_step,
        steps_run=result.steps_run,
        stopped_early=result.stopped_early,
        wall_time_s=time.perf_counter() - t0,
        evaluations=result.evaluations,
        paths={k: str(v) for k, v in paths.items()},
        notes={
            "n_train_pairs": len(train_pairs),
            "n_val_pairs": len(val_pairs),
            "mask_rule": f"mean of training baselines > {config.mask_threshold}",
            "validation_pairs": "baseline to month 24",
            "loss_weights": asdict(config.loss_weights),
        },
    )
    record.write(paths["run_record"])
    return record
