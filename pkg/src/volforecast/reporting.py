"""CSV artifacts for evaluation runs and the merged comparison table.

Floats are written with ``repr`` so parsing a file gives back the exact
values that produced it; undefined correlations are the literal ``undefined``.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .metrics import Histogram, MetricsReport, correlation_histogram
from .volume import Volume, save_volume

UNDEFINED = "undefined"
MSE_UNIT = 1e-4
PM = "±"

REPORT_COLUMNS = ("model", "train_set", "test_set", "mse_e4", "psnr_mean", "psnr_sd", "ssim",
                  "dpearson_global", "dpearson_voxel_mean", "dpearson_voxel_sd", "n_undefined",
                  "n_participants", "mse_raw", "psnr_pooled", "ssim_whole")
PARTICIPANT_COLUMNS = ("participant_id", "mse", "psnr_db", "ssim", "ssim_whole", "delta_pearson")
TABLE_COLUMNS = ("Model", "Train", "Test", "MSE (x1e-4)", "PSNR (dB)", "SSIM",
                 "Delta-Pearson global", "Delta-Pearson voxel")
_TEXT = {"model", "train_set", "test_set"}
_INT = {"n_undefined", "n_participants"}


def fmt(v) -> str:
    if v is None:
        return UNDEFINED
    if isinstance(v, (int, np.integer)) and not isinstance(v, bool):
        return str(int(v))
    return repr(float(v))


def parse(s: str):
    if s == UNDEFINED:
        return None
    return float(s)


@dataclass(frozen=True)
class ReportRow:
    model: str
    train_set: str
    test_set: str
    mse_e4: float
    psnr_mean: float
    psnr_sd: float
    ssim: float
    dpearson_global: float | None
    dpearson_voxel_mean: float | None
    dpearson_voxel_sd: float | None
    n_undefined: int
    n_participants: int
    mse_raw: float
    psnr_pooled: float
    ssim_whole: float

    @classmethod
    def from_report(cls, report: MetricsReport, model: str, train_set: str, test_set: str) -> "ReportRow":
        return cls(model, train_set, test_set, report.mse_mean / MSE_UNIT, report.psnr_mean, report.psnr_sd,
                   report.ssim_mean, report.dpearson_global, report.dpearson_voxel_mean,
                   report.dpearson_voxel_sd, report.n_undefined, report.n_participants,
                   report.mse_mean, report.psnr_pooled, report.ssim_whole_mean)

    def cells(self) -> list[str]:
        return [getattr(self, c) if c in _TEXT else fmt(getattr(self, c)) for c in REPORT_COLUMNS]

    @classmethod
    def from_cells(cls, d: dict) -> "ReportRow":
        vals = {}
        for c in REPORT_COLUMNS:
            s = d[c]
            vals[c] = s if c in _TEXT else (int(s) if c in _INT else parse(s))
        return cls(**vals)


def write_report_csv(rows: list[ReportRow], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(REPORT_COLUMNS)
        for r in rows:
            w.writerow(r.cells())


def read_report_csv(path) -> list[ReportRow]:
    with open(path, newline="", encoding="utf-8") as f:
        return [ReportRow.from_cells(d) for d in csv.DictReader(f)]


def write_participants_csv(report: MetricsReport, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(PARTICIPANT_COLUMNS)
        for r in report.rows:
            w.writerow([r.participant_id, fmt(r.mse), fmt(r.psnr_db), fmt(r.ssim), fmt(r.ssim_whole),
                        fmt(r.delta_pearson)])


def write_histogram_csv(hist: Histogram, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(("lo", "hi", "count"))
        for lo, hi, c in hist.rows():
            w.writerow((fmt(lo), fmt(hi), c))


def artifact_paths(report_path) -> dict[str, Path]:
    p = Path(report_path)
    stem = p.with_suffix("")
    return {
        "report": p,
        "participants": Path(f"{stem}.participants.csv"),
        "mse_map": Path(f"{stem}.mse_map.vol"),
        "dpearson_map": Path(f"{stem}.dpearson_map.vol"),
        "hist_dpearson": Path(f"{stem}.hist_dpearson.csv"),
        "hist_intensity": Path(f"{stem}.hist_intensity.csv"),
    }


def write_evaluation(report: MetricsReport, report_path, model: str, train_set: str, test_set: str,
                     voxel_size_mm=(1.0, 1.0, 1.0)) -> dict[str, Path]:
    """Report CSV plus per-participant table, voxel maps and histogram tables."""
    paths = artifact_paths(report_path)
    paths["report"].parent.mkdir(parents=True, exist_ok=True)
    write_report_csv([ReportRow.from_report(report, model, train_set, test_set)], paths["report"])
    write_participants_csv(report, paths["participants"])
    if report.mse_map is not None:
        save_volume(Volume(report.mse_map.astype(np.float32), voxel_size_mm), paths["mse_map"])
    else:
        paths.pop("mse_map")
    if report.r_map is not None:
        save_volume(Volume(report.r_map.astype(np.float32), voxel_size_mm), paths["dpearson_map"])
    else:
        paths.pop("dpearson_map")
    write_histogram_csv(correlation_histogram(report.voxel_r_values()), paths["hist_dpearson"])
    inten = [] if report.intensity_r_map is None else list(report.intensity_r_map.ravel())
    write_histogram_csv(correlation_histogram(inten), paths["hist_intensity"])
    return paths


# -- merged comparison table --

@dataclass(frozen=True)
class TableRow:
    model: str
    train_set: str
    test_set: str
    mse_e4: float
    psnr_mean: float
    psnr_sd: float
    ssim: float
    dpearson_global: float | None
    dpearson_voxel: float | None

    def cells(self) -> list[str]:
        return [self.model, self.train_set, self.test_set, fmt(self.mse_e4),
                f"{fmt(self.psnr_mean)}{PM}{fmt(self.psnr_sd)}", fmt(self.ssim),
                fmt(self.dpearson_global), fmt(self.dpearson_voxel)]

    @classmethod
    def from_cells(cls, cells: list[str]) -> "TableRow":
        model, train, test, mse_e4, psnr, ssim, dpg, dpv = cells
        mean, sd = psnr.split(PM)
        return cls(model, train, test, float(mse_e4), float(mean), float(sd), float(ssim), parse(dpg), parse(dpv))


def merge_reports(paths) -> list[TableRow]:
    rows = []
    for p in paths:
        for r in read_report_csv(p):
            rows.append(TableRow(r.model, r.train_set, r.test_set, r.mse_e4, r.psnr_mean, r.psnr_sd,
                                 r.ssim, r.dpearson_global, r.dpearson_voxel_mean))
    return rows


def write_table(rows: list[TableRow], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(TABLE_COLUMNS)
        for r in rows:
            w.writerow(r.cells())


def read_table(path) -> list[TableRow]:
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.reader(f)
        header = next(reader)
        if tuple(header) != TABLE_COLUMNS:
            raise ValueError(f"unexpected table header {header}")
        return [TableRow.from_cells(cells) for cells in reader]


def _short(v, digits: int) -> str:
    if v is None:
        return "n/a"
    if math.isinf(v):
        return "inf"
    return f"{v:.{digits}f}"


def render_table(rows: list[TableRow]) -> str:
    """Human-readable fixed-width rendering with rounded values."""
    body = [[r.model, r.train_set, r.test_set, _short(r.mse_e4, 2),
             f"{_short(r.psnr_mean, 2)} {PM} {_short(r.psnr_sd, 2)}", _short(r.ssim, 3),
             _short(r.dpearson_global, 3), _short(r.dpearson_voxel, 3)] for r in rows]
    grid = [list(TABLE_COLUMNS)] + body
    widths = [max(len(row[i]) for row in grid) for i in range(len(TABLE_COLUMNS))]
    lines = ["  ".join(c.ljust(w) for c, w in zip(row, widths)).rstrip() for row in grid]
    lines.insert(1, "  ".join("-" * w for w in widths))
    return "\n".join(lines) + "\n"
