import math

import numpy as np

from volforecast.metrics import evaluate_predictions
from volforecast.reporting import (REPORT_COLUMNS, ReportRow, TableRow, merge_reports, read_report_csv, read_table,
                                   render_table, write_evaluation, write_report_csv, write_table)
from volforecast.volume import load_volume


def _report(seed, identity=False):
    r = np.random.default_rng(seed)
    s = [r.uniform(0.2, 0.8, (4, 4, 4)) for _ in range(3)]
    t = [x * 0.9 for x in s]
    p = s if identity else [x * r.uniform(0.85, 0.95, x.shape) for x in s]
    return evaluate_predictions(["a", "b", "c"], s, t, p, np.ones((4, 4, 4), bool))


def test_header_starts_with_table_columns():
    assert REPORT_COLUMNS[:11] == ("model", "train_set", "test_set", "mse_e4", "psnr_mean", "psnr_sd", "ssim",
                                   "dpearson_global", "dpearson_voxel_mean", "dpearson_voxel_sd", "n_undefined")


def test_report_csv_round_trip_exact(tmp_path):
    rows = [ReportRow.from_report(_report(1), "unet", "big", "cohort"),
            ReportRow.from_report(_report(2, identity=True), "identity", "-", "cohort")]
    write_report_csv(rows, tmp_path / "r.csv")
    back = read_report_csv(tmp_path / "r.csv")
    assert back == rows
    assert back[1].dpearson_global is None
    assert "undefined" in (tmp_path / "r.csv").read_text()
    assert math.isclose(rows[0].mse_e4, rows[0].mse_raw * 1e4)


def test_merge_table_round_trip(tmp_path):
    paths = []
    for i, name in enumerate(("unet", "odeunet")):
        paths.append(tmp_path / f"{name}.csv")
        write_report_csv([ReportRow.from_report(_report(i), name, "big", "cohort")], paths[-1])
    rows = merge_reports(paths)
    write_table(rows, tmp_path / "t.csv")
    text = (tmp_path / "t.csv").read_text()
    assert "±" in text and "MSE (x1e-4)" in text
    assert read_table(tmp_path / "t.csv") == rows
    assert [r.model for r in rows] == ["unet", "odeunet"]
    assert "unet" in render_table(rows)


def test_table_row_infinite_psnr():
    r = TableRow("oracle", "-", "x", 0.0, math.inf, math.nan, 1.0, 1.0, None)
    back = TableRow.from_cells(r.cells())
    assert back.psnr_mean == math.inf and math.isnan(back.psnr_sd) and back.dpearson_voxel is None


def test_write_evaluation_artifacts(tmp_path):
    rep = _report(3)
    paths = write_evaluation(rep, tmp_path / "out" / "r.csv", "unet", "big", "cohort")
    for p in paths.values():
        assert p.exists()
    assert np.allclose(load_volume(paths["mse_map"]).data, rep.mse_map.astype(np.float32))
    lines = paths["participants"].read_text().splitlines()
    assert lines[0].startswith("participant_id,mse") and len(lines) == 4
