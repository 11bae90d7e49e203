import json

import numpy as np
import pytest

from volforecast import train as train_mod
from volforecast.checkpoint import load_checkpoint
from volforecast.evaluate import evaluate, evaluation_pairs
from volforecast.metrics import mse
from volforecast.reporting import read_report_csv
from volforecast.synth import CohortSpec, generate_cohort, write_cohort
from volforecast.train import TrainConfig, TrainingDivergedError, epoch_order, fit, train, validation_loss
from volforecast.volume import ShapeMismatchError, build_pairs

MODEL = {"base_channels": 4, "depth": 2}


@pytest.fixture(scope="module")
def cohort(tmp_path_factory):
    d = tmp_path_factory.mktemp("cohort")
    write_cohort(generate_cohort(CohortSpec(n_participants=12, dims=(8, 8, 8), seed=5)), d)
    return d


def config(cohort, out, **kw):
    base = dict(arch="unet", data_dir=str(cohort), output_dir=str(out), max_steps=20, eval_every=5, n_val=3,
                n_test=4, seed=1, model=MODEL)
    base.update(kw)
    return TrainConfig(**base)


def test_config_invariants(cohort, tmp_path):
    with pytest.raises(ValueError):
        config(cohort, tmp_path, batch_size=2)
    with pytest.raises(ValueError):
        config(cohort, tmp_path, max_steps=3, eval_every=5)
    with pytest.raises(ValueError):
        config(cohort, tmp_path, patience=0)
    with pytest.raises(ValueError):
        TrainConfig.from_dict({"arch": "unet", "data_dir": "x", "output_dir": "y", "learning_rate": 1})
    c = config(cohort, tmp_path)
    assert (c.lr, c.weight_decay, c.batch_size, c.patience) == (1e-4, 1e-5, 1, 10)
    assert c.loss_weights.is_plain
    assert config(cohort, tmp_path, arch="odeunet").loss_weights.lambda_ode == 0.1


def test_zero_steps_returns_initial_checkpoint(cohort, tmp_path):
    rec = train(config(cohort, tmp_path, max_steps=0))
    assert rec.evaluations == [] and rec.best_step is None and rec.steps_run == 0
    model = load_checkpoint(rec.paths["checkpoint"])
    from volforecast.models import build
    fresh = build(config(cohort, tmp_path).model_spec, (8, 8, 8), seed=1)
    assert [p.data.tobytes() for p in model.parameters()] == [p.data.tobytes() for p in fresh.parameters()]


def test_run_outputs_and_early_stopping_invariant(cohort, tmp_path):
    rec = train(config(cohort, tmp_path, max_steps=30, eval_every=5, patience=2))
    stored = json.loads((tmp_path / "run_record.json").read_text())
    assert stored["best_val_loss"] == min(v for _, v in stored["evaluations"])
    assert stored["config"]["arch"] == "unet" and stored["source_revision"]
    split, _, val_pairs, mask, _ = train_mod.prepare_data(config(cohort, tmp_path))
    model = load_checkpoint(rec.paths["checkpoint"])
    assert validation_loss(model, val_pairs, mask) == rec.best_val_loss
    log = (tmp_path / "train_log.csv").read_text().splitlines()
    assert log[0] == "step,mse,feat,ode,total" and len(log) == rec.steps_run + 1
    if rec.stopped_early:
        assert rec.steps_run < 30


def test_same_seed_byte_identical(cohort, tmp_path):
    a = train(config(cohort, tmp_path / "a", arch="odeunet", max_steps=6, eval_every=3))
    b = train(config(cohort, tmp_path / "b", arch="odeunet", max_steps=6, eval_every=3))
    for key in ("checkpoint", "log", "mask", "split"):
        assert open(a.paths[key], "rb").read() == open(b.paths[key], "rb").read()
    c = train(config(cohort, tmp_path / "c", arch="odeunet", max_steps=6, eval_every=3, seed=2))
    assert open(a.paths["checkpoint"], "rb").read() != open(c.paths["checkpoint"], "rb").read()


def test_epoch_order():
    assert np.array_equal(epoch_order(10, 3, 0), epoch_order(10, 3, 0))
    assert sorted(epoch_order(10, 3, 1)) == list(range(10))
    assert not np.array_equal(epoch_order(10, 3, 0), epoch_order(10, 3, 1))


def test_leakage_guard(cohort, tmp_path):
    ids = sorted({f"P{i:04d}" for i in range(12)})
    split = {"train": ids[:8], "val": ids[7:9], "test": ids[9:]}
    (tmp_path / "split.json").write_text(json.dumps(split))
    with pytest.raises(ValueError, match="leakage"):
        train(config(cohort, tmp_path / "out", split_file=str(tmp_path / "split.json")))
    assert not (tmp_path / "out" / "train_log.csv").exists()


def test_test_participants_never_loaded(cohort, tmp_path, monkeypatch):
    seen = []
    real = train_mod.load_scans
    monkeypatch.setattr(train_mod, "load_scans", lambda m, ids=None: seen.append(set(ids)) or real(m, ids))
    split, *_ = train_mod.prepare_data(config(cohort, tmp_path))
    assert seen and not seen[0] & set(split.test_ids)


def test_nan_aborts_keeping_last_good(cohort, tmp_path, monkeypatch):
    real = train_mod.total_loss
    calls = {"n": 0}

    def flaky(*a, **kw):
        calls["n"] += 1
        total, parts = real(*a, **kw)
        if calls["n"] == 8:
            parts = dict(parts, total=float("nan"))
        return total, parts
    monkeypatch.setattr(train_mod, "total_loss", flaky)
    with pytest.raises(TrainingDivergedError) as e:
        train(config(cohort, tmp_path, max_steps=20, eval_every=5))
    assert e.value.step == 8
    good = load_checkpoint(e.value.checkpoint)
    assert good.arch == "unet"


def test_empty_training_set(tmp_path):
    d = tmp_path / "c"
    write_cohort(generate_cohort(CohortSpec(n_participants=8, dims=(8, 8, 8), visit_months=(12, 30))), d)
    with pytest.raises(ValueError, match="empty training set"):
        train(config(d, tmp_path / "o", n_val=2, n_test=2))


def test_unet_descends_on_synthetic_pairs(tmp_path):
    c = generate_cohort(CohortSpec(n_participants=25, dims=(16, 16, 16), seed=8))
    pairs = build_pairs(c.scans, "big")[:50]
    assert len(pairs) == 50
    from volforecast.models import ModelSpec, build
    model = build(ModelSpec("unet"), (16, 16, 16), seed=0)
    cfg = TrainConfig(arch="unet", data_dir="-", output_dir="-", max_steps=2000, eval_every=2000)
    res = fit(model, pairs, pairs[:2], np.ones((16, 16, 16), bool), cfg)
    first = res.log[0][1]
    last = np.mean([row[1] for row in res.log[-50:]])
    assert last < first / 10


def test_evaluate_oracle_noiseless(tmp_path):
    d = tmp_path / "c"
    write_cohort(generate_cohort(CohortSpec(n_participants=6, dims=(8, 8, 8), noise_sd=0.0)), d)
    from volforecast.volume import Volume, save_volume
    save_volume(Volume(np.ones((8, 8, 8), np.float32), (1.0, 1.0, 1.0)), tmp_path / "mask.vol")
    rep, _ = evaluate("oracle", d / "manifest.csv", tmp_path / "mask.vol", tmp_path / "r.csv")
    assert rep.mse_mean < 1e-12 and abs(rep.ssim_mean - 1) < 1e-6 and abs(rep.dpearson_global - 1) < 1e-6


def test_evaluate_identity_and_reproducible(cohort, tmp_path):
    rec = train(config(cohort, tmp_path / "run", max_steps=10, eval_every=5))
    split = rec.paths["split"]
    rep, _ = evaluate("identity", cohort / "manifest.csv", rec.paths["mask"], tmp_path / "id.csv", split_file=split)
    assert rep.n_undefined == rep.n_participants == 4 and rep.dpearson_global is None
    pairs = evaluation_pairs(cohort / "manifest.csv", set(json.loads(open(split).read())["test"]))
    from volforecast.evaluate import load_mask
    m = load_mask(rec.paths["mask"])
    expected = np.mean([mse(p.source.data, p.target.data, m) for p in pairs])
    assert abs(rep.mse_mean - expected) < 1e-12
    assert read_report_csv(tmp_path / "id.csv")[0].dpearson_global is None
    evaluate(rec.paths["checkpoint"], cohort / "manifest.csv", rec.paths["mask"], tmp_path / "a.csv", split_file=split)
    evaluate(rec.paths["checkpoint"], cohort / "manifest.csv", rec.paths["mask"], tmp_path / "b.csv", split_file=split)
    for suffix in (".csv", ".participants.csv", ".mse_map.vol", ".dpearson_map.vol", ".hist_dpearson.csv"):
        assert (tmp_path / f"a{suffix}").read_bytes() == (tmp_path / f"b{suffix}").read_bytes()
    row = read_report_csv(tmp_path / "a.csv")[0]
    assert (row.model, row.train_set) == ("unet", "big")


def test_evaluate_errors(cohort, tmp_path):
    rec = train(config(cohort, tmp_path / "run", max_steps=0))
    big = tmp_path / "big"
    write_cohort(generate_cohort(CohortSpec(n_participants=3, dims=(16, 16, 16))), big)
    from volforecast.volume import Volume, save_volume
    save_volume(Volume(np.ones((16, 16, 16), np.float32), (1.0, 1.0, 1.0)), tmp_path / "m16.vol")
    with pytest.raises(ShapeMismatchError):
        evaluate(rec.paths["checkpoint"], big / "manifest.csv", tmp_path / "m16.vol", tmp_path / "r.csv")
    with pytest.raises(ShapeMismatchError):
        evaluate("identity", big / "manifest.csv", rec.paths["mask"], tmp_path / "r.csv")
    empty = tmp_path / "empty"
    write_cohort(generate_cohort(CohortSpec(n_participants=3, dims=(8, 8, 8), visit_months=(0, 12))), empty)
    with pytest.raises(ValueError, match="empty test set"):
        evaluate("identity", empty / "manifest.csv", rec.paths["mask"], tmp_path / "r.csv")


def test_evaluate_extrapolated_follow_up(tmp_path):
    d = tmp_path / "c"
    write_cohort(generate_cohort(CohortSpec(n_participants=4, dims=(8, 8, 8), visit_months=(0, 18))), d)
    from volforecast.volume import Volume, extrapolate_follow_up, load_scans, save_volume
    save_volume(Volume(np.ones((8, 8, 8), np.float32), (1.0, 1.0, 1.0)), tmp_path / "mask.vol")
    pairs = evaluation_pairs(d / "manifest.csv", follow_up_month=18)
    scans = load_scans(d / "manifest.csv")
    p = pairs[0]
    expect = extrapolate_follow_up(scans[p.participant_id][0][1], scans[p.participant_id][1][1])
    assert len(pairs) == 4 and np.array_equal(p.target.data, expect.data)
    rep, _ = evaluate("oracle", d / "manifest.csv", tmp_path / "mask.vol", tmp_path / "r.csv", follow_up_month=18)
    assert rep.n_participants == 4
