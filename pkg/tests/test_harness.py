import json
import math

import numpy as np
import pytest

from ldsf import cli
from ldsf.asc_model import scatterset_from_json, scatterset_to_json, synthesize_image
from ldsf.errors import InvalidCheckpointError, InvalidParameterError, InvalidProtocolError
from ldsf.extraction import ExtractionConfig
from ldsf.harness import (LFM_INTERVALS, PROTOCOLS, Metrics, TrainConfig, aggregate, build_splits,
                          checkpoint_hash, default_templates, evaluate, extract_samples, in_interval,
                          load_dataset, measured_snr_db, save_dataset, save_result, soc_split,
                          synth_dataset, train_ldsf)
from ldsf.harness.templates import Component, TargetTemplate, local
from ldsf.lemsf import LemsfConfig

FAST = TrainConfig(epochs=2, batch=16, lemsf=LemsfConfig(heads=2, semantic_dim=8))


@pytest.fixture(scope="module")
def small(request):
    samples = synth_dataset(n_per_class=6, seed=11)
    cache = request.config.cache.mkdir("ldsf-extraction")
    return extract_samples(samples, ExtractionConfig(relax_passes=0, max_centers=10), cache_dir=cache)


# --- synthesis -----------------------------------------------------------------------

def test_noise_free_images_equal_synthesis():
    for s in synth_dataset(n_per_class=2, snr_db=math.inf, seed=5):
        assert np.array_equal(s.image.data, synthesize_image(s.truth, s.image.config).data)


def test_synthesis_is_deterministic():
    a = synth_dataset(n_per_class=3, seed=9)
    b = synth_dataset(n_per_class=3, seed=9)
    assert all(x.image.data.tobytes() == y.image.data.tobytes() and x.azimuth == y.azimuth for x, y in zip(a, b))
    c = synth_dataset(n_per_class=3, seed=10)
    assert a[0].image.data.tobytes() != c[0].image.data.tobytes()


@pytest.mark.parametrize("snr", [10.0, 20.0, 30.0])
def test_measured_snr_within_half_db(snr):
    for s in synth_dataset(n_per_class=2, snr_db=snr, seed=2):
        clean = synthesize_image(s.truth, s.image.config)
        assert abs(measured_snr_db(clean, s.image) - snr) < 0.5


def test_azimuths_cover_bins_and_labels():
    S = synth_dataset(n_per_class=72, seed=0)
    for label in range(3):
        bins = sorted(int(math.degrees(s.azimuth) // 5) for s in S if s.label == label)
        assert bins == list(range(72))


def test_visibility_window_and_template_size():
    c = local(1.0, 0.0, 0.0, 0.0, window=(math.radians(-90), math.pi))
    assert c.visible(0.0) and c.visible(math.radians(89)) and not c.visible(math.pi)
    assert Component(c.center).visible(2.0)
    with pytest.raises(InvalidParameterError):
        TargetTemplate("tiny", (c, c))
    assert {t.name for t in default_templates()} == {"boxy", "cross", "linear"}


# --- splits --------------------------------------------------------------------------

def test_soc_split_halves_every_class():
    S = synth_dataset(n_per_class=400, seed=1)
    tr, te = soc_split(S)
    for label in range(3):
        assert sum(S[i].label == label for i in tr) == 200
        assert sum(S[i].label == label for i in te) == 200


def test_protocol_splits():
    S = synth_dataset(n_per_class=144, seed=1)
    soc_tr, soc_te = build_splits(S, "SOC")
    assert {s.id for s in soc_tr}.isdisjoint({s.id for s in soc_te})
    assert len(soc_tr) + len(soc_te) == len(S)
    for p in PROTOCOLS[1:]:
        tr, te = build_splits(S, p)
        assert [s.id for s in te] == [s.id for s in soc_te]
        lo, hi = LFM_INTERVALS[p]
        assert all(in_interval(s.azimuth, lo, hi) for s in tr)
        assert {s.id for s in tr} <= {s.id for s in soc_tr}
    lfm3, _ = build_splits(S, "LFM3")
    assert all(0.0 <= math.degrees(s.azimuth) <= 90.0 for s in lfm3)
    lfm1, _ = build_splits(S, "LFM1")
    assert len(lfm1) / len(soc_tr) == pytest.approx(270 / 360)


def test_in_interval_wraps():
    assert in_interval(math.radians(270), -180, 90)
    assert in_interval(math.pi, -180, 90)
    assert not in_interval(math.radians(135), -180, 90)


def test_empty_and_unknown_protocol():
    S = synth_dataset(n_per_class=4, seed=0, fixed_azimuth=math.radians(180))
    with pytest.raises(InvalidProtocolError):
        build_splits(S, "LFM3")
    with pytest.raises(InvalidProtocolError):
        build_splits(S, "EOC")


# --- metrics -------------------------------------------------------------------------

def test_metrics_examples(rng):
    labels = np.repeat(np.arange(3), 1000)
    perfect = Metrics.from_predictions(labels, labels, 3)
    assert perfect.pcc == 1.0 and np.array_equal(perfect.confusion, np.diag([1000] * 3))
    assert Metrics.from_predictions(np.zeros_like(labels), labels, 3).pcc == pytest.approx(1 / 3)
    rand = Metrics.from_predictions(rng.normal(size=(3000, 3)).argmax(1), labels, 3)
    # binomial(3000, 1/3): five standard deviations
    assert abs(rand.pcc - 1 / 3) < 5 * math.sqrt((1 / 3) * (2 / 3) / 3000)
    assert rand.total == 3000


def test_aggregate_and_trend():
    runs = [{"protocol": p, "ablation": "full", "lambda_g": 0.1, "pcc": v, "cut_final": 0.2}
            for p, v in [("SOC", 0.9), ("SOC", 1.0), ("LFM1", 0.85), ("LFM3", 0.75)]]
    out = aggregate(runs)
    assert out["pcc"]["full"]["SOC"]["mean"] == pytest.approx(0.95)
    assert out["pcc"]["full"]["SOC"]["std"] == pytest.approx(0.05)
    assert out["lfm_trend"]["full"]["LFM1"] == pytest.approx(0.10)
    assert out["lfm_trend"]["full"]["mean_drop"] == pytest.approx(0.15)


# --- training and checkpoints -----------------------------------------------------------

def test_training_is_deterministic(small, tmp_path):
    tr, te = build_splits(small, "SOC")
    h = []
    for k in range(2):
        r = train_ldsf(tr, te, FAST, seed=3)
        h.append(save_result(r, tmp_path / f"m{k}.json"))
    assert h[0] == h[1]
    assert (tmp_path / "m0.bin").read_bytes() == (tmp_path / "m1.bin").read_bytes()


def test_ablation_histories(small):
    tr, te = build_splits(small, "SOC")
    gvf = train_ldsf(tr, te, TrainConfig(epochs=1, batch=16, ablation="gvf-only"), seed=0)
    assert "L_g" not in gvf.history[0] and "L_sparse" in gvf.history[0]
    assert gvf.cut_final is None
    lem = train_ldsf(tr, te, TrainConfig(epochs=1, batch=16, ablation="lemsf-only"), seed=0)
    assert "L_g" in lem.history[0] and "L_sparse" not in lem.history[0]
    flat = train_ldsf(tr, te, TrainConfig(epochs=1, batch=16, ablation="no-topology"), seed=0)
    assert "L_g" not in flat.history[0]


def test_evaluate_rejects_class_mismatch(small, tmp_path):
    tr, te = build_splits(small, "SOC")
    two = [s for s in tr if s.label < 2]
    r = train_ldsf(two, None, TrainConfig(epochs=1, batch=16, ablation="lemsf-only"), seed=0)
    path = tmp_path / "two.json"
    save_result(r, path)
    assert evaluate(path, [s for s in te if s.label < 2]).total > 0
    with pytest.raises(InvalidCheckpointError):
        evaluate(path, te)


def test_train_config_round_trip_and_validation():
    cfg = TrainConfig(ablation="gvf-only", epochs=7)
    assert TrainConfig.from_dict(json.loads(json.dumps(cfg.to_dict()))) == cfg
    with pytest.raises(InvalidParameterError):
        TrainConfig(ablation="nope")
    with pytest.raises(InvalidParameterError):
        TrainConfig.from_dict({"learning_rate": 1})


# --- persistence ---------------------------------------------------------------------

def test_dataset_round_trip_is_stable(small, tmp_path):
    save_dataset(small, tmp_path / "a", {"seed": 11})
    loaded, meta = load_dataset(tmp_path / "a")
    assert meta == {"seed": 11}
    assert [s.id for s in loaded] == [s.id for s in small]
    for a, b in zip(small, loaded):
        # images are stored as float32
        np.testing.assert_allclose(b.image.data, a.image.data, rtol=1e-6, atol=1e-6 * np.abs(a.image.data).max())
        # scatter sets are written at fixed precision
        assert b.truth == scatterset_from_json(scatterset_to_json(a.truth))
        assert b.estimate == scatterset_from_json(scatterset_to_json(a.estimate))
        np.testing.assert_allclose(b.graph.X, a.graph.X, rtol=1e-8)
    save_dataset(loaded, tmp_path / "b", meta)
    for sub in ("manifest.json", "images", "truth", "estimates", "graphs"):
        pa, pb = tmp_path / "a" / sub, tmp_path / "b" / sub
        files = sorted(p.name for p in pa.iterdir()) if pa.is_dir() else [None]
        for f in files:
            fa, fb = (pa / f, pb / f) if f else (pa, pb)
            assert fa.read_bytes() == fb.read_bytes(), fa


# --- command line --------------------------------------------------------------------

def test_cli_pipeline(tmp_path, capsys):
    d = tmp_path
    assert cli.main(["synth", "--n", "3", "--seed", "4", "--out", str(d / "raw")]) == 0
    assert cli.main(["extract", "--in", str(d / "raw"), "--out", str(d / "ext"), "--max-centers", "4"]) == 0
    assert len(list((d / "ext" / "traces").glob("*.json"))) == 9
    assert cli.main(["graph", "--in", str(d / "ext"), "--out", str(d / "g")]) == 0
    cfg = d / "cfg.json"
    cfg.write_text(json.dumps({"train": {"epochs": 2, "batch": 8}}))
    ck = d / "runs" / "full.json"
    assert cli.main(["train", "--data", str(d / "g"), "--config", str(cfg), "--seed", "1", "--out", str(ck)]) == 0
    run = json.loads(ck.with_suffix(".run.json").read_text())
    assert run["checkpoint_sha256"] == checkpoint_hash(ck) and run["epochs_run"] == 2
    capsys.readouterr()
    assert cli.main(["eval", "--data", str(d / "g"), "--ckpt", str(ck), "--split", "all"]) == 0
    assert json.loads(capsys.readouterr().out)["n"] == 9
    assert cli.main(["prune", "--data", str(d / "g"), "--ckpt", str(ck), "--out", str(d / "prune.json")]) == 0
    rep = json.loads((d / "prune.json").read_text())
    assert rep["complexity_after"]["params"] < rep["complexity_before"]["params"]
    assert cli.main(["eval", "--data", str(d / "g"), "--ckpt", str(ck), "--state", str(d / "prune.json")]) == 0
    assert cli.main(["report", "--runs", str(d / "runs"), "--out", str(d / "report.json")]) == 0
    assert json.loads((d / "report.json").read_text())["runs"] == 1


def test_cli_config_is_loadable(tmp_path, capsys):
    assert cli.main(["config"]) == 0
    path = tmp_path / "c.json"
    path.write_text(capsys.readouterr().out)
    train, ext = cli.load_config(path)
    assert train == TrainConfig() and ext == ExtractionConfig()
