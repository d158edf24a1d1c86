import math

import pytest

import vslnet


def test_label_helpers():
    assert vslnet.time_to_span(0.0, 10.0, 5) == 0
    assert vslnet.time_to_span(10.0, 10.0, 5) == 4
    assert vslnet.span_to_time(4, 10.0, 5) == pytest.approx(8.0)
    assert vslnet.highlight_labels(2, 3, 8, 0.0) == [0, 0, 1, 1, 0, 0, 0, 0]
    assert vslnet.nil_labels(3, 4, 8, 4) == [1, 1]


def test_decoder_and_iou():
    m = vslnet.locate_span([0.1, 0.6, 0.3], [0.2, 0.3, 0.5])
    assert (m["start_index"], m["end_index"]) == (1, 2)
    assert m["probability"] == pytest.approx(0.30)
    assert vslnet.iou(20, 30, 22, 28) == pytest.approx(0.6)


def test_errors_map_to_python():
    with pytest.raises(vslnet.ShapeError):
        vslnet.locate_span([0.5, 0.5], [1.0])
    with pytest.raises(vslnet.ConfigError):
        vslnet.Model({"variant": "nope"})
    assert issubclass(vslnet.DataError, vslnet.VslnetError)


def test_train_predict_evaluate(tmp_path):
    data = tmp_path / "data"
    assert vslnet.generate_synthetic(data, seed=3, train_samples=40, val_samples=8,
                                     test_samples=8) == 56
    ds = vslnet.Dataset.load(str(data))
    assert len(ds) == 56 and len(ds.ids("test")) == 8

    model_cfg = {"variant": "vslnet-l", "dim": 16, "heads": 4, "max_length": 24,
                 "scales": [8, 12], "dtype": "f64"}
    model, summary = vslnet.train(ds, model_cfg, {"epochs": 1, "batch_size": 8},
                                  tmp_path / "run")
    assert len(summary["history"]) == 1
    assert (tmp_path / "run" / "best.ckpt").exists()

    sid = ds.ids("test")[0]
    scales = model.forward(ds, sid)
    assert [s["segment_length"] for s in scales] == [8, 12]
    assert sum(scales[0]["start_probs"]) == pytest.approx(1.0)
    assert max(scales[0]["nil"]) <= 1.0

    preds = model.predict(ds, "test", "union")
    report = vslnet.evaluate(preds, ds, "test")
    assert 0.0 <= report["miou"] <= 1.0 and math.isfinite(report["miou"])

    reloaded = vslnet.Model.load(tmp_path / "run" / "best.ckpt", model.config)
    again = reloaded.predict(ds, "test", "union")
    assert [p["start_time"] for p in again] == [p["start_time"] for p in preds]


def test_cli_entry():
    code, out, err = vslnet.run_cli(["--help"])
    assert code == 0 and "train" in out
    code, _, err = vslnet.run_cli(["frobnicate"])
    assert code == 1 and err
