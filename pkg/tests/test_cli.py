import json

import numpy as np
import pytest

from heatcast.cli import main
from heatcast.dataset import TimeSeriesTable
from heatcast.evaluation import PredictionPairs
from heatcast.report import write_predictions
from heatcast.synth import export_csv

SPLIT = ["--train-range", "2008-01-01", "2008-09-30", "--validation-range", "2008-10-01", "2008-12-31"]


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    """generate -> train -> predict on one synthetic year."""
    root = tmp_path_factory.mktemp("pipeline")
    codes = {}
    codes["generate"] = main(["generate", "--years", "1", "--seed", "4", "--out", str(root / "data")])
    csv = str(root / "data" / "hourly.csv")
    codes["train"] = main(
        ["train", "--csv", csv, "--out", str(root / "model"), "--window", "4", "--layers", "2",
         "--variant", "D", "--epochs", "2", "--patience", "0", *SPLIT]
    )
    codes["predict"] = main(
        ["predict", "--csv", csv, "--model", str(root / "model" / "model.json"), "--out", str(root / "pred")]
    )
    return root, codes


def test_pipeline_exit_codes(pipeline):
    root, codes = pipeline
    assert codes == {"generate": 0, "train": 0, "predict": 0}
    assert (root / "data" / "hourly.csv").exists()
    model = json.loads((root / "model" / "model.json").read_text())
    assert model["dims"]["r"] == 7
    assert model["window_length"] == 4
    trace = json.loads((root / "model" / "trace.json").read_text())
    assert trace["trace"]["final_epoch"] == 2


def test_evaluate_predictions(pipeline):
    root, _ = pipeline
    code = main(["evaluate", "--predictions", str(root / "pred" / "predictions.csv"), "--out", str(root / "eval")])
    assert code == 0
    report = json.loads((root / "eval" / "report.json").read_text())
    assert report["overall"]["mape"] > 0
    assert report["count"] > 0


def test_predict_with_mismatched_window_exits_2(pipeline):
    root, _ = pipeline
    code = main(
        ["predict", "--csv", str(root / "data" / "hourly.csv"), "--model", str(root / "model" / "model.json"),
         "--window", "2", "--out", str(root / "bad")]
    )
    assert code == 2


def test_predict_with_other_variant_exits_2(pipeline):
    root, _ = pipeline
    code = main(
        ["predict", "--csv", str(root / "data" / "hourly.csv"), "--model", str(root / "model" / "model.json"),
         "--variant", "A", "--out", str(root / "bad")]
    )
    assert code == 2


def test_missing_model_exits_1(tmp_path, pipeline):
    root, _ = pipeline
    code = main(["predict", "--csv", str(root / "data" / "hourly.csv"), "--model", str(tmp_path / "none.json"),
                 "--out", str(tmp_path)])
    assert code == 1


def test_train_without_csv_exits_2(tmp_path):
    assert main(["train", "--out", str(tmp_path)]) == 2


def test_identity_predictions_score_zero(tmp_path):
    hours = np.datetime64("2011-01-03T00", "h") + np.arange(48)
    actual = np.linspace(100.0, 400.0, 48)
    write_predictions(PredictionPairs(actual, actual, hours), tmp_path / "p.csv")
    assert main(["evaluate", "--predictions", str(tmp_path / "p.csv"), "--out", str(tmp_path / "eval")]) == 0
    report = json.loads((tmp_path / "eval" / "report.json").read_text())
    assert report["overall"] == {"mad": 0.0, "mape": 0.0, "rmse": 0.0}
    assert [b["lower"] for b in report["histogram"]["bins"]] == [0.0]


def test_study_command_with_config(tmp_path):
    config = tmp_path / "config.json"
    config.write_text(
        json.dumps(
            {
                "system": {
                    "data": {"synth": {"seed": 2, "years": 1}},
                    "split": {"train": ["2008-01-01", "2008-09-30"], "validation": ["2008-10-01", "2008-12-31"]},
                    "grid": {"windows": [4], "hidden_layers": [1], "variants": ["A"], "trials": 2},
                    "train": {"epochs": 1, "early_stop_patience": 0, "hidden_size": 3},
                }
            }
        )
    )
    assert main(["sweep", "--config", str(config), "--out", str(tmp_path / "run"), "--seed", "8"]) == 0
    report = json.loads((tmp_path / "run" / "report.json").read_text())
    assert report["master_seed"] == 8
    assert len(report["trials"]) == 2


def test_unknown_command_is_usage_error():
    with pytest.raises(SystemExit) as info:
        main(["forecast"])
    assert info.value.code == 2


def _predict(root, model, out):
    return main(["predict", "--csv", str(root / "data" / "hourly.csv"), "--model", str(model), "--out", str(out)])


def test_model_without_statistics_exits_2(tmp_path, pipeline):
    root, _ = pipeline
    doc = json.loads((root / "model" / "model.json").read_text())
    doc["norm_stats"] = None
    model = tmp_path / "model.json"
    model.write_text(json.dumps(doc))
    assert _predict(root, model, tmp_path / "out") == 2


def test_model_that_is_not_utf8_exits_2(tmp_path, pipeline):
    root, _ = pipeline
    model = tmp_path / "model.json"
    model.write_bytes(b"\xff\xfe\x00garbage")
    assert _predict(root, model, tmp_path / "out") == 2


def _train(csv, out, variant="D"):
    return main(
        ["train", "--csv", str(csv), "--out", str(out), "--window", "4", "--layers", "1",
         "--variant", variant, "--epochs", "1", *SPLIT]
    )


def test_train_reads_only_the_channels_of_its_variant(tmp_path, synthetic_year):
    dark = TimeSeriesTable.from_arrays(
        synthetic_year.timestamps,
        synthetic_year.channel("demand"),
        synthetic_year.channel("temp"),
        np.zeros(len(synthetic_year)),
        synthetic_year.channel("wind"),
    )
    export_csv(dark, tmp_path / "dark.csv")
    assert _train(tmp_path / "dark.csv", tmp_path / "c", variant="C") == 0
    model = json.loads((tmp_path / "c" / "model.json").read_text())
    assert model["norm_stats"]["channels"] == ["demand", "temp", "wind"]
    assert _train(tmp_path / "dark.csv", tmp_path / "b", variant="B") == 2


def test_train_without_usable_validation_hours_skips_early_stopping(tmp_path, synthetic_year):
    def kept(seg):
        early = seg.timestamps < np.datetime64("2008-10-01T00", "h")
        return early | (seg.timestamps.astype(np.int64) % 24 < 3)

    export_csv(synthetic_year.where(kept), tmp_path / "short.csv")
    assert _train(tmp_path / "short.csv", tmp_path / "model") == 0
    trace = json.loads((tmp_path / "model" / "trace.json").read_text())
    assert trace["trace"]["validation_mape"] == []
    assert trace["trace"]["final_epoch"] == 1
