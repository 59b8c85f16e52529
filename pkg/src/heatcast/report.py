"""
Report and prediction files.

Reports are JSON with sorted keys so identical runs give identical bytes.
Flat CSV tables are written next to every report for external plotting.
"""

import json
from pathlib import Path
from typing import Dict, List, Union

import numpy as np
import pandas as pd

import common.slog as slog
from heatcast.dataset import TIMESTAMP_FORMAT
from heatcast.errors import ParseError
from heatcast.evaluation import PredictionPairs

PREDICTION_COLUMNS = ("timestamp", "actual_mw", "predicted_mw")
FLOAT_FORMAT = "%.17g"

REPORT_FILE = "report.json"
SUMMARY_FILE = "summary.csv"
TTESTS_FILE = "ttests.csv"
RANGES_FILE = "ranges.csv"
HISTOGRAM_FILE = "histogram.csv"
DMAPE_FILE = "dmape.csv"


def write_json(data: dict, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(data, sort_keys=True, indent=2) + "\n", encoding="utf-8")
    return path


def _write_table(rows: List[dict], path: Path) -> None:
    # json_normalize flattens nested dicts such as the boxplot into box_q1, ...
    frame = pd.json_normalize(rows, sep="_") if rows else pd.DataFrame()
    frame.to_csv(path, index=False, float_format=FLOAT_FORMAT, lineterminator="\n")


def _ttest_rows(ttests: Dict[str, List[dict]]) -> List[dict]:
    rows = []
    for axis in sorted(ttests):
        for row in ttests[axis]:
            flat = {k: v for k, v in row.items() if k != "pair"}
            flat["a"], flat["b"] = row["pair"]
            rows.append(flat)
    return rows


def _trial_rows(report: dict, part: str) -> List[dict]:
    rows = []
    for trial in report["trials"]:
        for item in trial.get(part, ()):
            rows.append({"key": trial["key"], **item})
    return rows


def _model_rows(report: dict, part: str) -> List[dict]:
    return [{"model": m["model"], **item} for m in report["models"] for item in m.get(part, ())]


def write_study_report(report: dict, out: Union[str, Path]) -> Path:
    """report.json plus summary, t-test, range and histogram tables."""
    out = Path(out)
    path = write_json(report, out / REPORT_FILE)
    _write_table(report["summary"], out / SUMMARY_FILE)
    _write_table(_ttest_rows(report["ttests"]), out / TTESTS_FILE)
    rows = _model_rows if "models" in report else _trial_rows
    _write_table(rows(report, "ranges"), out / RANGES_FILE)
    _write_table(rows(report, "histogram"), out / HISTOGRAM_FILE)
    return path


def write_evaluation_report(report: dict, out: Union[str, Path]) -> Path:
    out = Path(out)
    path = write_json(report, out / REPORT_FILE)
    _write_table(report["ranges"], out / RANGES_FILE)
    _write_table(report["histogram"]["bins"], out / HISTOGRAM_FILE)
    _write_table(report["dmape"], out / DMAPE_FILE)
    slog.info("Evaluation report written.", context={"out": out, "count": report["count"]})
    return path


# === Predictions ===


def write_predictions(pairs: PredictionPairs, path: Union[str, Path]) -> None:
    frame = pd.DataFrame(
        {
            "timestamp": pd.DatetimeIndex(pairs.timestamps.astype("datetime64[s]")).strftime(TIMESTAMP_FORMAT),
            "actual_mw": pairs.actual,
            "predicted_mw": pairs.predicted,
        },
        columns=list(PREDICTION_COLUMNS),
    )
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, index=False, float_format=FLOAT_FORMAT, lineterminator="\n")
    slog.debug("Wrote predictions.", context={"path": path, "count": len(frame)})


def read_predictions(path: Union[str, Path]) -> PredictionPairs:
    path = Path(path)
    try:
        frame = pd.read_csv(path, dtype=str, keep_default_na=False, encoding="utf-8")
    except pd.errors.EmptyDataError:
        raise ParseError("prediction file is empty; a header row is required", line=1)
    if tuple(frame.columns) != PREDICTION_COLUMNS:
        raise ParseError(f"header must be '{','.join(PREDICTION_COLUMNS)}'", line=1)

    stamps = pd.to_datetime(frame["timestamp"].str.strip(), format=TIMESTAMP_FORMAT, errors="coerce")
    bad = np.flatnonzero(stamps.isna().to_numpy())
    if bad.size:
        raise ParseError(f"cannot parse timestamp '{frame['timestamp'].iloc[bad[0]]}'", line=int(bad[0]) + 2)
    values = {}
    for column in PREDICTION_COLUMNS[1:]:
        parsed = pd.to_numeric(frame[column].str.strip(), errors="coerce")
        bad = np.flatnonzero(parsed.isna().to_numpy())
        if bad.size:
            raise ParseError(f"cannot parse {column} value '{frame[column].iloc[bad[0]]}'", line=int(bad[0]) + 2)
        values[column] = parsed.to_numpy(dtype=np.float64)

    return PredictionPairs(
        actual=values["actual_mw"],
        predicted=values["predicted_mw"],
        timestamps=stamps.to_numpy().astype("datetime64[h]"),
    )
