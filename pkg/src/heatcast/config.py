"""
Experiment plans and shard files.

A plan is a JSON document laid out like:

    {
      "meta":  {"name": ..., "semver": [0, 1, 0], "description": ...},
      "data":  {"csv": null, "synth": {...}, "holidays": null},
      "split": {"train": ["2008-01-01", "2010-12-31"], "validation": ["2011-01-01", "2011-12-31"]},
      "grid":  {"windows": [4], "hidden_layers": [8], "variants": ["A", "B", "C", "D"],
                "trials": 10, "train_stride": null, "hourly_context": true},
      "train": {TrainConfig fields},
      "data_study":   {"spans": [[start, end], ...]},
      "factor_study": {"window": 4, "hidden_layers": 8},
      "core":  {"seed": 2017, "concurrency_limit": 1, "out": "runs/heatcast",
                "histogram_bin_width": 5.0, "alpha": 0.05, "t_test": "student"}
    }

Missing sections take their defaults. A study report embeds its resolved plan
under "plan" and is accepted wherever a plan is.
"""

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields, replace
from datetime import date
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple, Union

import common.slog as slog
from heatcast.dataset import SUPPORTED_WINDOWS, DatasetVariant
from heatcast.enn import TrainConfig
from heatcast.errors import ConfigurationError
from heatcast.evaluation import T_TEST_VARIANTS
from heatcast.synth import SynthConfig


@dataclass(frozen=True)
class DateRange:
    start: str
    end: str

    def __post_init__(self):
        try:
            first, last = date.fromisoformat(self.start), date.fromisoformat(self.end)
        except (TypeError, ValueError):
            raise ConfigurationError(f"Date range [{self.start!r}, {self.end!r}] is not ISO dates.")
        if last < first:
            raise ConfigurationError(f"Date range end {self.end} precedes start {self.start}.")

    @classmethod
    def parse(cls, raw) -> "DateRange":
        if not isinstance(raw, (list, tuple)) or len(raw) != 2:
            raise ConfigurationError(f"A date range is [start, end], got {raw!r}.")
        return cls(str(raw[0]), str(raw[1]))

    def to_list(self) -> List[str]:
        return [self.start, self.end]


@dataclass(frozen=True)
class DataSource:
    csv: Optional[str] = None
    synth: SynthConfig = field(default_factory=SynthConfig)
    holidays: Optional[str] = None


@dataclass(frozen=True)
class Split:
    train: DateRange = DateRange("2008-01-01", "2010-12-31")
    validation: DateRange = DateRange("2011-01-01", "2011-12-31")

    def __post_init__(self):
        if not self.train.end < self.validation.start:
            raise ConfigurationError(
                f"Training range must end before validation starts "
                f"({self.train.end} vs {self.validation.start})."
            )


@dataclass(frozen=True)
class Grid:
    windows: Tuple[int, ...] = (4,)
    hidden_layers: Tuple[int, ...] = (8,)
    variants: Tuple[str, ...] = ("A", "B", "C", "D")
    trials: int = 10
    train_stride: Optional[int] = None
    # context advances every hour in training; updates still follow train_stride
    hourly_context: bool = True

    def __post_init__(self):
        for w in self.windows:
            if w not in SUPPORTED_WINDOWS:
                raise ConfigurationError(f"Window {w} not in {SUPPORTED_WINDOWS}.")
        for n in self.hidden_layers:
            if n < 1:
                raise ConfigurationError(f"Hidden layer count must be >= 1, got {n}.")
        object.__setattr__(self, "variants", tuple(DatasetVariant.parse(v).label for v in self.variants))
        if not (self.windows and self.hidden_layers and self.variants):
            raise ConfigurationError("windows, hidden_layers and variants must be non-empty.")
        if self.trials < 1:
            raise ConfigurationError(f"trials must be >= 1, got {self.trials}.")
        if self.train_stride is not None and self.train_stride < 1:
            raise ConfigurationError(f"train_stride must be >= 1, got {self.train_stride}.")

    def stride(self, window: int) -> int:
        return self.train_stride if self.train_stride is not None else max(1, window // 2)


@dataclass(frozen=True)
class Core:
    seed: int = 2017
    concurrency_limit: int = 1
    out: str = "runs/heatcast"
    histogram_bin_width: float = 5.0
    alpha: float = 0.05
    t_test: str = "student"

    def __post_init__(self):
        if self.seed < 0:
            raise ConfigurationError(f"seed must be >= 0, got {self.seed}.")
        if self.concurrency_limit < 1:
            raise ConfigurationError(f"concurrency_limit must be >= 1, got {self.concurrency_limit}.")
        if not self.histogram_bin_width > 0:
            raise ConfigurationError("histogram_bin_width must be > 0.")
        if not 0 < self.alpha < 1:
            raise ConfigurationError(f"alpha must lie in (0, 1), got {self.alpha}.")
        if self.t_test not in T_TEST_VARIANTS:
            raise ConfigurationError(f"t_test must be one of {T_TEST_VARIANTS}, got {self.t_test!r}.")


DEFAULT_SPANS = (
    DateRange("2010-01-01", "2010-12-31"),
    DateRange("2009-01-01", "2010-12-31"),
    DateRange("2008-01-01", "2010-12-31"),
)


@dataclass(frozen=True)
class ExperimentPlan:
    meta: Dict[str, Any] = field(default_factory=lambda: {"name": "heatcast", "semver": [0, 1, 0]})
    data: DataSource = field(default_factory=DataSource)
    split: Split = field(default_factory=Split)
    grid: Grid = field(default_factory=Grid)
    train: TrainConfig = field(default_factory=TrainConfig)
    spans: Tuple[DateRange, ...] = DEFAULT_SPANS
    factor_window: int = 4
    factor_layers: int = 8
    core: Core = field(default_factory=Core)

    def to_dict(self) -> dict:
        return {
            "meta": dict(self.meta),
            "data": {
                "csv": self.data.csv,
                "synth": self.data.synth.to_dict(),
                "holidays": self.data.holidays,
            },
            "split": {"train": self.split.train.to_list(), "validation": self.split.validation.to_list()},
            "grid": {
                "windows": list(self.grid.windows),
                "hidden_layers": list(self.grid.hidden_layers),
                "variants": list(self.grid.variants),
                "trials": self.grid.trials,
                "train_stride": self.grid.train_stride,
                "hourly_context": self.grid.hourly_context,
            },
            "train": asdict(self.train),
            "data_study": {"spans": [s.to_list() for s in self.spans]},
            "factor_study": {"window": self.factor_window, "hidden_layers": self.factor_layers},
            "core": asdict(self.core),
        }

    def digest(self) -> str:
        """Identity of everything that affects results (output location and parallelism excluded)."""
        data = self.to_dict()
        data["core"] = {k: v for k, v in data["core"].items() if k not in ("out", "concurrency_limit")}
        data.pop("meta")
        return hashlib.sha256(json.dumps(data, sort_keys=True).encode("utf-8")).hexdigest()[:16]


def _section(raw: dict, name: str) -> dict:
    value = raw.get(name) or {}
    if not isinstance(value, dict):
        raise ConfigurationError(f"Plan section '{name}' must be an object.")
    return value


def _build(cls, values: dict, section: str):
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(values) - known)
    if unknown:
        raise ConfigurationError(f"Unknown keys in '{section}': {unknown}.")
    try:
        return cls(**values)
    except TypeError as exc:
        raise ConfigurationError(f"Bad '{section}' settings: {exc}")


def plan_from_dict(raw: dict) -> ExperimentPlan:
    if not isinstance(raw, dict):
        raise ConfigurationError("A plan must be a JSON object.")
    # study configs nest the plan under "system"; reports under "plan"
    for wrapper in ("system", "plan"):
        if isinstance(raw.get(wrapper), dict):
            raw = raw[wrapper]

    data = _section(raw, "data")
    grid = dict(_section(raw, "grid"))
    for key in ("windows", "hidden_layers", "variants"):
        if key in grid:
            grid[key] = tuple(grid[key])
    split = _section(raw, "split")
    factor = _section(raw, "factor_study")
    spans = _section(raw, "data_study").get("spans")

    return ExperimentPlan(
        meta=dict(_section(raw, "meta")) or ExperimentPlan().meta,
        data=DataSource(
            csv=data.get("csv"),
            synth=SynthConfig.from_dict(data.get("synth") or {}),
            holidays=data.get("holidays"),
        ),
        split=Split(
            train=DateRange.parse(split["train"]) if "train" in split else Split.train,
            validation=DateRange.parse(split["validation"]) if "validation" in split else Split.validation,
        ),
        grid=_build(Grid, grid, "grid"),
        train=_build(TrainConfig, _section(raw, "train"), "train"),
        spans=tuple(DateRange.parse(s) for s in spans) if spans else DEFAULT_SPANS,
        factor_window=int(factor.get("window", 4)),
        factor_layers=int(factor.get("hidden_layers", 8)),
        core=_build(Core, _section(raw, "core"), "core"),
    )


def load_plan(path: Optional[Union[str, Path]]) -> ExperimentPlan:
    if path is None:
        return ExperimentPlan()
    path = Path(path)
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        slog.error("Plan file is not valid JSON.", context={"path": path, "error": str(exc)})
        raise ConfigurationError(f"Plan file {path} is not valid JSON: {exc}")
    return plan_from_dict(raw)


def apply_overrides(plan: ExperimentPlan, **overrides) -> ExperimentPlan:
    """
    Command-line overrides; None means "keep the plan's value". Recognized:
    seed, out, concurrency, trials, epochs, learning_rate, patience, csv,
    windows, layers, variants, train_range, validation_range.
    """
    core, grid, train, data, split = {}, {}, {}, {}, {}
    o = {k: v for k, v in overrides.items() if v is not None}
    if "seed" in o:
        core["seed"] = int(o["seed"])
    if "out" in o:
        core["out"] = str(o["out"])
    if "concurrency" in o:
        core["concurrency_limit"] = int(o["concurrency"])
    if "trials" in o:
        grid["trials"] = int(o["trials"])
    if "windows" in o:
        grid["windows"] = tuple(int(w) for w in o["windows"])
    if "layers" in o:
        grid["hidden_layers"] = tuple(int(n) for n in o["layers"])
    if "variants" in o:
        grid["variants"] = tuple(o["variants"])
    if "epochs" in o:
        train["epochs"] = int(o["epochs"])
    if "learning_rate" in o:
        train["learning_rate"] = float(o["learning_rate"])
    if "patience" in o:
        train["early_stop_patience"] = int(o["patience"])
    if "csv" in o:
        data["csv"] = str(o["csv"])
    if "train_range" in o:
        split["train"] = DateRange.parse(o["train_range"])
    if "validation_range" in o:
        split["validation"] = DateRange.parse(o["validation_range"])
    return replace(
        plan,
        split=replace(plan.split, **split),
        core=replace(plan.core, **core),
        grid=replace(plan.grid, **grid),
        train=replace(plan.train, **train),
        data=replace(plan.data, **data),
    )


# === Shards ===


@dataclass(frozen=True)
class Shard:
    """Shard `id` of `count` owns the jobs whose ordinal % count == id - 1."""

    id: int = 1
    count: int = 1

    def __post_init__(self):
        if self.count < 1 or not 1 <= self.id <= self.count:
            raise ConfigurationError(f"Invalid shard {self.id} of {self.count}.")

    def owns(self, ordinal: int) -> bool:
        return ordinal % self.count == self.id - 1


def load_shard(path: Optional[Union[str, Path]]) -> Shard:
    if path is None:
        return Shard()
    try:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
        if not isinstance(raw, dict):
            raise ConfigurationError(f"Shard file {path} must hold a JSON object.")
        return Shard(id=int(raw.get("id", 1)), count=int(raw.get("count", 1)))
    except ConfigurationError as exc:
        slog.error("Shard file rejected.", context={"path": path, "error": str(exc)})
        raise
    except (TypeError, ValueError) as exc:
        slog.error("Shard file rejected.", context={"path": path, "error": str(exc)})
        raise ConfigurationError(f"Shard file {path} is not a valid shard: {exc}")


def write_shard_files(study_dir: Union[str, Path], count: int) -> List[Path]:
    """Writes <study_dir>/config/shards/<k>.json for k = 1..count."""
    if count < 1:
        raise ConfigurationError(f"Shard count must be a positive integer, got {count}.")
    shard_dir = Path(study_dir) / "config" / "shards"
    shard_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for shard_id in range(1, count + 1):
        path = shard_dir / f"{shard_id}.json"
        path.write_text(json.dumps({"id": shard_id, "count": count}, indent=4), encoding="utf-8")
        written.append(path)
    slog.info("Generated shard files.", context={"study_dir": study_dir, "count": count})
    return written
