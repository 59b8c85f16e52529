"""
Hourly demand/weather ingestion, working-day filtering, Z-score normalization
and sliding-window super-vector construction.

A TimeSeriesTable is a tuple of contiguous Segments; any gap of more than one
hour (in the file, or created by a filter) starts a new segment. Super-vectors
never span two segments.
"""

import re
from dataclasses import dataclass
from datetime import date
from enum import Enum
from pathlib import Path
from typing import Iterable, Iterator, List, NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from numpy.lib.stride_tricks import sliding_window_view

import common.slog as slog
from heatcast.errors import (
    ConfigurationError,
    DegenerateChannelError,
    EmptyDatasetError,
    ParseError,
    ValidationError,
)

# === Schema and Constants ===

CHANNELS = ("demand", "temp", "solar", "wind")
FACTOR_ORDER = ("temp", "solar", "wind")
CSV_COLUMNS = ("timestamp", "demand_mw", "temp_c", "solar_wm2", "wind_ms")
CHANNEL_COLUMNS = dict(zip(CHANNELS, CSV_COLUMNS[1:]))
TIMESTAMP_FORMAT = "%Y-%m-%dT%H:%M"
NON_NEGATIVE = ("demand", "solar", "wind")
SUPPORTED_WINDOWS = (2, 4, 8)
WORKING_WEEKMASK = "1111100"

HOUR = np.timedelta64(1, "h")

DateLike = Union[str, date, np.datetime64]


class HourlyRecord(NamedTuple):
    timestamp: np.datetime64
    demand: float
    ambient_temp: float
    solar_irradiance: float
    wind_speed: float


class DatasetVariant(Enum):
    """Input-factor combinations. Demand history is always part of the input."""

    A = ("temp",)
    B = ("temp", "solar")
    C = ("temp", "wind")
    D = ("temp", "solar", "wind")

    @property
    def label(self) -> str:
        return self.name

    @property
    def factors(self) -> Tuple[str, ...]:
        return self.value

    @property
    def channels(self) -> Tuple[str, ...]:
        """Channels the variant normalizes: demand, then its factors."""
        return ("demand", *self.value)

    @classmethod
    def parse(cls, label: str) -> "DatasetVariant":
        try:
            return cls[str(label).strip().upper()]
        except KeyError:
            raise ConfigurationError(f"Unknown dataset variant '{label}'; expected one of A, B, C, D.")


# === Tables ===


def _freeze(array: np.ndarray) -> np.ndarray:
    array.setflags(write=False)
    return array


@dataclass(frozen=True, eq=False)
class Segment:
    """A run of records whose timestamps advance by exactly one hour."""

    timestamps: np.ndarray
    demand: np.ndarray
    temp: np.ndarray
    solar: np.ndarray
    wind: np.ndarray

    def __post_init__(self):
        n = self.timestamps.shape[0]
        for name in CHANNELS:
            if self.channel(name).shape != (n,):
                raise ValidationError(f"Segment channel '{name}' does not match {n} timestamps.")
            _freeze(self.channel(name))
        _freeze(self.timestamps)

    def __len__(self) -> int:
        return int(self.timestamps.shape[0])

    def channel(self, name: str) -> np.ndarray:
        if name not in CHANNELS:
            raise ConfigurationError(f"Unknown channel '{name}'.")
        return getattr(self, name)

    def take(self, index) -> "Segment":
        return Segment(
            timestamps=np.array(self.timestamps[index]),
            **{name: np.array(self.channel(name)[index]) for name in CHANNELS},
        )

    def runs(self, mask: np.ndarray) -> List["Segment"]:
        """Sub-segments made of the maximal runs where mask is True."""
        edges = np.flatnonzero(np.diff(np.concatenate(([0], mask.astype(np.int8), [0]))))
        return [self.take(slice(start, stop)) for start, stop in zip(edges[0::2], edges[1::2])]


@dataclass(frozen=True, eq=False)
class TimeSeriesTable:
    segments: Tuple[Segment, ...]

    @classmethod
    def from_arrays(
        cls,
        timestamps,
        demand,
        temp,
        solar,
        wind,
        first_line: Optional[int] = None,
    ) -> "TimeSeriesTable":
        """
        Validates aligned hourly arrays and splits them into segments at gaps.

        `first_line` switches error messages to file line numbers (the line of
        element 0); otherwise they refer to record indices.
        """
        seconds = np.asarray(timestamps).astype("datetime64[s]")
        columns = {
            "demand": np.asarray(demand, dtype=np.float64),
            "temp": np.asarray(temp, dtype=np.float64),
            "solar": np.asarray(solar, dtype=np.float64),
            "wind": np.asarray(wind, dtype=np.float64),
        }
        n = seconds.shape[0]

        def where(i: int) -> str:
            return f"line {first_line + i}" if first_line is not None else f"record {i}"

        for name, values in columns.items():
            if values.shape != (n,):
                raise ValidationError(f"Channel '{name}' has {values.shape[0]} values for {n} timestamps.")
            bad = np.flatnonzero(~np.isfinite(values))
            if bad.size:
                raise ValidationError(f"{where(int(bad[0]))}: {CHANNEL_COLUMNS[name]} is not finite.")
            if name in NON_NEGATIVE:
                bad = np.flatnonzero(values < 0)
                if bad.size:
                    raise ValidationError(
                        f"{where(int(bad[0]))}: {CHANNEL_COLUMNS[name]} must be non-negative, "
                        f"got {values[bad[0]]}."
                    )

        misaligned = np.flatnonzero(seconds.astype(np.int64) % 3600 != 0)
        if misaligned.size:
            raise ValidationError(f"{where(int(misaligned[0]))}: timestamp is not on an exact hour.")

        hours = seconds.astype("datetime64[h]")
        steps = np.diff(hours).astype(np.int64)
        duplicate = np.flatnonzero(steps == 0)
        if duplicate.size:
            i = int(duplicate[0]) + 1
            raise ValidationError(f"{where(i)}: duplicate hour {hours[i]}.")
        backwards = np.flatnonzero(steps < 0)
        if backwards.size:
            i = int(backwards[0]) + 1
            raise ValidationError(f"{where(i)}: timestamp {hours[i]} precedes {hours[i - 1]}.")

        cuts = np.flatnonzero(steps > 1) + 1
        bounds = np.concatenate(([0], cuts, [n])) if n else np.array([], dtype=np.int64)
        segments = tuple(
            Segment(
                timestamps=hours[start:stop].copy(),
                **{name: values[start:stop].copy() for name, values in columns.items()},
            )
            for start, stop in zip(bounds[:-1], bounds[1:])
        )
        return cls(segments=segments)

    @classmethod
    def from_records(cls, records: Iterable[HourlyRecord]) -> "TimeSeriesTable":
        rows = list(records)
        return cls.from_arrays(
            np.array([r.timestamp for r in rows], dtype="datetime64[h]"),
            [r.demand for r in rows],
            [r.ambient_temp for r in rows],
            [r.solar_irradiance for r in rows],
            [r.wind_speed for r in rows],
        )

    def __len__(self) -> int:
        return sum(len(s) for s in self.segments)

    @property
    def segment_lengths(self) -> List[int]:
        return [len(s) for s in self.segments]

    @property
    def timestamps(self) -> np.ndarray:
        if not self.segments:
            return np.empty(0, dtype="datetime64[h]")
        return np.concatenate([s.timestamps for s in self.segments])

    def channel(self, name: str) -> np.ndarray:
        if not self.segments:
            return np.empty(0, dtype=np.float64)
        return np.concatenate([s.channel(name) for s in self.segments])

    def records(self) -> Iterator[HourlyRecord]:
        for seg in self.segments:
            for i in range(len(seg)):
                yield HourlyRecord(
                    seg.timestamps[i],
                    float(seg.demand[i]),
                    float(seg.temp[i]),
                    float(seg.solar[i]),
                    float(seg.wind[i]),
                )

    def where(self, predicate) -> "TimeSeriesTable":
        """Keeps records for which predicate(segment) is True; removals split segments."""
        kept: List[Segment] = []
        for seg in self.segments:
            kept.extend(seg.runs(np.asarray(predicate(seg), dtype=bool)))
        return TimeSeriesTable(segments=tuple(kept))

    def between(self, start: DateLike, end: DateLike) -> "TimeSeriesTable":
        """Records whose calendar date lies in [start, end], both inclusive."""
        first, last = np.datetime64(start, "D"), np.datetime64(end, "D")
        if last < first:
            raise ConfigurationError(f"Date range end {last} precedes start {first}.")

        def inside(seg: Segment) -> np.ndarray:
            days = seg.timestamps.astype("datetime64[D]")
            return (days >= first) & (days <= last)

        return self.where(inside)


# === Ingestion ===


def _parser_error_line(exc: Exception) -> Optional[int]:
    match = re.search(r"line (\d+)", str(exc))
    return int(match.group(1)) if match else None


def load_csv(path: Union[str, Path]) -> TimeSeriesTable:
    """
    Reads the canonical CSV (`timestamp,demand_mw,temp_c,solar_wm2,wind_ms`).
    Line numbers in errors count the header as line 1.
    """
    path = Path(path)
    try:
        table = _read_csv(path)
    except (ParseError, ValidationError) as exc:
        slog.error("Hourly CSV rejected.", context={"path": path, "error": str(exc)})
        raise
    slog.debug(
        "Loaded hourly CSV.",
        context={"path": path, "records": len(table), "segments": len(table.segments)},
    )
    return table


def _read_csv(path: Path) -> TimeSeriesTable:
    try:
        frame = pd.read_csv(path, dtype=str, keep_default_na=False, encoding="utf-8")
    except pd.errors.EmptyDataError:
        raise ParseError("file is empty; a header row is required", line=1)
    except pd.errors.ParserError as exc:
        raise ParseError(f"malformed row ({exc})", line=_parser_error_line(exc))

    if tuple(frame.columns) != CSV_COLUMNS:
        raise ParseError(f"header must be '{','.join(CSV_COLUMNS)}', got '{','.join(frame.columns)}'", line=1)

    incomplete = np.flatnonzero(frame.isna().any(axis=1).to_numpy())
    if incomplete.size:
        raise ParseError("row has missing fields", line=int(incomplete[0]) + 2)

    stamps = pd.to_datetime(frame["timestamp"].str.strip(), format=TIMESTAMP_FORMAT, errors="coerce")
    bad = np.flatnonzero(stamps.isna().to_numpy())
    if bad.size:
        i = int(bad[0])
        raise ParseError(f"cannot parse timestamp '{frame['timestamp'].iloc[i]}'", line=i + 2)

    columns = {}
    for name, column in CHANNEL_COLUMNS.items():
        values = pd.to_numeric(frame[column].str.strip(), errors="coerce")
        bad = np.flatnonzero(values.isna().to_numpy())
        if bad.size:
            i = int(bad[0])
            raise ParseError(f"cannot parse {column} value '{frame[column].iloc[i]}'", line=i + 2)
        columns[name] = values.to_numpy(dtype=np.float64)

    return TimeSeriesTable.from_arrays(
        stamps.to_numpy().astype("datetime64[s]"),
        first_line=2,
        **columns,
    )


def load_holidays(path: Union[str, Path]) -> List[np.datetime64]:
    """One ISO date per line; blank lines are ignored."""
    days = []
    for number, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        text = raw.strip()
        if not text:
            continue
        try:
            days.append(np.datetime64(date.fromisoformat(text), "D"))
        except ValueError:
            raise ParseError(f"cannot parse holiday date '{text}'", line=number)
    return days


def filter_working_days(
    t: TimeSeriesTable, holidays: Optional[Sequence[DateLike]] = None
) -> TimeSeriesTable:
    """Keeps Monday to Friday records whose date is not a listed holiday."""
    holiday_days = np.array([np.datetime64(h, "D") for h in holidays or ()], dtype="datetime64[D]")

    def working(seg: Segment) -> np.ndarray:
        return np.is_busday(
            seg.timestamps.astype("datetime64[D]"),
            weekmask=WORKING_WEEKMASK,
            holidays=holiday_days,
        )

    return t.where(working)


# === Normalization ===


@dataclass(frozen=True)
class ChannelStats:
    mean: float
    variance: float

    @property
    def std(self) -> float:
        return float(np.sqrt(self.variance))


@dataclass(frozen=True)
class NormalizationStats:
    """Per-channel sample mean and unbiased variance."""

    channels: Tuple[str, ...]
    mean: Tuple[float, ...]
    variance: Tuple[float, ...]

    def __post_init__(self):
        if not (len(self.channels) == len(self.mean) == len(self.variance)):
            raise ValidationError("NormalizationStats fields must have equal lengths.")
        for name, var in zip(self.channels, self.variance):
            if not var > 0:
                raise DegenerateChannelError(name)

    def channel(self, name: str) -> ChannelStats:
        try:
            i = self.channels.index(name)
        except ValueError:
            raise ConfigurationError(f"No normalization statistics for channel '{name}'.")
        return ChannelStats(self.mean[i], self.variance[i])

    def to_dict(self) -> dict:
        return {"channels": list(self.channels), "mean": list(self.mean), "variance": list(self.variance)}

    @classmethod
    def from_dict(cls, data: dict) -> "NormalizationStats":
        return cls(
            channels=tuple(str(c) for c in data["channels"]),
            mean=tuple(float(v) for v in data["mean"]),
            variance=tuple(float(v) for v in data["variance"]),
        )


def compute_stats(t: TimeSeriesTable, channels: Sequence[str] = CHANNELS) -> NormalizationStats:
    means, variances = [], []
    for name in channels:
        values = t.channel(name)
        if values.shape[0] < 2:
            raise ValidationError(f"Channel '{name}' needs at least 2 records, got {values.shape[0]}.")
        variance = float(np.var(values, ddof=1))
        if not variance > 0:
            raise DegenerateChannelError(name)
        means.append(float(np.mean(values)))
        variances.append(variance)
    return NormalizationStats(tuple(channels), tuple(means), tuple(variances))


def normalize(value, stats: ChannelStats):
    return (value - stats.mean) / np.sqrt(stats.variance)


def denormalize(value, stats: ChannelStats):
    return value * np.sqrt(stats.variance) + stats.mean


# === Super-vectors ===


@dataclass(frozen=True, eq=False)
class SuperVectorSet:
    """
    Network inputs and targets. Row k of `inputs` is the normalized demand over
    `window_length` consecutive hours followed by the normalized factors of the
    hour right after the window; `targets[k]` is the normalized demand of that
    hour, stamped in `target_hours[k]`.

    A set built with hourly context holds every hour of each segment and marks
    the rows taken at `step` in `update_mask`; training feeds all rows through
    the network but only learns from the marked ones.
    """

    window_length: int
    step: int
    variant: DatasetVariant
    inputs: np.ndarray
    targets: np.ndarray
    stats: NormalizationStats
    target_hours: np.ndarray
    segment_ids: np.ndarray
    update_mask: Optional[np.ndarray] = None

    def __post_init__(self):
        n = self.inputs.shape[0]
        if not (self.targets.shape == (n,) and self.target_hours.shape == (n,) and self.segment_ids.shape == (n,)):
            raise ValidationError("SuperVectorSet inputs, targets, hours and segment ids must align.")
        if self.update_mask is None:
            object.__setattr__(self, "update_mask", np.ones(n, dtype=bool))
        if self.update_mask.shape != (n,):
            raise ValidationError("SuperVectorSet update_mask must have one flag per row.")
        for array in (self.inputs, self.targets, self.target_hours, self.segment_ids, self.update_mask):
            _freeze(array)

    def __len__(self) -> int:
        return int(self.inputs.shape[0])

    @property
    def input_size(self) -> int:
        return int(self.inputs.shape[1])

    @property
    def factor_order(self) -> Tuple[str, ...]:
        return self.variant.factors

    @property
    def segment_starts(self) -> np.ndarray:
        """True where a sample is the first one taken from its segment."""
        starts = np.ones(len(self), dtype=bool)
        starts[1:] = self.segment_ids[1:] != self.segment_ids[:-1]
        return starts

    def segment_slices(self) -> List[slice]:
        """Row range of every segment, in temporal order."""
        edges = np.concatenate((np.flatnonzero(self.segment_starts), [len(self)]))
        return [slice(int(a), int(b)) for a, b in zip(edges[:-1], edges[1:])]

    @property
    def n_updates(self) -> int:
        return int(np.count_nonzero(self.update_mask))

    def denormalized_targets(self) -> np.ndarray:
        return denormalize(self.targets, self.stats.channel("demand"))


def supervector_starts(segment_length: int, window: int, stride: int) -> np.ndarray:
    """Offsets of the windows taken from one segment."""
    if segment_length < window + 1:
        return np.empty(0, dtype=np.int64)
    return np.arange(0, segment_length - window, stride, dtype=np.int64)


def build_supervectors(
    t: TimeSeriesTable,
    variant: DatasetVariant,
    window: int,
    stride: int,
    stats: NormalizationStats,
    hourly_context: bool = False,
) -> SuperVectorSet:
    """
    Windows start every `stride` hours within each segment. With
    `hourly_context` every hour becomes a row and the stride-selected rows are
    flagged in `update_mask` instead, so a recurrent pass over the set sees
    the same one-hour context step as evaluation does.
    """
    if window not in SUPPORTED_WINDOWS:
        raise ConfigurationError(f"Window must be one of {SUPPORTED_WINDOWS}, got {window}.")
    if stride < 1:
        raise ConfigurationError(f"Stride must be >= 1, got {stride}.")

    demand_stats = stats.channel("demand")
    factor_stats = [(name, stats.channel(name)) for name in variant.factors]

    inputs, targets, hours, ids, masks = [], [], [], [], []
    skipped = 0
    for seg_id, seg in enumerate(t.segments):
        starts = supervector_starts(len(seg), window, 1 if hourly_context else stride)
        if starts.size == 0:
            skipped += 1
            continue
        masks.append(starts % stride == 0)
        z = normalize(seg.demand, demand_stats)
        target_index = starts + window
        lags = sliding_window_view(z[:-1], window)[starts]
        factors = [normalize(seg.channel(name)[target_index], fs) for name, fs in factor_stats]
        inputs.append(np.column_stack([lags, *factors]))
        targets.append(z[target_index])
        hours.append(seg.timestamps[target_index])
        ids.append(np.full(starts.size, seg_id, dtype=np.int64))

    if not inputs:
        raise EmptyDatasetError(
            f"No segment is long enough for a {window}-hour window plus target "
            f"({len(t.segments)} segments)."
        )
    if skipped:
        slog.debug("Skipped short segments.", context={"skipped": skipped, "window": window})

    return SuperVectorSet(
        window_length=window,
        step=stride,
        variant=variant,
        inputs=np.ascontiguousarray(np.concatenate(inputs), dtype=np.float64),
        targets=np.concatenate(targets),
        stats=stats,
        target_hours=np.concatenate(hours),
        segment_ids=np.concatenate(ids),
        update_mask=np.concatenate(masks),
    )
