"""
Forecast error statistics: MAPE, RMSE, DMAPE, MAD, demand-range breakdowns,
signed percentage-error histograms, boxplot statistics and two-sample t-tests.

Percentages are on the 0-100 scale. Signed errors are (predicted - actual),
so under-estimation is negative.
"""

import itertools
import math
from dataclasses import dataclass
from datetime import date
from typing import Dict, List, Mapping, NamedTuple, Optional, Sequence, Tuple

import numpy as np
from scipy.special import betainc

import common.slog as slog
from heatcast.errors import DegenerateSamplesError, DomainError, PartialDayError, ValidationError

RANGE_EDGES = (0.0, 150.0, 300.0, 450.0, math.inf)
DEFAULT_BIN_WIDTH = 5.0
DEFAULT_ALPHA = 0.05
HOURS_PER_DAY = 24
T_TEST_VARIANTS = ("student", "welch")


@dataclass(frozen=True, eq=False)
class PredictionPairs:
    actual: np.ndarray
    predicted: np.ndarray
    timestamps: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "actual", np.asarray(self.actual, dtype=np.float64))
        object.__setattr__(self, "predicted", np.asarray(self.predicted, dtype=np.float64))
        object.__setattr__(self, "timestamps", np.asarray(self.timestamps, dtype="datetime64[h]"))
        if not (self.actual.shape == self.predicted.shape == self.timestamps.shape):
            raise ValidationError(
                f"Prediction pairs need equal lengths, got {self.actual.shape[0]} actual, "
                f"{self.predicted.shape[0]} predicted, {self.timestamps.shape[0]} timestamps."
            )

    def __len__(self) -> int:
        return int(self.actual.shape[0])

    def select(self, mask) -> "PredictionPairs":
        return PredictionPairs(self.actual[mask], self.predicted[mask], self.timestamps[mask])


def _nonempty(p: PredictionPairs) -> None:
    if len(p) == 0:
        raise DomainError("Metrics need at least one prediction pair.")


def _positive_actuals(p: PredictionPairs) -> None:
    _nonempty(p)
    bad = np.flatnonzero(~(p.actual > 0))
    if bad.size:
        raise DomainError(
            f"Percentage errors need actual demand > 0; pair {int(bad[0])} has {p.actual[bad[0]]} MW."
        )


def _ape(p: PredictionPairs) -> np.ndarray:
    return np.abs(p.actual - p.predicted) / p.actual


# === Point metrics ===


def mape(p: PredictionPairs) -> float:
    _positive_actuals(p)
    return float(np.mean(_ape(p)) * 100.0)


def rmse(p: PredictionPairs) -> float:
    _nonempty(p)
    return float(np.sqrt(np.mean((p.actual - p.predicted) ** 2)))


def mad(p: PredictionPairs) -> float:
    """Maximum absolute deviation in MW."""
    _nonempty(p)
    return float(np.max(np.abs(p.actual - p.predicted)))


def partial_days(p: PredictionPairs) -> List[date]:
    days, counts = np.unique(p.timestamps.astype("datetime64[D]"), return_counts=True)
    return [d.astype(object) for d in days[counts != HOURS_PER_DAY]]


def dmape(p: PredictionPairs, skip_partial: bool = False) -> List[Tuple[date, float]]:
    """
    Daily MAPE over the 24 hours of every calendar day. Days without exactly
    24 predictions raise PartialDayError, or are dropped when skip_partial.
    """
    _positive_actuals(p)
    days, inverse, counts = np.unique(
        p.timestamps.astype("datetime64[D]"), return_inverse=True, return_counts=True
    )
    incomplete = counts != HOURS_PER_DAY
    if incomplete.any() and not skip_partial:
        raise PartialDayError(str(d) for d in days[incomplete])
    sums = np.bincount(inverse, weights=_ape(p), minlength=days.shape[0])
    return [
        (day.astype(object), float(total / HOURS_PER_DAY * 100.0))
        for day, total, partial in zip(days, sums, incomplete)
        if not partial
    ]


# === Breakdowns ===


class RangeStats(NamedTuple):
    lower: float
    upper: float
    count: int
    mape: float
    rmse: float
    mad: float

    @property
    def label(self) -> str:
        return f">{self.lower:g}" if math.isinf(self.upper) else f"{self.lower:g}-{self.upper:g}"

    def to_dict(self) -> dict:
        return {
            "range": self.label,
            "lower_mw": self.lower,
            "upper_mw": None if math.isinf(self.upper) else self.upper,
            "count": self.count,
            "mape": self.mape,
            "rmse": self.rmse,
            "mad": self.mad,
        }


@dataclass(frozen=True)
class RangeBreakdown:
    """Metrics per demand range; ranges without pairs are absent."""

    edges: Tuple[float, ...]
    ranges: Tuple[RangeStats, ...]

    def get(self, lower: float) -> Optional[RangeStats]:
        return next((r for r in self.ranges if r.lower == lower), None)

    def to_list(self) -> List[dict]:
        return [r.to_dict() for r in self.ranges]


def range_index(actual: np.ndarray, edges: Sequence[float] = RANGE_EDGES) -> np.ndarray:
    """Bucket of each actual demand; inner edges belong to the upper bucket."""
    return np.digitize(actual, edges[1:-1], right=False)


def range_breakdown(p: PredictionPairs, edges: Sequence[float] = RANGE_EDGES) -> RangeBreakdown:
    _nonempty(p)
    bucket = range_index(p.actual, edges)
    ranges = []
    for i, (lower, upper) in enumerate(zip(edges[:-1], edges[1:])):
        mask = bucket == i
        if not mask.any():
            continue
        sub = p.select(mask)
        ranges.append(RangeStats(lower, upper, int(mask.sum()), mape(sub), rmse(sub), mad(sub)))
    return RangeBreakdown(edges=tuple(edges), ranges=tuple(ranges))


def merge_breakdowns(parts: Sequence[RangeBreakdown]) -> RangeBreakdown:
    """Pools breakdowns of disjoint prediction sets exactly."""
    if not parts:
        raise DomainError("Nothing to merge.")
    edges = parts[0].edges
    merged = []
    for lower, upper in zip(edges[:-1], edges[1:]):
        stats = [r for part in parts for r in part.ranges if r.lower == lower]
        if not stats:
            continue
        count = sum(r.count for r in stats)
        merged.append(
            RangeStats(
                lower,
                upper,
                count,
                sum(r.mape * r.count for r in stats) / count,
                math.sqrt(sum(r.rmse ** 2 * r.count for r in stats) / count),
                max(r.mad for r in stats),
            )
        )
    return RangeBreakdown(edges=edges, ranges=tuple(merged))


class HistogramBin(NamedTuple):
    lower: float
    upper: float
    count: int
    fraction: float

    def to_dict(self) -> dict:
        return self._asdict()


def signed_percentage_errors(p: PredictionPairs) -> np.ndarray:
    _positive_actuals(p)
    return (p.predicted - p.actual) / p.actual * 100.0


def _bins(index: np.ndarray, counts: np.ndarray, width: float) -> List[HistogramBin]:
    total = int(counts.sum())
    return [
        HistogramBin(float(k * width), float((k + 1) * width), int(c), float(c / total))
        for k, c in zip(index, counts)
    ]


def error_histogram(p: PredictionPairs, bin_width: float = DEFAULT_BIN_WIDTH) -> List[HistogramBin]:
    """Signed percentage errors binned into [k*w, (k+1)*w); only occupied bins are listed."""
    if not bin_width > 0:
        raise DomainError(f"bin_width must be > 0, got {bin_width}.")
    errors = signed_percentage_errors(p)
    index, counts = np.unique(np.floor(errors / bin_width).astype(np.int64), return_counts=True)
    return _bins(index, counts, bin_width)


def merge_histograms(parts: Sequence[Sequence[HistogramBin]], bin_width: float) -> List[HistogramBin]:
    counts: Dict[int, int] = {}
    for part in parts:
        for b in part:
            k = int(round(b.lower / bin_width))
            counts[k] = counts.get(k, 0) + b.count
    if not counts:
        return []
    index = np.array(sorted(counts), dtype=np.int64)
    return _bins(index, np.array([counts[k] for k in index]), bin_width)


def range_histograms(
    p: PredictionPairs, bin_width: float = DEFAULT_BIN_WIDTH, edges: Sequence[float] = RANGE_EDGES
) -> Dict[str, List[HistogramBin]]:
    """Error histogram of every populated demand range, keyed by range label."""
    bucket = range_index(p.actual, edges)
    out = {}
    for i, (lower, upper) in enumerate(zip(edges[:-1], edges[1:])):
        mask = bucket == i
        if mask.any():
            label = RangeStats(lower, upper, 0, 0.0, 0.0, 0.0).label
            out[label] = error_histogram(p.select(mask), bin_width)
    return out


# === Distribution statistics ===


class BoxplotStats(NamedTuple):
    min: float
    q1: float
    median: float
    q3: float
    max: float
    iqr: float
    midrange: float

    def to_dict(self) -> dict:
        return self._asdict()


def boxplot_stats(values: Sequence[float]) -> BoxplotStats:
    """Quartiles interpolate linearly between order statistics, quantile q at (N-1)q."""
    v = np.asarray(values, dtype=np.float64)
    if v.size == 0:
        raise DomainError("Boxplot statistics need at least one value.")
    q1, median, q3 = np.quantile(v, [0.25, 0.5, 0.75], method="linear")
    lo, hi = float(v.min()), float(v.max())
    return BoxplotStats(lo, float(q1), float(median), float(q3), hi, float(q3 - q1), (lo + hi) / 2.0)


class TTestResult(NamedTuple):
    t_statistic: float
    degrees_of_freedom: float
    p_value: float
    significant: bool
    alpha: float

    def to_dict(self) -> dict:
        return self._asdict()


def t_test(
    sample_a: Sequence[float],
    sample_b: Sequence[float],
    alpha: float = DEFAULT_ALPHA,
    variant: str = "student",
) -> TTestResult:
    """
    Two-sample, two-tailed t-test. "student" pools the variances with
    df = n1 + n2 - 2; "welch" uses the Welch-Satterthwaite df.
    """
    if variant not in T_TEST_VARIANTS:
        raise DomainError(f"Unknown t-test variant '{variant}'; expected one of {T_TEST_VARIANTS}.")
    a = np.asarray(sample_a, dtype=np.float64)
    b = np.asarray(sample_b, dtype=np.float64)
    n1, n2 = a.size, b.size
    if n1 < 2 or n2 < 2:
        raise DegenerateSamplesError(f"Each sample needs at least 2 values, got {n1} and {n2}.")
    v1, v2 = float(np.var(a, ddof=1)), float(np.var(b, ddof=1))
    diff = float(np.mean(a)) - float(np.mean(b))

    if variant == "student":
        pooled = ((n1 - 1) * v1 + (n2 - 1) * v2) / (n1 + n2 - 2)
        if not pooled > 0:
            raise DegenerateSamplesError("Pooled variance is zero; the t statistic is undefined.")
        se = math.sqrt(pooled * (1.0 / n1 + 1.0 / n2))
        df = float(n1 + n2 - 2)
    else:
        s1, s2 = v1 / n1, v2 / n2
        if not s1 + s2 > 0:
            raise DegenerateSamplesError("Both samples are constant; the t statistic is undefined.")
        se = math.sqrt(s1 + s2)
        df = (s1 + s2) ** 2 / (s1 ** 2 / (n1 - 1) + s2 ** 2 / (n2 - 1))

    t = diff / se
    # two-tailed p = I_{df/(df+t^2)}(df/2, 1/2)
    p = float(np.clip(betainc(df / 2.0, 0.5, df / (df + t * t)), 0.0, 1.0))
    return TTestResult(t, df, p, p < alpha, alpha)


def pairwise_ttests(
    groups: Mapping[Tuple, Sequence[float]],
    field_names: Sequence[str],
    axis: str,
    alpha: float = DEFAULT_ALPHA,
    variant: str = "student",
) -> List[dict]:
    """
    t-tests between every two groups whose keys differ only in `axis`
    (e.g. window 2 vs 4 at fixed layers and variant).
    """
    a_index = list(field_names).index(axis)
    rows = []
    for key_a, key_b in itertools.combinations(sorted(groups), 2):
        same_elsewhere = all(x == y for i, (x, y) in enumerate(zip(key_a, key_b)) if i != a_index)
        if not same_elsewhere or key_a[a_index] == key_b[a_index]:
            continue
        row = {name: key_a[i] for i, name in enumerate(field_names) if i != a_index}
        row["axis"] = axis
        row["pair"] = [key_a[a_index], key_b[a_index]]
        try:
            row.update(t_test(groups[key_a], groups[key_b], alpha, variant).to_dict())
        except DegenerateSamplesError as exc:
            slog.warn("t-test skipped.", context={"axis": axis, "pair": row["pair"], "reason": str(exc)})
            row["error"] = str(exc)
        rows.append(row)
    return rows


def sample_mean_variance(values: Sequence[float]) -> Tuple[float, Optional[float]]:
    """Mean and unbiased variance; variance is None for a single value."""
    v = np.asarray(values, dtype=np.float64)
    if v.size == 0:
        raise DomainError("Mean of an empty sample.")
    return float(np.mean(v)), (float(np.var(v, ddof=1)) if v.size > 1 else None)


# === Baseline ===


def persistence_baseline(table, target_hours, lag_hours: int = 24) -> PredictionPairs:
    """
    Forecasts each target hour with the demand `lag_hours` earlier in the same
    segment. Hours without such a lag, or absent from the table, are dropped.
    """
    stamps = table.timestamps
    demand = table.channel("demand")
    seg_ids = np.repeat(np.arange(len(table.segments)), table.segment_lengths)
    hours = np.asarray(target_hours, dtype="datetime64[h]")

    def locate(query: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        pos = np.clip(np.searchsorted(stamps, query), 0, max(stamps.shape[0] - 1, 0))
        found = stamps[pos] == query if stamps.size else np.zeros(query.shape, dtype=bool)
        return pos, found

    now, has_now = locate(hours)
    then, has_then = locate(hours - np.timedelta64(lag_hours, "h"))
    ok = has_now & has_then
    ok[ok] = seg_ids[now[ok]] == seg_ids[then[ok]]
    return PredictionPairs(demand[now[ok]], demand[then[ok]], hours[ok])


# === Reports ===


def build_report(
    pairs: PredictionPairs, bin_width: float = DEFAULT_BIN_WIDTH, edges: Sequence[float] = RANGE_EDGES
) -> dict:
    """The evaluation report of one prediction set, as JSON-ready data."""
    daily = dmape(pairs, skip_partial=True)
    skipped = partial_days(pairs)
    if skipped:
        slog.warn(
            "Days without 24 predictions left out of DMAPE.",
            context={"days": [d.isoformat() for d in skipped]},
        )
    return {
        "count": len(pairs),
        "overall": {"mape": mape(pairs), "rmse": rmse(pairs), "mad": mad(pairs)},
        "ranges": range_breakdown(pairs, edges).to_list(),
        "histogram": {
            "bin_width": bin_width,
            "bins": [b.to_dict() for b in error_histogram(pairs, bin_width)],
            "by_range": {
                label: [b.to_dict() for b in bins]
                for label, bins in range_histograms(pairs, bin_width, edges).items()
            },
        },
        "dmape": [{"date": d.isoformat(), "dmape": v} for d, v in daily],
        "dmape_boxplot": boxplot_stats([v for _, v in daily]).to_dict() if daily else None,
        "partial_days": [d.isoformat() for d in skipped],
    }
