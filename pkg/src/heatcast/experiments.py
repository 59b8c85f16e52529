"""
Study orchestration: hyperparameter sweep, data-amount study and factor study.

Every study expands its plan into TrialJobs (one trained model each). Jobs
owned by this run's shard are dispatched through a bounded worker pool; each
result is written to <out>/jobs/<key>.json. Whichever run finds every job
file of the plan present assembles the report from those files, sorted by
key, so the report does not depend on scheduling or on how jobs were sharded.
"""

import asyncio
import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

import common.slog as slog
from heatcast import evaluation as ev
from heatcast.config import DateRange, ExperimentPlan, Shard
from heatcast.dataset import (
    DatasetVariant,
    NormalizationStats,
    SuperVectorSet,
    TimeSeriesTable,
    build_supervectors,
    compute_stats,
    filter_working_days,
    load_csv,
    load_holidays,
)
from heatcast.enn import TrainConfig, fit, init_model, predict_pairs
from heatcast.errors import ConfigurationError, HeatcastError
from heatcast.report import write_study_report
from heatcast.synth import generate

REPORT_VERSION = 1
CELL_FIELDS = ("window", "layers", "variant", "span")
VARIANT_INDEX = {v.label: i for i, v in enumerate(DatasetVariant)}

# Status codes recorded per trial
STATUS_OK = "ok"
STATUS_FAILED = "failed"


@dataclass(frozen=True, order=True)
class TrialJob:
    window: int
    layers: int
    variant: str
    span: int
    trial: int

    @property
    def key(self) -> str:
        return f"w{self.window}-l{self.layers}-{self.variant}-s{self.span}-t{self.trial:02d}"

    @property
    def cell(self) -> Tuple[int, int, str, int]:
        return (self.window, self.layers, self.variant, self.span)

    def seed(self, master_seed: int) -> int:
        """Depends only on the master seed and this job's coordinates."""
        entropy = [master_seed, self.window, self.layers, VARIANT_INDEX[self.variant], self.span, self.trial]
        return int(np.random.SeedSequence(entropy).generate_state(1, dtype=np.uint32)[0])


# === Data ===


def load_table(plan: ExperimentPlan) -> TimeSeriesTable:
    """Plan data source, restricted to working days."""
    if plan.data.csv:
        table = load_csv(plan.data.csv)
    else:
        table = generate(plan.data.synth)
    holidays = load_holidays(plan.data.holidays) if plan.data.holidays else None
    return filter_working_days(table, holidays)


class PreparedData:
    """
    Working-day table split into training spans and the validation range.
    Statistics come from each span's training records only, over the channels
    the variant reads; validation sets reuse them.
    """

    def __init__(self, plan: ExperimentPlan, spans: Sequence[DateRange], table: TimeSeriesTable):
        self.plan = plan
        self.validation = table.between(plan.split.validation.start, plan.split.validation.end)
        self.train = [table.between(s.start, s.end) for s in spans]
        self._stats: Dict[Tuple[int, str], NormalizationStats] = {}
        self._sets: Dict[Tuple[int, int, str], Tuple[SuperVectorSet, SuperVectorSet]] = {}

    def stats(self, span: int, variant: str) -> NormalizationStats:
        key = (span, variant)
        if key not in self._stats:
            channels = DatasetVariant.parse(variant).channels
            self._stats[key] = compute_stats(self.train[span], channels)
        return self._stats[key]

    def sets(self, span: int, window: int, variant: str) -> Tuple[SuperVectorSet, SuperVectorSet]:
        key = (span, window, variant)
        if key not in self._sets:
            v = DatasetVariant.parse(variant)
            stats = self.stats(span, variant)
            grid = self.plan.grid
            train = build_supervectors(
                self.train[span], v, window, grid.stride(window), stats, hourly_context=grid.hourly_context
            )
            validation = build_supervectors(self.validation, v, window, 1, stats)
            self._sets[key] = (train, validation)
        return self._sets[key]


# === Trials ===


def run_trial(
    job: TrialJob,
    seed: int,
    train_set: SuperVectorSet,
    validation_set: SuperVectorSet,
    validation_table: TimeSeriesTable,
    cfg: TrainConfig,
    bin_width: float,
) -> dict:
    """Trains and scores one model. Divergence is reported, not raised."""
    result = {"key": job.key, "trial": job.trial, "seed": seed}
    result.update(zip(CELL_FIELDS, job.cell))
    cfg = replace(cfg, seed=seed)
    try:
        model = init_model(job.layers, train_set.input_size, cfg.hidden_size, seed, init_bound=cfg.init_bound)
        trace = fit(model, train_set, validation_set, cfg)
        pairs = predict_pairs(model, validation_set)
        baseline = ev.persistence_baseline(validation_table, pairs.timestamps)
        same_hours = pairs.select(np.isin(pairs.timestamps, baseline.timestamps))
        result.update(
            status=STATUS_OK,
            count=len(pairs),
            mape=ev.mape(pairs),
            rmse=ev.rmse(pairs),
            mad=ev.mad(pairs),
            baseline_mape=ev.mape(baseline) if len(baseline) else None,
            mape_on_baseline_hours=ev.mape(same_hours) if len(same_hours) else None,
            epochs=trace.final_epoch,
            best_epoch=trace.best_epoch,
            stopped_early=trace.stopped_early,
            final_loss=trace.losses[-1],
            ranges=ev.range_breakdown(pairs).to_list(),
            histogram=[b.to_dict() for b in ev.error_histogram(pairs, bin_width)],
        )
    except HeatcastError as exc:
        result.update(status=STATUS_FAILED, error=f"{type(exc).__name__}: {exc}")
    return result


# === Studies ===


class Study:
    """Base study; subclasses define the job list and the compared axes."""

    name = "study"
    axes: Tuple[str, ...] = ()

    def __init__(self, plan: ExperimentPlan, shard: Shard = Shard(), table: Optional[TimeSeriesTable] = None):
        self.plan = plan
        self.shard = shard
        self._table = table
        self.out = Path(plan.core.out)
        self.jobs_dir = self.out / "jobs"

    def spans(self) -> List[DateRange]:
        return [self.plan.split.train]

    def jobs(self) -> List[TrialJob]:
        raise NotImplementedError

    def _data(self) -> PreparedData:
        table = self._table if self._table is not None else load_table(self.plan)
        return PreparedData(self.plan, self.spans(), table)

    async def run(self) -> Optional[dict]:
        """Runs this shard's jobs; returns the report when every job is done, else None."""
        jobs = self.jobs()
        mine = [job for ordinal, job in enumerate(jobs) if self.shard.owns(ordinal)]
        slog.info(
            "Study started.",
            context={
                "study": self.name,
                "jobs": len(jobs),
                "shard": {"id": self.shard.id, "count": self.shard.count},
                "owned": len(mine),
                "seed": self.plan.core.seed,
            },
        )
        data = self._data()
        self.jobs_dir.mkdir(parents=True, exist_ok=True)
        results = await self._dispatch(mine, data)
        for result in results:
            self._write_job(result)
        return self.assemble(jobs, data)

    async def _dispatch(self, jobs: List[TrialJob], data: PreparedData) -> List[dict]:
        """Runs jobs with at most `concurrency_limit` in flight."""
        limit = self.plan.core.concurrency_limit
        semaphore = asyncio.Semaphore(limit)
        loop = asyncio.get_running_loop()
        pool = ProcessPoolExecutor(max_workers=limit) if limit > 1 else None

        async def process(job: TrialJob) -> dict:
            async with semaphore:
                train_set, validation_set = data.sets(job.span, job.window, job.variant)
                args = (
                    job,
                    job.seed(self.plan.core.seed),
                    train_set,
                    validation_set,
                    data.validation,
                    self.plan.train,
                    self.plan.core.histogram_bin_width,
                )
                with slog.timed("Trial finished.", {"job": job.key}) as ctx:
                    if pool is None:
                        result = run_trial(*args)
                    else:
                        result = await loop.run_in_executor(pool, run_trial, *args)
                    ctx.update(status=result["status"], mape=result.get("mape"))
                if result["status"] != STATUS_OK:
                    slog.warn(
                        "Trial failed and is excluded from the statistics.",
                        context={"job": job.key, "error": result["error"]},
                    )
                return result

        try:
            tasks = [asyncio.create_task(process(job)) for job in jobs]
            return list(await asyncio.gather(*tasks))
        finally:
            if pool is not None:
                pool.shutdown()

    def _job_path(self, job_key: str) -> Path:
        return self.jobs_dir / f"{job_key}.json"

    def _write_job(self, result: dict) -> None:
        record = {"plan_digest": self.plan.digest(), "result": result}
        self._job_path(result["key"]).write_text(json.dumps(record, sort_keys=True, indent=1), encoding="utf-8")

    def _read_job(self, job: TrialJob) -> Optional[dict]:
        path = self._job_path(job.key)
        if not path.exists():
            return None
        record = json.loads(path.read_text(encoding="utf-8"))
        if record.get("plan_digest") != self.plan.digest():
            slog.warn("Ignoring job file from a different plan.", context={"path": path})
            return None
        return record["result"]

    # --- report assembly ---

    def assemble(self, jobs: List[TrialJob], data: PreparedData) -> Optional[dict]:
        results, missing = [], []
        for job in sorted(jobs):
            result = self._read_job(job)
            if result is None:
                missing.append(job.key)
            else:
                results.append(result)
        if missing:
            slog.info(
                "Report deferred until all shards finish.",
                context={"study": self.name, "missing": len(missing), "first_missing": missing[0]},
            )
            return None

        report = self.build_report(results, data)
        write_study_report(report, self.out)
        slog.info("Study report written.", context={"study": self.name, "out": self.out})
        return report

    def build_report(self, results: List[dict], data: PreparedData) -> dict:
        cells = _group_cells(results)
        alpha, variant = self.plan.core.alpha, self.plan.core.t_test
        groups = {
            cell: [r["mape"] / 100.0 for r in trials if r["status"] == STATUS_OK]
            for cell, trials in cells.items()
        }
        baseline_pairs = ev.persistence_baseline(data.validation, data.validation.timestamps)
        return {
            "format_version": REPORT_VERSION,
            "study": self.name,
            "master_seed": self.plan.core.seed,
            "plan": self.plan.to_dict(),
            "plan_digest": self.plan.digest(),
            "spans": [s.to_list() for s in self.spans()],
            "trials": results,
            "summary": [_summarize(cell, trials) for cell, trials in cells.items()],
            "ttests": {
                axis: ev.pairwise_ttests(groups, CELL_FIELDS, axis, alpha, variant) for axis in self.axes
            },
            "baseline": {
                "method": "persistence_24h",
                "count": len(baseline_pairs),
                "mape": ev.mape(baseline_pairs) if len(baseline_pairs) else None,
                "rmse": ev.rmse(baseline_pairs) if len(baseline_pairs) else None,
                "mad": ev.mad(baseline_pairs) if len(baseline_pairs) else None,
            },
        }


def _group_cells(results: List[dict]) -> Dict[Tuple, List[dict]]:
    cells: Dict[Tuple, List[dict]] = {}
    for r in sorted(results, key=lambda r: r["key"]):
        cells.setdefault(tuple(r[f] for f in CELL_FIELDS), []).append(r)
    return dict(sorted(cells.items()))


def _summarize(cell: Tuple, trials: List[dict]) -> dict:
    ok = [r for r in trials if r["status"] == STATUS_OK]
    row = dict(zip(CELL_FIELDS, cell))
    row.update(trials_ok=len(ok), trials_failed=len(trials) - len(ok))
    if not ok:
        return row
    mapes = [r["mape"] for r in ok]
    mape_mean, mape_var = ev.sample_mean_variance([m / 100.0 for m in mapes])
    rmse_mean, rmse_var = ev.sample_mean_variance([r["rmse"] for r in ok])
    mad_mean, _ = ev.sample_mean_variance([r["mad"] for r in ok])
    baselines = [r["baseline_mape"] for r in ok if r.get("baseline_mape") is not None]
    row.update(
        mape_mean=mape_mean * 100.0,
        mape_variance=mape_var,
        rmse_mean=rmse_mean,
        rmse_variance=rmse_var,
        mad_mean=mad_mean,
        mape_boxplot=ev.boxplot_stats(mapes).to_dict(),
        baseline_mape=ev.sample_mean_variance(baselines)[0] if baselines else None,
    )
    return row


class SweepStudy(Study):
    """Window length x hidden-layer count x dataset variant, `trials` models per cell."""

    name = "sweep"
    axes = ("window", "layers", "variant")

    def jobs(self) -> List[TrialJob]:
        g = self.plan.grid
        return sorted(
            TrialJob(w, n, v, 0, t)
            for w in g.windows
            for n in g.hidden_layers
            for v in g.variants
            for t in range(g.trials)
        )


class DataAmountStudy(Study):
    """Nested training spans sharing one end date, validated on the same range."""

    name = "data-study"
    axes = ("span",)

    def __init__(self, plan: ExperimentPlan, shard: Shard = Shard(), table: Optional[TimeSeriesTable] = None):
        super().__init__(plan, shard, table)
        spans = plan.spans
        if not spans:
            raise ConfigurationError("The data-amount study needs at least one training span.")
        if len({s.end for s in spans}) != 1:
            raise ConfigurationError("Training spans must all end on the same date.")
        if not spans[0].end < plan.split.validation.start:
            raise ConfigurationError("Training spans must end before the validation range starts.")

    def spans(self) -> List[DateRange]:
        return list(self.plan.spans)

    def jobs(self) -> List[TrialJob]:
        g = self.plan.grid
        return sorted(
            TrialJob(w, n, v, s, t)
            for s in range(len(self.plan.spans))
            for w in g.windows
            for n in g.hidden_layers
            for v in g.variants
            for t in range(g.trials)
        )


class FactorStudy(Study):
    """ENN-A..D: one window and depth, all four variants, with per-range tables."""

    name = "factor-study"
    axes = ("variant",)

    def __init__(self, plan: ExperimentPlan, shard: Shard = Shard(), table: Optional[TimeSeriesTable] = None):
        super().__init__(plan, shard, table)
        if set(plan.grid.variants) != {v.label for v in DatasetVariant}:
            raise ConfigurationError("The factor study needs all four dataset variants A-D enabled.")

    def jobs(self) -> List[TrialJob]:
        p = self.plan
        return sorted(
            TrialJob(p.factor_window, p.factor_layers, v, 0, t)
            for v in p.grid.variants
            for t in range(p.grid.trials)
        )

    def build_report(self, results: List[dict], data: PreparedData) -> dict:
        report = super().build_report(results, data)
        width = self.plan.core.histogram_bin_width
        models = []
        for cell, trials in _group_cells(results).items():
            ok = [r for r in trials if r["status"] == STATUS_OK]
            if not ok:
                models.append({"model": f"ENN-{cell[2]}", "variant": cell[2], "trials_ok": 0})
                continue
            ranges = ev.merge_breakdowns(
                [
                    ev.RangeBreakdown(
                        ev.RANGE_EDGES,
                        tuple(
                            ev.RangeStats(
                                r["lower_mw"],
                                np.inf if r["upper_mw"] is None else r["upper_mw"],
                                r["count"],
                                r["mape"],
                                r["rmse"],
                                r["mad"],
                            )
                            for r in trial["ranges"]
                        ),
                    )
                    for trial in ok
                ]
            )
            histogram = ev.merge_histograms(
                [[ev.HistogramBin(**b) for b in trial["histogram"]] for trial in ok], width
            )
            models.append(
                {
                    "model": f"ENN-{cell[2]}",
                    "variant": cell[2],
                    "trials_ok": len(ok),
                    "mape": ev.sample_mean_variance([r["mape"] for r in ok])[0],
                    "rmse": ev.sample_mean_variance([r["rmse"] for r in ok])[0],
                    "mad": ev.sample_mean_variance([r["mad"] for r in ok])[0],
                    "ranges": ranges.to_list(),
                    "histogram": [b.to_dict() for b in histogram],
                }
            )
        report["models"] = models
        return report


STUDIES = {cls.name: cls for cls in (SweepStudy, DataAmountStudy, FactorStudy)}


def run_study(
    name: str, plan: ExperimentPlan, shard: Shard = Shard(), table: Optional[TimeSeriesTable] = None
) -> Optional[dict]:
    try:
        study_cls = STUDIES[name]
    except KeyError:
        raise ConfigurationError(f"Unknown study '{name}'; expected one of {sorted(STUDIES)}.")
    return asyncio.run(study_cls(plan, shard, table).run())


def run_sweep(plan: ExperimentPlan, shard: Shard = Shard(), table: Optional[TimeSeriesTable] = None) -> Optional[dict]:
    return run_study(SweepStudy.name, plan, shard, table)


def run_data_amount_study(
    plan: ExperimentPlan,
    year_spans: Optional[Sequence[DateRange]] = None,
    shard: Shard = Shard(),
    table: Optional[TimeSeriesTable] = None,
) -> Optional[dict]:
    if year_spans is not None:
        plan = replace(plan, spans=tuple(year_spans))
    return run_study(DataAmountStudy.name, plan, shard, table)


def run_factor_study(plan: ExperimentPlan, shard: Shard = Shard(), table: Optional[TimeSeriesTable] = None) -> Optional[dict]:
    return run_study(FactorStudy.name, plan, shard, table)
