"""
Experiment orchestration for input-adaptive model averaging.

One run fits the predictor roster, every requested averaging method and the
evaluation metrics over several repetitions, each seeded from the master seed.
The service returns plain pandas / dict structures so the management command,
the celery task and the REST views can share it.

Output layout::

    <output_dir>/rep_<r>/        per-repetition tables and diagnostics
    <output_dir>/aggregate.csv   method,metric,mean,sd,n
    <output_dir>/aggregate.txt   the same table as "mean (sd)" text
    <output_dir>/ordering.csv    IA-BMA against every other method on the ranked metrics
    <output_dir>/manifest.json   config, seeds, statuses; the only file with timestamps
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from django.conf import settings
from django.utils import timezone

from averaging.baselines import (
    BaselineKind,
    DLAConfig,
    DynamicLocalAccuracy,
    constant_weight_matrix,
    fit_moe,
    weights_accuracy,
    weights_best_single,
    weights_bma,
    weights_uniform,
)
from averaging.core import Dataset, LikelihoodTable, Task, mixture_prediction
from averaging.data import CsvSchema, SimulationConfig, Standardizer, load_csv, simulate_two_region, split
from averaging.exceptions import AveragingError
from averaging.metrics import (
    METRIC_COLUMNS,
    MetricReport,
    accuracy,
    confidence_bin_errors,
    ece,
    rmse_r2,
    theorem1_check,
)
from averaging.posterior import PosteriorNet, TrainConfig, assign_weight_matrix, save_posterior_net
from averaging.posterior import train as train_posterior
from averaging.predictors import (
    BasePredictor,
    component_outputs,
    default_roster,
    dump_predictors,
    fit_roster,
    loglik_table,
)
from averaging.prior import PriorScale, adaptive_prior_rows, build_energy_cache, loo_priors

from .serializers import METHOD_IABMA

logger = logging.getLogger(__name__)

AGGREGATE_METRICS = ["accuracy", "ece", "rmse", "r2", "mean_test_loglik"]
AGGREGATE_COLUMNS = ["method", "metric", "mean", "sd", "n"]
# metric: (direction, tolerance); direction 1 means higher is better
ORDERING_RULES = {"accuracy": (1, 0.01), "ece": (-1, 0.01), "r2": (1, 0.02)}
ORDERING_COLUMNS = ["method", "metric", "reference_mean", "method_mean", "margin", "tolerance", "passed"]
FLOAT_FORMAT = "%.10g"


class ExperimentError(AveragingError):
    """A run could not produce any result."""


def derive_seed(master_seed: int, repetition: int) -> int:
    """
    Seed of repetition ``r``: first 32-bit word of numpy's SeedSequence over
    (master_seed, r). Stable across numpy releases and independent of how many
    repetitions are run.
    """
    state = np.random.SeedSequence([int(master_seed), int(repetition)]).generate_state(1, dtype=np.uint32)
    return int(state[0])


def _write_frame(frame: pd.DataFrame, path: Path) -> Path:
    frame.to_csv(path, index=False, float_format=FLOAT_FORMAT, lineterminator="\n")
    return path


def _write_json(payload: Any, path: Path) -> Path:
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def aggregate_metrics(rows: Sequence[Dict[str, Any]], methods: Sequence[str]) -> pd.DataFrame:
    """
    Long table of mean, sample sd (ddof=1, 0 for a single repetition) and count
    per (method, metric), ordered by ``methods`` then by metric.
    """
    frame = pd.DataFrame(list(rows), columns=METRIC_COLUMNS)
    if frame.empty:
        return pd.DataFrame(columns=AGGREGATE_COLUMNS)
    long = frame.melt(id_vars=["method"], value_vars=AGGREGATE_METRICS, var_name="metric", value_name="value")
    long["value"] = pd.to_numeric(long["value"], errors="coerce")
    long = long.dropna(subset=["value"])

    table = long.groupby(["method", "metric"])["value"].agg(mean="mean", sd="std", n="size").reset_index()
    table["sd"] = table["sd"].where(table["n"] > 1, 0.0).fillna(0.0)

    method_order = {m: i for i, m in enumerate(methods)}
    metric_order = {k: i for i, k in enumerate(AGGREGATE_METRICS)}
    table = table.assign(
        _method=table["method"].map(method_order).fillna(len(method_order)),
        _metric=table["metric"].map(metric_order),
    )
    table = table.sort_values(["_method", "_metric", "method"], kind="mergesort")
    return table[AGGREGATE_COLUMNS].reset_index(drop=True)


def format_aggregate(table: pd.DataFrame, methods: Sequence[str]) -> str:
    """Methods as rows, metrics as columns, cells "mean (sd)"."""
    lines = []
    if not table.empty:
        cells = table.assign(cell=[f"{m:.4f} ({s:.4f})" for m, s in zip(table["mean"], table["sd"])])
        pivot = cells.pivot(index="method", columns="metric", values="cell")
        pivot = pivot.reindex(
            index=[m for m in methods if m in pivot.index],
            columns=[k for k in AGGREGATE_METRICS if k in pivot.columns],
        )
        counts = table.groupby("method")["n"].max()
        pivot.insert(0, "n", [int(counts[m]) for m in pivot.index])
        lines.append(pivot.fillna("-").to_string())
    missing = [m for m in methods if table.empty or m not in set(table["method"])]
    for method in missing:
        lines.append(f"{method}: no successful repetitions")
    return "\n".join(lines) + "\n"


def ordering_report(table: pd.DataFrame, reference: str = METHOD_IABMA) -> pd.DataFrame:
    """
    Compare the reference method's mean on each ranked metric with every other
    method in ``table``. ``margin`` is positive when the reference does better;
    a row passes when the margin is at least minus the metric's tolerance.
    """
    if table.empty or reference not in set(table["method"]):
        return pd.DataFrame(columns=ORDERING_COLUMNS)
    means = table.pivot(index="method", columns="metric", values="mean")
    rows = []
    for method in table["method"].drop_duplicates():
        if method == reference:
            continue
        for metric in AGGREGATE_METRICS:
            if metric not in ORDERING_RULES or metric not in means.columns:
                continue
            ours, theirs = means.at[reference, metric], means.at[method, metric]
            if pd.isna(ours) or pd.isna(theirs):
                continue
            direction, tolerance = ORDERING_RULES[metric]
            margin = direction * (ours - theirs)
            rows.append({
                "method": method,
                "metric": metric,
                "reference_mean": ours,
                "method_mean": theirs,
                "margin": margin,
                "tolerance": tolerance,
                "passed": bool(margin >= -tolerance),
            })
    return pd.DataFrame(rows, columns=ORDERING_COLUMNS)


@dataclass
class RunSummary:
    output_dir: Path
    status: str
    aggregate: pd.DataFrame
    repetitions: List[Dict[str, Any]]
    theorem_passed: bool
    run_id: Optional[int] = None
    failed: List[int] = field(default_factory=list)
    ordering: Optional[pd.DataFrame] = None

    @property
    def completed(self) -> int:
        return len(self.repetitions) - len(self.failed)

    @property
    def ordering_passed(self) -> bool:
        return self.ordering is None or bool(self.ordering["passed"].all())


class ExperimentService:
    """
    Runs a validated experiment config (``ExperimentConfigSerializer`` output).
    """

    def __init__(self, config: Dict[str, Any], record: Optional[bool] = None):
        self.config = json.loads(json.dumps(config))
        self.dataset_config = self.config["dataset"]
        self.methods: List[str] = list(self.config["methods"])
        self.master_seed = int(self.config["master_seed"])
        self.output_dir = Path(self.config["output_dir"])
        self.record = settings.AVERAGING["RECORD_RUNS"] if record is None else record
        self._csv_data: Optional[Dataset] = None

    @property
    def task(self) -> Task:
        return Task(self.dataset_config["task"])

    # ------------------------------------------------------------------
    # data and roster
    # ------------------------------------------------------------------

    def _load_csv(self) -> Dataset:
        if self._csv_data is None:
            source = self.dataset_config
            schema = CsvSchema(
                label_col=source["label_col"],
                task=self.task,
                feature_cols=tuple(source["feature_cols"]) if source.get("feature_cols") else None,
                region_col=source.get("region_col"),
            )
            self._csv_data = load_csv(source["path"], schema)
            logger.info(f"Loaded {self._csv_data.n} rows with {self._csv_data.d} features from {source['path']}")
        return self._csv_data

    def load_dataset(self, seed: int) -> Tuple[Dataset, Dataset, List[str]]:
        """Train/test pair for one repetition, plus notes raised while splitting."""
        source = self.dataset_config
        if source["source"] == "simulate":
            cfg = SimulationConfig(
                n_train=source["n_train"],
                n_test=source["n_test"],
                offset=source["offset"],
                covariance_scale=source["covariance_scale"],
                seed=seed,
            )
            train, test = simulate_two_region(cfg)
            return train, test, []

        result = split(
            self._load_csv(),
            test_fraction=source["test_fraction"],
            stratify=source["stratify"],
            bins=source["bins"],
            seed=seed,
            balance=source["balance"],
        )
        train, test = result.train, result.test
        if source.get("standardize", True):
            scaler = Standardizer().fit(train)
            train, test = scaler.transform(train), scaler.transform(test)
        return train, test, list(result.notes)

    def roster(self) -> List[Dict[str, Any]]:
        if self.config.get("roster"):
            return [dict(spec) for spec in self.config["roster"]]
        return default_roster(self.task, offset=self.dataset_config.get("offset", 1.0))

    # ------------------------------------------------------------------
    # methods
    # ------------------------------------------------------------------

    def _fit_iabma(self, train: Dataset, test: Dataset, predictors: Sequence[BasePredictor],
                   train_table: LikelihoodTable, seed: int, rep_dir: Path) -> np.ndarray:
        scale = PriorScale(self.config.get("prior_scale", PriorScale.SUM.value))
        cache = build_energy_cache(predictors, train, num_samples=self.config["mc_samples"], seed=seed, scale=scale)
        cfg = TrainConfig.from_dict({**self.config["iabma"], "seed": seed})
        net = PosteriorNet(train.d, len(predictors), seed=seed)
        net, trace = train_posterior(net, train, train_table, loo_priors(cache), cfg)
        weights = assign_weight_matrix(net, test.features)

        save_posterior_net(net, rep_dir / "posterior_net.json", cfg)
        _write_frame(trace.to_frame(), rep_dir / "iabma_trace.csv")

        names = list(train_table.model_names)
        prior = adaptive_prior_rows(cache, cache.query_energies(test.features))
        diagnostics = pd.concat([
            pd.DataFrame(test.features, columns=list(test.feature_names)),
            pd.DataFrame(weights, columns=[f"weight_{n}" for n in names]),
            pd.DataFrame(prior, columns=[f"prior_{n}" for n in names]),
        ], axis=1)
        if test.regions is not None:
            diagnostics.insert(0, "region", test.regions)
            by_region = pd.DataFrame(weights, columns=names).assign(region=test.regions)
            summary = by_region.groupby("region").mean().reset_index()
            summary.insert(1, "n", by_region.groupby("region").size().values)
            _write_frame(summary, rep_dir / "iabma_weights_by_region.csv")
        _write_frame(diagnostics, rep_dir / "iabma_diagnostics.csv")
        return weights

    def _fit_moe(self, train: Dataset, test: Dataset, predictors: Sequence[BasePredictor],
                 train_table: LikelihoodTable, seed: int, rep_dir: Path) -> np.ndarray:
        cfg = TrainConfig.from_dict({**self.config["moe"], "seed": seed})
        gate, trace = fit_moe(train, train_table, cfg)
        _write_frame(trace.to_frame().rename(columns={"mean_elbo": "mean_objective"}), rep_dir / "moe_trace.csv")
        return gate.forward_batch(test.features)

    def _fit_dla(self, train, test, predictors, train_table, seed, rep_dir) -> np.ndarray:
        model = DynamicLocalAccuracy.from_predictors(train, predictors, DLAConfig(**self.config["dla"]))
        return model.weight_matrix(test.features)

    def method_weights(self, train: Dataset, test: Dataset, predictors: Sequence[BasePredictor],
                       train_table: LikelihoodTable, seed: int, rep_dir: Path) -> Dict[str, np.ndarray]:
        """n_test x m weight matrix per requested method, in request order."""
        constant: Dict[str, Callable[[], Any]] = {
            BaselineKind.BEST_SINGLE.value: lambda: weights_best_single(train_table),
            BaselineKind.UNIFORM.value: lambda: weights_uniform(train_table.m),
            BaselineKind.ACCURACY_WEIGHTED.value: lambda: weights_accuracy(train_table, train, predictors),
            BaselineKind.CLASSICAL_BMA.value: lambda: weights_bma(train_table),
        }
        adaptive = {
            METHOD_IABMA: self._fit_iabma,
            BaselineKind.MOE.value: self._fit_moe,
            BaselineKind.DLA.value: self._fit_dla,
        }
        weights = {}
        for method in self.methods:
            if method in constant:
                weights[method] = constant_weight_matrix(constant[method](), test.n)
            else:
                weights[method] = adaptive[method](train, test, predictors, train_table, seed, rep_dir)
            logger.debug(f"{method}: mean weights {np.round(weights[method].mean(axis=0), 4).tolist()}")
        return weights

    # ------------------------------------------------------------------
    # evaluation
    # ------------------------------------------------------------------

    def evaluate(self, method: str, weights: np.ndarray, test: Dataset, test_table: LikelihoodTable,
                 outputs: np.ndarray, repetition: int) -> MetricReport:
        bins = self.config["ece_bins"]
        if test.task is Task.CLASSIFICATION:
            prediction = mixture_prediction(weights, test_table, component_probs=outputs)
            probs = prediction.class_probs
            binary = probs.shape[1] == 2
            return MetricReport(
                method=method,
                task=test.task.value,
                repetition=repetition,
                accuracy=accuracy(probs, test.labels),
                ece=ece(probs, test.labels, bins) if binary else None,
                mean_test_loglik=float(prediction.mixture_loglik.mean()),
                bin_errors=confidence_bin_errors(probs, test.labels, bins) if binary else None,
            )
        prediction = mixture_prediction(weights, test_table, component_means=outputs)
        rmse, r2 = rmse_r2(prediction.mean, test.labels)
        return MetricReport(
            method=method,
            task=test.task.value,
            repetition=repetition,
            rmse=rmse,
            r2=r2,
            mean_test_loglik=float(prediction.mixture_loglik.mean()),
        )

    # ------------------------------------------------------------------
    # repetitions
    # ------------------------------------------------------------------

    def run_repetition(self, repetition: int) -> Dict[str, Any]:
        """Fit, average, evaluate and check one repetition; raises on any module error."""
        seed = derive_seed(self.master_seed, repetition)
        rep_dir = self.output_dir / f"rep_{repetition}"
        rep_dir.mkdir(parents=True, exist_ok=True)
        logger.info(f"Repetition {repetition}: seed {seed}, writing to {rep_dir}")

        train, test, notes = self.load_dataset(seed)
        predictors = fit_roster(self.roster(), train)
        for predictor in predictors:
            notes.extend(f"{predictor.name}: {warning}" for warning in predictor.fit_warnings)
        dump_predictors(predictors, rep_dir / "predictors.json")

        train_table = loglik_table(predictors, train, training=True)
        test_table = loglik_table(predictors, test)
        outputs = component_outputs(predictors, test)
        names = list(test_table.model_names)
        _write_frame(pd.DataFrame(test_table.loglik, columns=names), rep_dir / "test_loglik.csv")

        reports, theorem, bin_frames = [], {}, []
        for method, weights in self.method_weights(train, test, predictors, train_table, seed, rep_dir).items():
            _write_frame(pd.DataFrame(weights, columns=names), rep_dir / f"weights_{method}.csv")
            report = self.evaluate(method, weights, test, test_table, outputs, repetition)
            reports.append(report)
            if report.bin_errors is not None:
                bin_frames.append(report.bin_errors.assign(method=method))

            check = theorem1_check(weights, test_table)
            theorem[method] = check.summary()
            if not check.passed:
                logger.error(
                    f"Repetition {repetition}: {method} violates the mixture bound "
                    f"(max violation {check.max_violation:.3e}, {check.violations} rows)"
                )

        metrics = [report.to_row() for report in reports]
        _write_frame(pd.DataFrame(metrics, columns=METRIC_COLUMNS), rep_dir / "metrics.csv")
        if bin_frames:
            _write_frame(pd.concat(bin_frames, ignore_index=True), rep_dir / "confidence_bins.csv")
        _write_json(theorem, rep_dir / "theorem.json")
        for note in notes:
            logger.warning(f"Repetition {repetition}: {note}")

        return {
            "repetition": repetition,
            "seed": seed,
            "status": "completed",
            "metrics": metrics,
            "theorem": theorem,
            "notes": notes,
            "error": "",
        }

    def safe_repetition(self, repetition: int) -> Dict[str, Any]:
        """``run_repetition`` with failures recorded instead of raised."""
        try:
            return self.run_repetition(repetition)
        except AveragingError as exc:
            logger.error(f"Repetition {repetition} failed: {exc}")
            error = f"{type(exc).__name__}: {exc}"
        except Exception as exc:
            logger.exception(f"Repetition {repetition} failed unexpectedly")
            error = f"{type(exc).__name__}: {exc}"
        return {
            "repetition": repetition,
            "seed": derive_seed(self.master_seed, repetition),
            "status": "failed",
            "metrics": [],
            "theorem": {},
            "notes": [],
            "error": error,
        }

    def _dispatch_celery(self) -> List[Dict[str, Any]]:
        from celery import group

        from .tasks import run_repetition_task

        job = group(run_repetition_task.s(self.config, r) for r in range(self.config["repetitions"]))
        results = job.apply_async().join(disable_sync_subtasks=False)
        return sorted(results, key=lambda result: result["repetition"])

    # ------------------------------------------------------------------
    # full run
    # ------------------------------------------------------------------

    def _create_record(self):
        from .models import ExperimentRun

        return ExperimentRun.objects.create(
            name=self.config.get("name", ""),
            config=self.config,
            master_seed=self.master_seed,
            repetitions=self.config["repetitions"],
            output_dir=str(self.output_dir),
            status="running",
        )

    def _finish_record(self, run, summary: RunSummary, error: str):
        from .models import RepetitionResult

        RepetitionResult.objects.bulk_create([
            RepetitionResult(
                run=run,
                repetition=result["repetition"],
                seed=result["seed"],
                status=result["status"],
                metrics=result["metrics"],
                theorem=result["theorem"],
                notes=result["notes"],
                error=result["error"],
            )
            for result in summary.repetitions
        ])
        run.status = summary.status
        run.aggregate = json.loads(summary.aggregate.to_json(orient="records"))
        run.theorem_passed = summary.theorem_passed if summary.completed else None
        run.error = error
        run.finished_at = timezone.now()
        run.save()

    def run(self, use_celery: bool = False) -> RunSummary:
        """Run every repetition, aggregate, and write the run-level files."""
        started_at = timezone.now()
        self.output_dir.mkdir(parents=True, exist_ok=True)
        record = self._create_record() if self.record else None
        repetitions = self.config["repetitions"]
        logger.info(
            f"Starting run of {repetitions} repetition(s), methods {self.methods}, "
            f"master seed {self.master_seed}, output {self.output_dir}"
        )

        if use_celery:
            results = self._dispatch_celery()
        else:
            results = [self.safe_repetition(r) for r in range(repetitions)]

        failed = [result["repetition"] for result in results if result["status"] == "failed"]
        completed = [result for result in results if result["status"] == "completed"]
        rows = [row for result in completed for row in result["metrics"]]
        table = aggregate_metrics(rows, self.methods)
        theorem_passed = all(check["passed"] for result in completed for check in result["theorem"].values())

        if not completed:
            status = "failed"
        elif failed:
            status = "partial"
        else:
            status = "completed"

        _write_frame(table, self.output_dir / "aggregate.csv")
        (self.output_dir / "aggregate.txt").write_text(format_aggregate(table, self.methods), encoding="utf-8")
        ordering = ordering_report(table)
        if not ordering.empty:
            _write_frame(ordering, self.output_dir / "ordering.csv")
        summary = RunSummary(
            output_dir=self.output_dir,
            status=status,
            aggregate=table,
            repetitions=results,
            theorem_passed=theorem_passed,
            run_id=record.pk if record else None,
            failed=failed,
            ordering=None if ordering.empty else ordering,
        )
        _write_json({
            "config": self.config,
            "master_seed": self.master_seed,
            "status": status,
            "theorem_passed": theorem_passed,
            "ordering_passed": summary.ordering_passed,
            "started_at": started_at.isoformat(),
            "finished_at": timezone.now().isoformat(),
            "repetitions": [
                {key: result[key] for key in ("repetition", "seed", "status", "error", "notes")}
                for result in results
            ],
        }, self.output_dir / "manifest.json")

        error = "" if completed else "Every repetition failed."
        if record is not None:
            self._finish_record(record, summary, error)
        logger.info(
            f"Run finished with status {status}: {summary.completed}/{repetitions} repetitions, "
            f"guarantee check {'passed' if theorem_passed else 'FAILED'}"
        )
        return summary
