import logging
import math
import threading
import time
from concurrent.futures import CancelledError, ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from src.models.aggregator import (
    AggregationMethod,
    AggregatorModel,
    PredictionMatrix,
    predict,
)
from src.models.bandwidth import (
    CVPlan,
    TuningResult,
    gradient_descent,
    grid_search,
    holdout_grid_search,
)
from src.models.config import TuningConfig
from src.models.errors import DataError
from src.models.io import read_dataset_csv, read_prediction_csv, write_frame
from src.models.kernel import KernelFamily, KernelSpec, Parametrization
from src.models.learners import (
    LearnerSpec,
    build_prediction_matrix,
    fit,
    predict_roster,
)
from src.models.simulate import SimDesign, SplitPlan, generate, rmse, split_data

logger = logging.getLogger(__name__)

REPORT_COLUMNS = ["method", "replication", "rmse", "tune_ms", "predict_ms"]
SUMMARY_COLUMNS = [
    "method",
    "replications",
    "requested",
    "mean_rmse",
    "se_rmse",
    "mean_tune_ms",
    "mean_predict_ms",
]


@dataclass(frozen=True)
class MethodSpec:
    """An aggregation method of the benchmark, e.g. ``consensual:gauss`` or ``cobra``."""

    method: AggregationMethod
    kernel: KernelSpec = KernelSpec(KernelFamily.GAUSSIAN)

    def __post_init__(self):
        if (
            self.method is AggregationMethod.KERNELCOBRA
            and self.kernel.family is not KernelFamily.GAUSSIAN
        ):
            raise ValueError("kernelcobra uses the gauss kernel")

    @classmethod
    def from_token(cls, token: str) -> "MethodSpec":
        head, _, rest = token.strip().partition(":")
        try:
            method = AggregationMethod(head.strip().lower())
        except ValueError:
            raise ValueError(
                f"Unknown method '{head}', expected consensual:<kernel>, cobra or kernelcobra"
            )
        if method is AggregationMethod.CONSENSUAL:
            if not rest:
                raise ValueError("consensual method needs a kernel, e.g. consensual:gauss")
            return cls(method, KernelSpec.from_token(rest))
        if method is AggregationMethod.KERNELCOBRA and rest:
            return cls(method, KernelSpec.from_token(rest))
        if rest:
            raise ValueError(f"method {method.value} takes no parameters")
        return cls(method)

    @property
    def name(self) -> str:
        if self.method is AggregationMethod.CONSENSUAL:
            return f"consensual:{self.kernel.to_token()}"
        return self.method.value


def parse_methods(text: str) -> List[MethodSpec]:
    """
    Parse a comma-separated method list.

    Kernel tokens contain colons but no commas, so commas always separate methods.
    """
    specs = [MethodSpec.from_token(token) for token in text.split(",") if token.strip()]
    if not specs:
        raise ValueError("at least one method is required")
    return specs


@dataclass(frozen=True)
class BenchmarkPlan:
    """
    What to benchmark and how often.

    Exactly one data source is used: a SimDesign, a dataset CSV, or a pair of
    prediction CSVs (training predictions on D_l and test predictions) that
    replace the learner roster.
    """

    methods: Tuple[MethodSpec, ...]
    design: Optional[SimDesign] = None
    dataset_path: Optional[str] = None
    train_predictions_path: Optional[str] = None
    test_predictions_path: Optional[str] = None
    roster: Tuple[LearnerSpec, ...] = ()
    tuning: TuningConfig = TuningConfig()
    split: SplitPlan = SplitPlan()
    replications: int = 1
    base_seed: int = 0
    threads: int = 1
    timing: bool = True

    def __post_init__(self):
        object.__setattr__(self, "methods", tuple(self.methods))
        object.__setattr__(self, "roster", tuple(self.roster))
        if not self.methods:
            raise ValueError("at least one method is required")
        if self.replications < 1:
            raise ValueError("replications must be at least 1")
        if self.threads < 1:
            raise ValueError("threads must be at least 1")
        sources = [
            self.design is not None,
            self.dataset_path is not None,
            self.train_predictions_path is not None,
        ]
        if sum(sources) != 1:
            raise ValueError(
                "exactly one data source is required: a simulation design, a dataset "
                "CSV, or training/test prediction CSVs"
            )
        if (self.train_predictions_path is None) != (self.test_predictions_path is None):
            raise ValueError("training and test prediction CSVs must be given together")
        if self.train_predictions_path is None and not self.roster:
            raise ValueError("a learner roster is required unless prediction CSVs are given")

    @property
    def uses_external_predictions(self) -> bool:
        return self.train_predictions_path is not None


@dataclass(frozen=True)
class ReplicationRow:
    method: str
    replication: int
    rmse: float
    tune_ms: float = 0.0
    predict_ms: float = 0.0


@dataclass(frozen=True)
class MethodSummary:
    method: str
    replications: int
    mean_rmse: float
    se_rmse: float
    mean_tune_ms: float
    mean_predict_ms: float


class ReplicationStatus(Enum):
    COMPLETED = "completed"
    FAILED = "failed"
    CANCELLED = "cancelled"


@dataclass(frozen=True)
class ReplicationOutcome:
    replication: int
    status: ReplicationStatus
    rows: Tuple[ReplicationRow, ...] = ()
    error: Optional[str] = None


def summarize(rows: Sequence[ReplicationRow]) -> List[MethodSummary]:
    """Per-method mean and standard error (sample sd / sqrt(count)) in first-seen order."""
    grouped: Dict[str, List[ReplicationRow]] = {}
    for row in rows:
        grouped.setdefault(row.method, []).append(row)
    summaries = []
    for method, method_rows in grouped.items():
        values = np.array([row.rmse for row in method_rows], dtype=float)
        count = values.shape[0]
        # A single replication has no spread estimate; report 0.
        se = float(np.std(values, ddof=1) / math.sqrt(count)) if count > 1 else 0.0
        summaries.append(
            MethodSummary(
                method=method,
                replications=count,
                mean_rmse=float(np.mean(values)),
                se_rmse=se,
                mean_tune_ms=float(np.mean([row.tune_ms for row in method_rows])),
                mean_predict_ms=float(np.mean([row.predict_ms for row in method_rows])),
            )
        )
    return summaries


@dataclass
class BenchmarkReport:
    rows: List[ReplicationRow] = field(default_factory=list)
    outcomes: List[ReplicationOutcome] = field(default_factory=list)
    requested: int = 0

    @property
    def summaries(self) -> List[MethodSummary]:
        return summarize(self.rows)

    @property
    def failures(self) -> List[ReplicationOutcome]:
        return [o for o in self.outcomes if o.status is not ReplicationStatus.COMPLETED]

    @property
    def complete(self) -> bool:
        completed = sum(1 for o in self.outcomes if o.status is ReplicationStatus.COMPLETED)
        return completed == self.requested

    def summary(self, method: str) -> MethodSummary:
        for item in self.summaries:
            if item.method == method:
                return item
        raise KeyError(method)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            [[getattr(row, column) for column in REPORT_COLUMNS] for row in self.rows],
            columns=REPORT_COLUMNS,
        )

    def summary_frame(self) -> pd.DataFrame:
        """Per-method summary; ``replications`` below ``requested`` marks an incomplete run."""
        report_values = {"requested": self.requested}
        return pd.DataFrame(
            [
                [report_values.get(column, getattr(s, column, None)) for column in SUMMARY_COLUMNS]
                for s in self.summaries
            ],
            columns=SUMMARY_COLUMNS,
        )

    def write(self, path: Union[str, Path], summary_path: Optional[Union[str, Path]] = None):
        write_frame(self.to_frame(), path)
        if summary_path is not None:
            write_frame(self.summary_frame(), summary_path)


class _Stopwatch:
    def __init__(self, enabled: bool):
        self.enabled = enabled
        self.elapsed_ms = 0.0

    def __enter__(self):
        self._start = time.perf_counter()
        return self

    def __exit__(self, *exc):
        if self.enabled:
            self.elapsed_ms = (time.perf_counter() - self._start) * 1000.0
        return False


def tune_method(
    spec: MethodSpec,
    data: PredictionMatrix,
    tuning: TuningConfig,
    seed: int,
) -> Tuple[AggregatorModel, TuningResult]:
    """
    Tune one aggregation method on D_l and return the fitted model.

    Consensual kernels use kappa-fold CV (gradient descent for gauss/exp4 unless
    the strategy forces the grid, grid search for compact kernels). COBRA and
    KernelCobra use a hold-out search on a seeded halving of D_l.
    """
    fallback = tuning.fallback
    if spec.method is AggregationMethod.CONSENSUAL:
        plan = CVPlan.create(data.n_rows, tuning.kappa, seed)
        use_gd = tuning.strategy == "gd" or (
            tuning.strategy == "auto" and spec.kernel.is_differentiable
        )
        if use_gd:
            result = gradient_descent(data, plan, spec.kernel, tuning.gd(seed), fallback)
        else:
            result = grid_search(
                data, plan, spec.kernel, tuning.grid(), Parametrization.SCALE, fallback
            )
        model = AggregatorModel.fit(data, spec.kernel, result.bandwidth, fallback)
        return model, result

    if data.n_rows < 2:
        raise DataError("hold-out tuning needs at least two rows in D_l")
    order = np.random.default_rng(seed).permutation(data.n_rows)
    half = data.n_rows // 2
    fit_part, val_part = data.subset(order[:half]), data.subset(order[half:])
    result = holdout_grid_search(
        fit_part,
        val_part,
        spec.kernel,
        tuning.grid(),
        method=spec.method,
        zero_mass_fallback=fallback,
    )
    model = AggregatorModel.fit(
        data,
        spec.kernel,
        result.bandwidth,
        zero_mass_fallback=fallback,
        method=spec.method,
        alpha=result.alpha,
    )
    return model, result


class BenchmarkRunner:
    """Runs the replications of a BenchmarkPlan on a worker pool."""

    def __init__(self, plan: BenchmarkPlan):
        self.plan = plan
        self._lock = threading.RLock()
        self._shutdown = threading.Event()
        self._executor: Optional[ThreadPoolExecutor] = None
        self._dataset: Optional[Tuple[np.ndarray, np.ndarray]] = None
        self._external: Optional[Tuple[PredictionMatrix, PredictionMatrix]] = None

    def _load_shared_inputs(self):
        plan = self.plan
        if plan.dataset_path is not None:
            self._dataset = read_dataset_csv(plan.dataset_path)
        if plan.uses_external_predictions:
            train = read_prediction_csv(plan.train_predictions_path)
            test = read_prediction_csv(plan.test_predictions_path)
            if test.learner_names != train.learner_names:
                raise DataError(
                    "training and test prediction CSVs have different learner columns"
                )
            self._external = (train, test)

    def _replication_data(
        self, seed: int
    ) -> Tuple[PredictionMatrix, np.ndarray, np.ndarray]:
        """(prediction matrix on D_l, test prediction rows, test responses)."""
        if self._external is not None:
            train, test = self._external
            return train, np.asarray(test.rows), np.asarray(test.responses)

        if self.plan.design is not None:
            X, y = generate(replace(self.plan.design, seed=seed))
        else:
            X, y = self._dataset
        (X_k, y_k), (X_l, y_l), (X_test, y_test) = split_data(
            X, y, replace(self.plan.split, seed=seed)
        )
        learners = [fit(spec, X_k, y_k) for spec in self.plan.roster]
        matrix = build_prediction_matrix(learners, X_l, y_l)
        return matrix, predict_roster(learners, X_test), y_test

    def run_replication(self, replication: int) -> ReplicationOutcome:
        if self._shutdown.is_set():
            return ReplicationOutcome(replication, ReplicationStatus.CANCELLED)

        plan = self.plan
        seed = plan.base_seed + replication
        logger.info("replication %d started (seed=%d)", replication, seed)
        try:
            matrix, test_rows, test_y = self._replication_data(seed)
            rows = [
                ReplicationRow(name, replication, rmse(test_rows[:, m], test_y))
                for m, name in enumerate(matrix.learner_names)
            ]
            for spec in plan.methods:
                with _Stopwatch(plan.timing) as tune_clock:
                    model, _ = tune_method(spec, matrix, plan.tuning, seed)
                with _Stopwatch(plan.timing) as predict_clock:
                    values = predict(model, test_rows).values
                rows.append(
                    ReplicationRow(
                        spec.name,
                        replication,
                        rmse(values, test_y),
                        tune_clock.elapsed_ms,
                        predict_clock.elapsed_ms,
                    )
                )
        except Exception as e:
            logger.error("replication %d failed: %s", replication, e)
            return ReplicationOutcome(replication, ReplicationStatus.FAILED, error=str(e))

        logger.info("replication %d finished", replication)
        return ReplicationOutcome(replication, ReplicationStatus.COMPLETED, tuple(rows))

    def run(self) -> BenchmarkReport:
        """Run every replication and assemble the report in replication order."""
        self._load_shared_inputs()
        plan = self.plan
        with self._lock:
            self._executor = ThreadPoolExecutor(max_workers=plan.threads)
        try:
            futures = [
                self._executor.submit(self.run_replication, r)
                for r in range(plan.replications)
            ]
            outcomes = []
            for replication, future in enumerate(futures):
                try:
                    outcomes.append(future.result())
                except CancelledError:
                    outcomes.append(
                        ReplicationOutcome(replication, ReplicationStatus.CANCELLED)
                    )
        finally:
            with self._lock:
                self._executor.shutdown(wait=True)
                self._executor = None

        report = BenchmarkReport(requested=plan.replications)
        for outcome in outcomes:
            report.outcomes.append(outcome)
            report.rows.extend(outcome.rows)
        if not report.complete:
            logger.warning(
                "benchmark incomplete: %d of %d replications did not finish",
                len(report.failures),
                plan.replications,
            )
        return report

    def shutdown(self):
        """Stop scheduling replications; running ones finish, pending ones are cancelled."""
        self._shutdown.set()
        with self._lock:
            if self._executor is not None:
                self._executor.shutdown(wait=False, cancel_futures=True)


def run_benchmark(plan: BenchmarkPlan) -> BenchmarkReport:
    return BenchmarkRunner(plan).run()
