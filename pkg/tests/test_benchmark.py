import math
import os
import shutil
import tempfile
import unittest

import numpy as np
from scipy.stats import spearmanr

from src.models.aggregator import AggregationMethod, PredictionMatrix, predict
from src.models.benchmark import (
    REPORT_COLUMNS,
    SUMMARY_COLUMNS,
    BenchmarkPlan,
    BenchmarkReport,
    BenchmarkRunner,
    MethodSpec,
    ReplicationOutcome,
    ReplicationRow,
    ReplicationStatus,
    parse_methods,
    run_benchmark,
    summarize,
    tune_method,
)
from src.models.config import TuningConfig
from src.models.io import write_dataset_csv, write_prediction_csv
from src.models.kernel import KernelFamily, KernelSpec
from src.models.learners import (
    LearnerKind,
    LearnerSpec,
    build_prediction_matrix,
    fit,
    parse_roster,
    predict_roster,
)
from src.models.simulate import SimDesign, SplitPlan, generate, rmse, split_data

ROSTER = tuple(parse_roster("knn:k=5,ridge:lambda=1.0,tree:max_depth=8:min_leaf=5"))


class TestMethodSpec(unittest.TestCase):
    """Tests for benchmark method tokens."""

    def test_parse_methods(self):
        specs = parse_methods("consensual:gauss,consensual:cgauss:sigma=1:rho1=3,cobra,kernelcobra")
        self.assertEqual(
            [spec.method for spec in specs],
            [
                AggregationMethod.CONSENSUAL,
                AggregationMethod.CONSENSUAL,
                AggregationMethod.COBRA,
                AggregationMethod.KERNELCOBRA,
            ],
        )
        self.assertEqual(specs[1].kernel.family, KernelFamily.COMPACT_GAUSSIAN)
        self.assertEqual(specs[1].kernel.rho1, 3.0)
        self.assertEqual(specs[2].name, "cobra")
        self.assertTrue(specs[0].name.startswith("consensual:gauss"))

    def test_invalid_methods(self):
        for text in ["", "consensual", "cobra:naive", "stacking", "kernelcobra:naive"]:
            with self.assertRaises(ValueError, msg=text):
                parse_methods(text)


class TestBenchmarkPlan(unittest.TestCase):
    """Tests for plan validation."""

    def test_exactly_one_source(self):
        methods = parse_methods("consensual:gauss")
        with self.assertRaises(ValueError):
            BenchmarkPlan(methods=methods, roster=ROSTER)
        with self.assertRaises(ValueError):
            BenchmarkPlan(
                methods=methods,
                design=SimDesign(model_id=1, n=50, d=2),
                dataset_path="data.csv",
                roster=ROSTER,
            )
        with self.assertRaises(ValueError):
            BenchmarkPlan(methods=methods, train_predictions_path="train.csv")

    def test_roster_required_without_prediction_csvs(self):
        with self.assertRaises(ValueError):
            BenchmarkPlan(
                methods=parse_methods("cobra"), design=SimDesign(model_id=1, n=50, d=2)
            )

    def test_counts_validated(self):
        design = SimDesign(model_id=1, n=50, d=2)
        methods = parse_methods("cobra")
        with self.assertRaises(ValueError):
            BenchmarkPlan(methods=methods, design=design, roster=ROSTER, replications=0)
        with self.assertRaises(ValueError):
            BenchmarkPlan(methods=methods, design=design, roster=ROSTER, threads=0)


class TestSummary(unittest.TestCase):
    """Tests for per-method summaries."""

    def test_mean_and_standard_error(self):
        rows = [
            ReplicationRow("knn", 0, 1.0),
            ReplicationRow("agg", 0, 2.0, 4.0, 1.0),
            ReplicationRow("knn", 1, 3.0),
            ReplicationRow("agg", 1, 4.0, 6.0, 3.0),
        ]
        knn, agg = summarize(rows)
        self.assertEqual(knn.method, "knn")
        self.assertEqual(knn.replications, 2)
        self.assertAlmostEqual(knn.mean_rmse, 2.0)
        # sample sd sqrt(2) over sqrt(2)
        self.assertAlmostEqual(knn.se_rmse, 1.0)
        self.assertAlmostEqual(agg.mean_tune_ms, 5.0)
        self.assertAlmostEqual(agg.mean_predict_ms, 2.0)

    def test_single_replication_has_zero_se(self):
        (summary,) = summarize([ReplicationRow("ridge", 0, 0.7)])
        self.assertEqual(summary.se_rmse, 0.0)

    def test_report_frames(self):
        report = BenchmarkReport(rows=[ReplicationRow("knn", 0, 1.5)], requested=1)
        self.assertEqual(list(report.to_frame().columns), REPORT_COLUMNS)
        self.assertEqual(list(report.summary_frame().columns), SUMMARY_COLUMNS)
        self.assertEqual(report.summary("knn").mean_rmse, 1.5)
        with self.assertRaises(KeyError):
            report.summary("tree")

    def test_summary_frame_shows_incomplete_run(self):
        report = BenchmarkReport(
            rows=[ReplicationRow("knn", 0, 1.5), ReplicationRow("ridge", 0, 0.9)],
            outcomes=[
                ReplicationOutcome(0, ReplicationStatus.COMPLETED),
                ReplicationOutcome(1, ReplicationStatus.FAILED, error="singular design"),
            ],
            requested=2,
        )
        self.assertFalse(report.complete)
        frame = report.summary_frame()
        self.assertEqual(frame["requested"].tolist(), [2, 2])
        self.assertEqual(frame["replications"].tolist(), [1, 1])
        self.assertEqual(len(report.failures), 1)


class TestTuneMethod(unittest.TestCase):
    """Tests for tuning a single aggregation method on D_l."""

    def setUp(self):
        rng = np.random.default_rng(5)
        truth = rng.uniform(-1, 1, size=80)
        rows = truth[:, None] + rng.normal(0, [0.1, 0.3, 0.6], size=(80, 3))
        self.data = PredictionMatrix(rows=rows, responses=truth, learner_names=("a", "b", "c"))
        self.tuning = TuningConfig(grid_count=40, grid_min=0.01, grid_max=2.0)

    def test_consensual_gauss_uses_gradient_descent(self):
        model, result = tune_method(
            MethodSpec(AggregationMethod.CONSENSUAL), self.data, self.tuning, seed=1
        )
        self.assertTrue(any(entry.event == "start" for entry in result.trace))
        self.assertEqual(model.bandwidth, result.bandwidth)

    def test_compact_kernel_uses_grid(self):
        spec = MethodSpec(AggregationMethod.CONSENSUAL, KernelSpec(KernelFamily.EPANECHNIKOV))
        _, result = tune_method(spec, self.data, self.tuning, seed=1)
        self.assertEqual(result.iterations, 40)
        self.assertTrue(all(entry.event == "grid" for entry in result.trace))

    def test_cobra_selects_alpha(self):
        model, result = tune_method(MethodSpec(AggregationMethod.COBRA), self.data, self.tuning, seed=2)
        self.assertIn(result.alpha, [1 / 3, 2 / 3, 1.0])
        self.assertEqual(model.alpha, result.alpha)
        self.assertEqual(model.predictions.n_rows, 80)
        self.assertEqual(result.evaluations, 3 * 40)

    def test_kernelcobra(self):
        model, result = tune_method(
            MethodSpec(AggregationMethod.KERNELCOBRA), self.data, self.tuning, seed=2
        )
        self.assertEqual(model.method, AggregationMethod.KERNELCOBRA)
        self.assertTrue(math.isfinite(result.loss))


class TestBenchmarkRunner(unittest.TestCase):
    """Tests for running replications."""

    def setUp(self):
        self.temp_dir = tempfile.mkdtemp()
        self.tuning = TuningConfig(max_iter=100)

    def tearDown(self):
        shutil.rmtree(self.temp_dir)

    def _plan(self, **overrides):
        values = dict(
            methods=parse_methods("consensual:gauss"),
            design=SimDesign(model_id=1, n=400, d=20),
            roster=ROSTER,
            tuning=self.tuning,
            replications=10,
            timing=False,
        )
        values.update(overrides)
        return BenchmarkPlan(**values)

    def test_report_shape(self):
        report = run_benchmark(self._plan(threads=4))
        self.assertTrue(report.complete)
        self.assertEqual(len(report.rows), 40)
        self.assertEqual(
            [s.method for s in report.summaries][:3], ["knn", "ridge", "tree"]
        )
        self.assertEqual(len(report.summaries), 4)
        self.assertEqual([row.replication for row in report.rows[:4]], [0, 0, 0, 0])
        for row in report.rows:
            self.assertEqual((row.tune_ms, row.predict_ms), (0.0, 0.0))

    def test_knn_rmse_matches_direct_computation(self):
        report = run_benchmark(self._plan(replications=2))
        for replication in range(2):
            X, y = generate(SimDesign(model_id=1, n=400, d=20, seed=replication))
            (X_k, y_k), _, (X_t, y_t) = split_data(X, y, SplitPlan(seed=replication))
            knn = fit(ROSTER[0], X_k, y_k)
            expected = rmse(knn.predict(X_t), y_t)
            row = next(
                r for r in report.rows if r.method == "knn" and r.replication == replication
            )
            self.assertEqual(row.rmse, expected)

    def test_deterministic_without_timing(self):
        first_path = os.path.join(self.temp_dir, "first.csv")
        second_path = os.path.join(self.temp_dir, "second.csv")
        plan = self._plan(replications=3, threads=3,
                          methods=parse_methods("consensual:gauss,consensual:biweight,cobra"))
        run_benchmark(plan).write(first_path)
        run_benchmark(plan).write(second_path)
        with open(first_path, "rb") as f1, open(second_path, "rb") as f2:
            self.assertEqual(f1.read(), f2.read())

    def test_timing_recorded(self):
        report = run_benchmark(self._plan(replications=1, timing=True))
        row = report.rows[-1]
        self.assertGreater(row.tune_ms, 0.0)

    def test_failures_are_recorded(self):
        # Tree needs 5 points per leaf; D_k of a 10-point dataset has 4.
        plan = self._plan(
            design=SimDesign(model_id=1, n=10, d=2),
            roster=(LearnerSpec(LearnerKind.TREE),),
            replications=2,
        )
        report = run_benchmark(plan)
        self.assertFalse(report.complete)
        self.assertEqual(len(report.failures), 2)
        self.assertEqual(report.failures[0].status, ReplicationStatus.FAILED)
        self.assertEqual(report.rows, [])

    def test_shutdown_cancels_pending(self):
        runner = BenchmarkRunner(self._plan(replications=1))
        runner.shutdown()
        outcome = runner.run_replication(0)
        self.assertEqual(outcome.status, ReplicationStatus.CANCELLED)

    def test_dataset_source(self):
        X, y = generate(SimDesign(model_id=3, n=120, d=4, seed=8))
        path = os.path.join(self.temp_dir, "data.csv")
        write_dataset_csv(X, y, path)
        report = run_benchmark(
            self._plan(design=None, dataset_path=path, replications=2)
        )
        self.assertTrue(report.complete)
        self.assertEqual(len(report.rows), 8)

    def test_external_prediction_csvs(self):
        X, y = generate(SimDesign(model_id=1, n=300, d=5, seed=4))
        learners = [fit(spec, X[:100], y[:100]) for spec in ROSTER]
        train = build_prediction_matrix(learners, X[100:200], y[100:200])
        test = build_prediction_matrix(learners, X[200:], y[200:])
        train_path = os.path.join(self.temp_dir, "train.csv")
        test_path = os.path.join(self.temp_dir, "test.csv")
        write_prediction_csv(train, train_path)
        write_prediction_csv(test, test_path)

        report = run_benchmark(
            self._plan(
                design=None,
                roster=(),
                train_predictions_path=train_path,
                test_predictions_path=test_path,
                replications=2,
            )
        )
        self.assertTrue(report.complete)
        knn_rows = [r for r in report.rows if r.method == "knn"]
        self.assertEqual(knn_rows[0].rmse, knn_rows[1].rmse)
        self.assertAlmostEqual(knn_rows[0].rmse, rmse(test.rows[:, 0], y[200:]), places=12)


class TestStatisticalBehaviour(unittest.TestCase):
    """Scaled statistical checks of the aggregate on Model 1."""

    def test_aggregate_matches_best_learner(self):
        plan = BenchmarkPlan(
            methods=parse_methods("consensual:gauss"),
            design=SimDesign(model_id=1, n=400, d=20),
            roster=ROSTER,
            replications=20,
            threads=4,
            timing=False,
        )
        report = run_benchmark(plan)
        self.assertTrue(report.complete)
        best_learner = min(report.summary(spec.name).mean_rmse for spec in ROSTER)
        aggregate = report.summary(plan.methods[0].name).mean_rmse
        self.assertLessEqual(aggregate, 1.05 * best_learner)

    def test_error_decreases_with_aggregation_sample(self):
        sizes = [50, 100, 200, 400]
        X, y = generate(SimDesign(model_id=1, n=700, d=20, seed=1000))
        learners = [fit(spec, X[:200], y[:200]) for spec in ROSTER]
        test_rows, test_y = predict_roster(learners, X[200:]), y[200:]

        errors = np.zeros((10, len(sizes)))
        for replication in range(10):
            X_l, y_l = generate(SimDesign(model_id=1, n=400, d=20, seed=replication))
            matrix = build_prediction_matrix(learners, X_l, y_l)
            for j, size in enumerate(sizes):
                model, _ = tune_method(
                    MethodSpec(AggregationMethod.CONSENSUAL),
                    matrix.subset(np.arange(size)),
                    TuningConfig(),
                    seed=replication,
                )
                errors[replication, j] = rmse(predict(model, test_rows).values, test_y)

        correlation = spearmanr(sizes, errors.mean(axis=0)).correlation
        self.assertLessEqual(correlation, 0.0)


if __name__ == "__main__":
    unittest.main()
