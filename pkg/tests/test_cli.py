import json
import logging
import os
import shutil
import tempfile
import unittest
from unittest.mock import patch

import numpy as np
import pandas as pd
from click.testing import CliRunner

from src.main import LOG_FORMAT, cli, main
from src.models.aggregator import PredictionMatrix
from src.models.bandwidth import CVPlan, cv_error_grad
from src.models.io import write_prediction_csv
from src.models.kernel import BandwidthParam, KernelFamily, KernelSpec, Parametrization
from src.models.model_store import load_model
from src.routes.config import reset_config_manager


class CliTestCase(unittest.TestCase):
    def setUp(self):
        self.temp_dir = tempfile.mkdtemp()
        self.runner = CliRunner()
        reset_config_manager()

    def tearDown(self):
        shutil.rmtree(self.temp_dir)
        reset_config_manager()
        # handlers bound to the runner's captured stderr
        root = logging.getLogger()
        for handler in list(root.handlers):
            if handler.formatter is not None and handler.formatter._fmt == LOG_FORMAT:
                root.removeHandler(handler)

    def path(self, name):
        return os.path.join(self.temp_dir, name)

    def invoke(self, args):
        result = self.runner.invoke(cli, args, catch_exceptions=False)
        self.assertEqual(result.exit_code, 0, result.output)
        return result

    def write_predictions(self, name, n=60, seed=0):
        rng = np.random.default_rng(seed)
        truth = rng.uniform(-1, 1, size=n)
        rows = truth[:, None] + rng.normal(0, [0.1, 0.4], size=(n, 2))
        path = self.path(name)
        write_prediction_csv(
            PredictionMatrix(rows=rows, responses=truth, learner_names=("knn", "ridge")), path
        )
        return path


class TestSimulateCommand(CliTestCase):
    """Tests for the simulate command."""

    def test_writes_dataset(self):
        out = self.path("data.csv")
        result = self.invoke(["simulate", "--model", "1", "--n", "25", "--d", "3", "--out", out])
        self.assertIn("n=25 d=3", result.stdout)
        frame = pd.read_csv(out)
        self.assertEqual(list(frame.columns), ["y", "x1", "x2", "x3"])
        self.assertEqual(len(frame), 25)

    def test_invalid_model_exit_code(self):
        self.assertEqual(main(["simulate", "--model", "11", "--out", self.path("x.csv")]), 1)

    def test_dimension_too_small_exit_code(self):
        self.assertEqual(
            main(["simulate", "--model", "6", "--d", "5", "--out", self.path("x.csv")]), 1
        )

    def test_linear_algebra_failure_exit_code(self):
        with patch("src.routes.simulate.generate",
                   side_effect=np.linalg.LinAlgError("Matrix is not positive definite")):
            code = main(["simulate", "--model", "1", "--n", "20", "--d", "2",
                         "--out", self.path("x.csv")])
        self.assertEqual(code, 3)
        self.assertFalse(os.path.exists(self.path("x.csv")))


class TestFitPredictTune(CliTestCase):
    """Tests for fit, predict and tune."""

    def test_fit_then_predict(self):
        train = self.write_predictions("train.csv")
        queries = self.write_predictions("queries.csv", n=15, seed=1)
        model_path = self.path("model.json")
        trace_path = self.path("trace.csv")

        result = self.invoke([
            "fit", "--train", train, "--kernel", "gauss", "--out", model_path,
            "--trace-out", trace_path, "--max-iter", "50",
        ])
        self.assertTrue(result.stdout.startswith("h="))
        self.assertEqual(list(pd.read_csv(trace_path).columns), ["iter", "h", "loss", "grad"])
        model = load_model(model_path)
        self.assertEqual(model.bandwidth.parametrization, Parametrization.INVERSE_SCALE)

        out = self.path("pred.csv")
        result = self.invoke(["predict", "--model", model_path, "--queries", queries, "--out", out])
        self.assertIn("rmse=", result.stdout)
        frame = pd.read_csv(out)
        self.assertEqual(list(frame.columns), ["prediction", "y", "zero_mass"])
        self.assertEqual(len(frame), 15)

    def test_fit_with_fixed_bandwidth(self):
        train = self.write_predictions("train.csv")
        model_path = self.path("model.json")
        self.invoke([
            "fit", "--train", train, "--kernel", "epanechnikov", "--h", "0.4", "--out", model_path,
        ])
        model = load_model(model_path)
        self.assertEqual(model.bandwidth, BandwidthParam(0.4, Parametrization.SCALE))
        self.assertEqual(model.kernel.family, KernelFamily.EPANECHNIKOV)

    def test_cobra_fixed_bandwidth_needs_alpha(self):
        train = self.write_predictions("train.csv")
        code = main([
            "fit", "--train", train, "--method", "cobra", "--h", "0.2",
            "--out", self.path("model.json"),
        ])
        self.assertEqual(code, 1)

    def test_tune_reports_grid_result(self):
        train = self.write_predictions("train.csv")
        result = self.invoke([
            "tune", "--train", train, "--kernel", "triweight",
            "--grid-min", "0.01", "--grid-max", "2", "--grid-count", "30",
        ])
        self.assertIn("parametrization=scale", result.stdout)
        self.assertIn("iterations=30", result.stdout)
        self.assertIn("converged=true", result.stdout)

    def test_tune_uses_config_file(self):
        train = self.write_predictions("train.csv")
        config_path = self.path("config.json")
        with open(config_path, "w") as f:
            json.dump({"tuning": {"strategy": "grid", "grid_count": 12, "grid_min": 0.1}}, f)
        result = self.invoke(["tune", "--train", train, "--config", config_path])
        self.assertIn("iterations=12", result.stdout)
        self.assertIn("parametrization=scale", result.stdout)

    def test_missing_model_file_exit_code(self):
        queries = self.write_predictions("queries.csv")
        code = main([
            "predict", "--model", self.path("absent.json"), "--queries", queries,
            "--out", self.path("pred.csv"),
        ])
        self.assertEqual(code, 2)

    def test_corrupt_model_file_exit_code(self):
        queries = self.write_predictions("queries.csv")
        model_path = self.path("model.json")
        with open(model_path, "w") as f:
            f.write("{broken")
        code = main([
            "predict", "--model", model_path, "--queries", queries, "--out", self.path("p.csv"),
        ])
        self.assertEqual(code, 2)

    def test_bad_prediction_csv_exit_code(self):
        path = self.path("train.csv")
        pd.DataFrame({"knn": [1.0, 2.0], "ridge": [0.5, 0.1]}).to_csv(path, index=False)
        self.assertEqual(main(["tune", "--train", path]), 2)

    def test_numeric_failure_exit_code(self):
        data = PredictionMatrix(
            rows=np.arange(20, dtype=float)[:, None],
            responses=np.array([(-1.0) ** i for i in range(20)]),
        )
        path = self.path("zigzag.csv")
        write_prediction_csv(data, path)
        plan = CVPlan.create(20, kappa=2, seed=0)
        gauss = KernelSpec(KernelFamily.GAUSSIAN)
        for h0 in [0.1, 1.0, 10.0, 100.0, 1000.0]:
            grad = cv_error_grad(
                data, plan, gauss, BandwidthParam(h0, Parametrization.INVERSE_SCALE)
            )
            if grad > 1e-4:
                break
        else:
            self.fail("no start with a positive gradient")

        code = main([
            "tune", "--train", path, "--tune", "gd", "--kappa", "2", "--h0", repr(h0),
            "--lr", str(float(1e20 * h0 / grad)), "--max-iter", "5",
        ])
        self.assertEqual(code, 3)

    def test_unknown_option_exit_code(self):
        self.assertEqual(main(["tune", "--bandwidth", "3"]), 1)


class TestBenchmarkCommand(CliTestCase):
    """Tests for the benchmark command."""

    def _args(self, out):
        return [
            "benchmark", "--model", "1", "--n", "120", "--d", "4", "--replications", "2",
            "--methods", "consensual:gauss,cobra", "--grid-count", "40", "--max-iter", "60",
            "--seed", "7", "--no-timing", "--out", out,
        ]

    def test_report_is_byte_identical_across_runs(self):
        first, second = self.path("first.csv"), self.path("second.csv")
        summary = self.path("summary.csv")
        self.invoke(self._args(first) + ["--summary-out", summary])
        self.invoke(self._args(second))
        with open(first, "rb") as f1, open(second, "rb") as f2:
            self.assertEqual(f1.read(), f2.read())

        report = pd.read_csv(first)
        self.assertEqual(list(report.columns), ["method", "replication", "rmse", "tune_ms", "predict_ms"])
        self.assertEqual(len(report), 2 * 5)
        self.assertEqual(len(pd.read_csv(summary)), 5)

    def test_requires_a_data_source(self):
        self.assertEqual(main(["benchmark", "--out", self.path("r.csv")]), 1)

    def test_config_init_and_show(self):
        config_path = self.path("config.json")
        self.invoke(["config", "init", config_path])
        with open(config_path) as f:
            self.assertEqual(json.load(f)["tuning"]["kappa"], 5)
        result = self.invoke(["config", "show", "--config", config_path])
        self.assertEqual(json.loads(result.stdout)["benchmark"]["replications"], 10)


if __name__ == "__main__":
    unittest.main()
