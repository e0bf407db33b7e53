import unittest

import numpy as np

from src.models.errors import DataError
from src.models.learners import (
    LearnerKind,
    LearnerSpec,
    build_prediction_matrix,
    fit,
    parse_roster,
    predict,
)
from src.models.simulate import SimDesign, generate

KNN = LearnerSpec(LearnerKind.KNN, k=5)
RIDGE = LearnerSpec(LearnerKind.RIDGE)
TREE = LearnerSpec(LearnerKind.TREE)


class TestLearnerSpec(unittest.TestCase):
    """Tests for learner tokens and validation."""

    def test_parse_roster(self):
        roster = parse_roster("knn:k=5,ridge:lambda=1.0,tree:max_depth=8:min_leaf=5")
        self.assertEqual([spec.kind for spec in roster],
                         [LearnerKind.KNN, LearnerKind.RIDGE, LearnerKind.TREE])
        self.assertEqual(roster[0].k, 5)
        self.assertEqual(roster[1].ridge_lambda, 1.0)
        self.assertEqual((roster[2].max_depth, roster[2].min_leaf), (8, 5))

    def test_defaults_and_round_trip(self):
        spec = LearnerSpec.from_token("tree")
        self.assertEqual((spec.max_depth, spec.min_leaf), (8, 5))
        for spec in [KNN, RIDGE, TREE, LearnerSpec(LearnerKind.RIDGE, ridge_lambda=0.25)]:
            self.assertEqual(LearnerSpec.from_token(spec.to_token()), spec)

    def test_invalid(self):
        for text in ["lasso", "knn:k=0", "knn:depth=3", "ridge:lambda=-1", "tree:max_depth=x", ""]:
            with self.assertRaises(ValueError, msg=text):
                parse_roster(text)


class TestFitPredict(unittest.TestCase):
    """Tests for the built-in base regressors."""

    def setUp(self):
        rng = np.random.default_rng(0)
        self.X = rng.uniform(-1, 1, size=(60, 4))
        self.y = self.X[:, 0] ** 2 + rng.normal(0, 0.1, size=60)
        self.queries = rng.uniform(-1, 1, size=(15, 4))

    def test_ridge_recovers_linear_function(self):
        X = np.linspace(-1, 1, 10)[:, None]
        model = fit(LearnerSpec(LearnerKind.RIDGE, ridge_lambda=0.0), X, 2 * X[:, 0] + 1)
        np.testing.assert_allclose(model.state.coef, [2.0], atol=1e-8)
        self.assertAlmostEqual(model.state.intercept, 1.0, delta=1e-8)

    def test_ridge_matches_normal_equations(self):
        lam = 2.5
        model = fit(LearnerSpec(LearnerKind.RIDGE, ridge_lambda=lam), self.X, self.y)
        mean, scale = self.X.mean(axis=0), self.X.std(axis=0)
        Z = (self.X - mean) / scale
        beta = np.linalg.solve(Z.T @ Z + lam * np.eye(4), Z.T @ (self.y - self.y.mean()))
        expected = ((self.queries - mean) / scale) @ beta + self.y.mean()
        np.testing.assert_allclose(predict(model, self.queries), expected, rtol=1e-10, atol=1e-10)

    def test_ridge_shrinkage_is_monotone(self):
        norms = [
            np.linalg.norm(
                fit(LearnerSpec(LearnerKind.RIDGE, ridge_lambda=lam), self.X, self.y)
                .state.standardized_coef
            )
            for lam in [0.0, 0.1, 1.0, 10.0, 100.0]
        ]
        for smaller, larger in zip(norms[1:], norms):
            self.assertLessEqual(smaller, larger + 1e-12)

    def test_knn_one_neighbour_reproduces_training(self):
        model = fit(LearnerSpec(LearnerKind.KNN, k=1), self.X, self.y)
        np.testing.assert_array_equal(predict(model, self.X), self.y)

    def test_knn_all_neighbours_is_mean(self):
        model = fit(LearnerSpec(LearnerKind.KNN, k=60), self.X, self.y)
        np.testing.assert_allclose(predict(model, self.queries), self.y.mean(), rtol=1e-12)

    def test_knn_reduces_k_with_warning(self):
        with self.assertLogs("src.models.learners", level="WARNING"):
            model = fit(LearnerSpec(LearnerKind.KNN, k=10), self.X[:3], self.y[:3])
        self.assertEqual(model.spec.k, 3)

    def test_knn_ties_prefer_lower_index(self):
        model = fit(LearnerSpec(LearnerKind.KNN, k=1), [[1.0], [-1.0]], [10.0, 20.0])
        self.assertEqual(predict(model, [[0.0]])[0], 10.0)

    def test_tree_splits_step_function(self):
        X = np.concatenate([np.linspace(-1, -0.1, 10), np.linspace(0.1, 1, 10)])[:, None]
        y = (X[:, 0] > 0).astype(float)
        model = fit(LearnerSpec(LearnerKind.TREE, max_depth=1, min_leaf=1), X, y)
        self.assertEqual(model.state.feature[0], 0)
        self.assertAlmostEqual(model.state.threshold[0], 0.0, places=12)
        np.testing.assert_array_equal(predict(model, [[-0.5], [0.0], [0.5]]), [0.0, 0.0, 1.0])

    def test_tree_requires_min_leaf_points(self):
        with self.assertRaises(DataError):
            fit(LearnerSpec(LearnerKind.TREE, min_leaf=5), self.X[:4], self.y[:4])

    def test_constant_response(self):
        y = np.full(60, 2.5)
        for spec in [KNN, RIDGE, TREE]:
            np.testing.assert_allclose(
                predict(fit(spec, self.X, y), self.queries), 2.5, rtol=0, atol=1e-12
            )

    def test_predictions_within_response_range(self):
        for spec in [KNN, TREE]:
            out = predict(fit(spec, self.X, self.y), self.queries * 3)
            self.assertTrue(np.all(out >= self.y.min()) and np.all(out <= self.y.max()))

    def test_deterministic(self):
        for spec in [KNN, RIDGE, TREE]:
            first = predict(fit(spec, self.X, self.y), self.queries)
            second = predict(fit(spec, self.X, self.y), self.queries)
            np.testing.assert_array_equal(first, second)

    def test_column_mismatch(self):
        model = fit(KNN, self.X, self.y)
        with self.assertRaises(DataError):
            predict(model, self.queries[:, :3])

    def test_rejects_inconsistent_data(self):
        with self.assertRaises(DataError):
            fit(KNN, self.X, self.y[:10])
        with self.assertRaises(DataError):
            fit(KNN, np.full((3, 2), np.nan), [1.0, 2.0, 3.0])


class TestBuildPredictionMatrix(unittest.TestCase):
    """Tests for assembling base-learner predictions on D_l."""

    def setUp(self):
        self.X, self.y = generate(SimDesign(model_id=1, n=120, d=5, seed=3))
        self.X_k, self.y_k = self.X[:60], self.y[:60]
        self.X_l, self.y_l = self.X[60:], self.y[60:]

    def test_single_learner(self):
        learner = fit(KNN, self.X_k, self.y_k)
        matrix = build_prediction_matrix([learner], self.X_l[:2], self.y_l[:2])
        self.assertEqual(matrix.rows.shape, (2, 1))
        np.testing.assert_array_equal(matrix.rows[:, 0], learner.predict(self.X_l[:2]))

    def test_identical_learners(self):
        learners = [fit(RIDGE, self.X_k, self.y_k), fit(RIDGE, self.X_k, self.y_k)]
        matrix = build_prediction_matrix(learners, self.X_l, self.y_l)
        np.testing.assert_array_equal(matrix.rows[:, 0], matrix.rows[:, 1])
        self.assertEqual(matrix.learner_names, ("ridge", "ridge_2"))

    def test_columns_follow_roster(self):
        learners = [fit(KNN, self.X_k, self.y_k), fit(RIDGE, self.X_k, self.y_k)]
        matrix = build_prediction_matrix(learners, self.X_l, self.y_l)
        for m, learner in enumerate(learners):
            np.testing.assert_array_equal(matrix.rows[:, m], learner.predict(self.X_l))
        np.testing.assert_array_equal(matrix.responses, self.y_l)

    def test_empty_roster(self):
        with self.assertRaises(ValueError):
            build_prediction_matrix([], self.X_l, self.y_l)


if __name__ == "__main__":
    unittest.main()
