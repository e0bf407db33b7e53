import logging
from dataclasses import dataclass, replace
from enum import Enum
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy import linalg
from scipy.spatial.distance import cdist

from src.models.aggregator import PredictionMatrix
from src.models.errors import DataError

logger = logging.getLogger(__name__)


class LearnerKind(Enum):
    KNN = "knn"
    RIDGE = "ridge"
    TREE = "tree"


# token key -> LearnerSpec field
_TOKEN_FIELDS: Dict[LearnerKind, Dict[str, str]] = {
    LearnerKind.KNN: {"k": "k"},
    LearnerKind.RIDGE: {"lambda": "ridge_lambda", "ridge_lambda": "ridge_lambda"},
    LearnerKind.TREE: {"max_depth": "max_depth", "min_leaf": "min_leaf"},
}


@dataclass(frozen=True)
class LearnerSpec:
    """Kind and hyperparameters of one base regressor."""

    kind: LearnerKind
    k: int = 5
    ridge_lambda: float = 1.0
    max_depth: int = 8
    min_leaf: int = 5

    def __post_init__(self):
        if not isinstance(self.kind, LearnerKind):
            raise ValueError(f"kind must be a LearnerKind, got {self.kind!r}")
        if self.k < 1:
            raise ValueError("k must be at least 1")
        if not np.isfinite(self.ridge_lambda) or self.ridge_lambda < 0:
            raise ValueError("ridge_lambda must be nonnegative")
        if self.max_depth < 1:
            raise ValueError("max_depth must be at least 1")
        if self.min_leaf < 1:
            raise ValueError("min_leaf must be at least 1")

    @property
    def name(self) -> str:
        return self.kind.value

    @classmethod
    def from_token(cls, token: str) -> "LearnerSpec":
        """Parse ``knn:k=5``, ``ridge:lambda=1.0`` or ``tree:max_depth=8:min_leaf=5``."""
        parts = [part.strip() for part in token.strip().split(":")]
        try:
            kind = LearnerKind(parts[0].lower())
        except ValueError:
            raise ValueError(f"Unknown learner '{parts[0]}', expected knn, ridge or tree")
        values: Dict[str, Union[int, float]] = {}
        for part in parts[1:]:
            key, sep, raw = part.partition("=")
            field_name = _TOKEN_FIELDS[kind].get(key.strip().lower())
            if not sep or field_name is None:
                raise ValueError(f"Invalid parameter '{part}' for learner {kind.value}")
            try:
                values[field_name] = (
                    float(raw) if field_name == "ridge_lambda" else int(raw)
                )
            except ValueError:
                raise ValueError(f"Learner parameter {key} has invalid value '{raw}'")
        return cls(kind=kind, **values)

    def to_token(self) -> str:
        if self.kind is LearnerKind.KNN:
            return f"knn:k={self.k}"
        if self.kind is LearnerKind.RIDGE:
            return f"ridge:lambda={self.ridge_lambda!r}"
        return f"tree:max_depth={self.max_depth}:min_leaf={self.min_leaf}"


def parse_roster(text: str) -> List[LearnerSpec]:
    """Parse a comma-separated roster, e.g. ``knn:k=5,ridge:lambda=1.0,tree``."""
    specs = [LearnerSpec.from_token(token) for token in text.split(",") if token.strip()]
    if not specs:
        raise ValueError("learner roster is empty")
    return specs


@dataclass(frozen=True)
class KNNState:
    X: np.ndarray
    y: np.ndarray
    k: int


@dataclass(frozen=True)
class RidgeState:
    coef: np.ndarray
    intercept: float
    # penalized coefficients in the standardized feature space
    standardized_coef: np.ndarray


@dataclass(frozen=True)
class TreeState:
    """Flat node arrays; leaves have feature -1."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray


@dataclass(frozen=True)
class FittedLearner:
    spec: LearnerSpec
    state: Union[KNNState, RidgeState, TreeState]
    n_features: int

    @property
    def name(self) -> str:
        return self.spec.name

    def predict(self, X) -> np.ndarray:
        return predict(self, X)


def _check_xy(X, y) -> Tuple[np.ndarray, np.ndarray]:
    X = np.array(X, dtype=float)
    y = np.array(y, dtype=float).reshape(-1)
    if X.ndim != 2:
        raise DataError("X must be a 2-D matrix")
    if X.shape[0] < 1:
        raise DataError("at least one training point is required")
    if X.shape[0] != y.shape[0]:
        raise DataError(f"X has {X.shape[0]} rows but y has {y.shape[0]} values")
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
        raise DataError("training data contains non-finite values")
    return X, y


def fit(spec: LearnerSpec, X, y) -> FittedLearner:
    """
    Fit one base regressor on D_k.

    Args:
        spec: learner kind and hyperparameters
        X: n x d input matrix
        y: length-n responses

    Returns:
        FittedLearner with immutable state
    """
    X, y = _check_xy(X, y)
    n, d = X.shape
    if spec.kind is LearnerKind.KNN:
        if spec.k > n:
            logger.warning("knn: k=%d exceeds %d training points, using k=%d", spec.k, n, n)
            spec = replace(spec, k=n)
        state = KNNState(X=X, y=y, k=spec.k)
    elif spec.kind is LearnerKind.RIDGE:
        state = _fit_ridge(X, y, spec.ridge_lambda)
    else:
        if n < spec.min_leaf:
            raise DataError(f"tree needs at least min_leaf={spec.min_leaf} points, got {n}")
        state = _fit_tree(X, y, spec.max_depth, spec.min_leaf)
    return FittedLearner(spec=spec, state=state, n_features=d)


def predict(model: FittedLearner, X) -> np.ndarray:
    """Deterministic predictions for a q x d matrix."""
    X = np.atleast_2d(np.array(X, dtype=float))
    if X.shape[1] != model.n_features:
        raise DataError(
            f"{model.name} was fit on {model.n_features} features, got {X.shape[1]}"
        )
    state = model.state
    if isinstance(state, KNNState):
        distances = cdist(X, state.X, "sqeuclidean")
        # stable sort: equal distances keep the lowest training index first
        neighbours = np.argsort(distances, axis=1, kind="stable")[:, : state.k]
        return state.y[neighbours].mean(axis=1)
    if isinstance(state, RidgeState):
        return X @ state.coef + state.intercept
    return _predict_tree(state, X)


def _fit_ridge(X: np.ndarray, y: np.ndarray, ridge_lambda: float) -> RidgeState:
    """Ridge on standardized features with an unpenalized intercept."""
    mean = X.mean(axis=0)
    scale = X.std(axis=0)
    scale = np.where(scale > 0, scale, 1.0)
    Z = (X - mean) / scale
    y_mean = float(y.mean())
    target = y - y_mean
    gram = Z.T @ Z
    rhs = Z.T @ target
    if ridge_lambda > 0:
        beta = linalg.solve(gram + ridge_lambda * np.eye(gram.shape[0]), rhs, assume_a="pos")
    else:
        beta = linalg.lstsq(Z, target)[0]
    coef = beta / scale
    intercept = y_mean - float(mean @ coef)
    return RidgeState(coef=coef, intercept=intercept, standardized_coef=beta)


def _best_split(
    X: np.ndarray, y: np.ndarray, min_leaf: int
) -> Tuple[Optional[int], float, float]:
    """
    Exhaustive variance-reduction split over midpoints of sorted unique values.

    Returns (feature, threshold, sse); feature is None when no admissible split
    lowers the parent's sum of squared errors.
    """
    n = y.shape[0]
    parent_sse = float(np.sum((y - y.mean()) ** 2))
    best_feature: Optional[int] = None
    best_threshold = 0.0
    best_sse = parent_sse
    if n < 2:
        return best_feature, best_threshold, best_sse
    counts = np.arange(1, n)
    total = float(np.sum(y))
    total_sq = float(np.sum(y * y))
    for feature in range(X.shape[1]):
        order = np.argsort(X[:, feature], kind="stable")
        xs = X[order, feature]
        ys = y[order]
        cum = np.cumsum(ys)[:-1]
        cum_sq = np.cumsum(ys * ys)[:-1]
        left_sse = cum_sq - cum * cum / counts
        right_sum = total - cum
        right_sq = total_sq - cum_sq
        right_sse = right_sq - right_sum * right_sum / (n - counts)
        sse = left_sse + right_sse
        valid = (xs[1:] != xs[:-1]) & (counts >= min_leaf) & (n - counts >= min_leaf)
        if not np.any(valid):
            continue
        candidates = np.where(valid, sse, np.inf)
        position = int(np.argmin(candidates))
        if candidates[position] < best_sse - 1e-12 * max(1.0, parent_sse):
            best_sse = float(candidates[position])
            best_feature = feature
            best_threshold = float((xs[position] + xs[position + 1]) / 2.0)
    return best_feature, best_threshold, best_sse


def _fit_tree(X: np.ndarray, y: np.ndarray, max_depth: int, min_leaf: int) -> TreeState:
    feature: List[int] = []
    threshold: List[float] = []
    left: List[int] = []
    right: List[int] = []
    value: List[float] = []

    def grow(indices: np.ndarray, depth: int) -> int:
        node = len(feature)
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        value.append(float(y[indices].mean()))

        ys = y[indices]
        if depth >= max_depth or indices.size < 2 * min_leaf or np.all(ys == ys[0]):
            return node
        split_feature, split_threshold, _ = _best_split(X[indices], ys, min_leaf)
        if split_feature is None:
            return node

        goes_left = X[indices, split_feature] <= split_threshold
        feature[node] = split_feature
        threshold[node] = split_threshold
        left[node] = grow(indices[goes_left], depth + 1)
        right[node] = grow(indices[~goes_left], depth + 1)
        return node

    grow(np.arange(X.shape[0]), 0)
    return TreeState(
        feature=np.array(feature, dtype=int),
        threshold=np.array(threshold, dtype=float),
        left=np.array(left, dtype=int),
        right=np.array(right, dtype=int),
        value=np.array(value, dtype=float),
    )


def _predict_tree(state: TreeState, X: np.ndarray) -> np.ndarray:
    nodes = np.zeros(X.shape[0], dtype=int)
    active = state.feature[nodes] >= 0
    while np.any(active):
        current = nodes[active]
        rows = np.flatnonzero(active)
        goes_left = X[rows, state.feature[current]] <= state.threshold[current]
        nodes[rows] = np.where(goes_left, state.left[current], state.right[current])
        active = state.feature[nodes] >= 0
    return state.value[nodes]


def _column_names(learners: Sequence[FittedLearner]) -> Tuple[str, ...]:
    names: List[str] = []
    seen: Dict[str, int] = {}
    for learner in learners:
        base = learner.name
        seen[base] = seen.get(base, 0) + 1
        names.append(base if seen[base] == 1 else f"{base}_{seen[base]}")
    return tuple(names)


def build_prediction_matrix(
    learners: Sequence[FittedLearner], X, y
) -> PredictionMatrix:
    """Column m holds learner m's predictions on X, in roster order."""
    if not learners:
        raise ValueError("learner roster is empty")
    X, y = _check_xy(X, y)
    columns = [learner.predict(X) for learner in learners]
    return PredictionMatrix(
        rows=np.column_stack(columns),
        responses=y,
        learner_names=_column_names(learners),
    )


def predict_roster(learners: Sequence[FittedLearner], X) -> np.ndarray:
    """q x M matrix of roster predictions for query inputs."""
    return np.column_stack([learner.predict(X) for learner in learners])
