import logging
import math
from dataclasses import dataclass
from enum import Enum
from typing import Callable, Dict, NamedTuple, Optional, Tuple

import numpy as np
from scipy import linalg

from src.models.errors import DataError

logger = logging.getLogger(__name__)

MAX_CORRELATED_DIMENSION = 5000

# Model 8 divides by X_{2j-1}; magnitudes below this are clamped.
MODEL8_DIVISOR_FLOOR = 1e-12


class InputDesign(Enum):
    UNCORRELATED = "uncorrelated"
    CORRELATED = "correlated"


class ModelDefaults(NamedTuple):
    n: int
    d: int
    noise_sd: float
    required_d: int


MODEL_DEFAULTS: Dict[int, ModelDefaults] = {
    1: ModelDefaults(800, 50, 0.0, 2),
    2: ModelDefaults(600, 100, 0.5, 10),
    3: ModelDefaults(600, 100, 0.5, 4),
    4: ModelDefaults(600, 100, 0.5, 4),
    5: ModelDefaults(700, 20, 0.05, 14),
    6: ModelDefaults(500, 20, 0.25, 20),
    7: ModelDefaults(600, 30, 0.25, 30),
    8: ModelDefaults(700, 50, 0.75, 50),
    9: ModelDefaults(600, 1500, 1.0, 1),
    10: ModelDefaults(700, 1500, 1.25, 1),
}


def required_dimension(model_id: int) -> int:
    """Largest input index the model's formula references."""
    return _defaults(model_id).required_d


def _defaults(model_id: int) -> ModelDefaults:
    try:
        return MODEL_DEFAULTS[int(model_id)]
    except (KeyError, ValueError, TypeError):
        raise ValueError(f"model_id must be between 1 and 10, got {model_id!r}")


@dataclass(frozen=True)
class SimDesign:
    """One simulated dataset: model, input design, size and seed."""

    model_id: int
    design: InputDesign = InputDesign.UNCORRELATED
    n: Optional[int] = None
    d: Optional[int] = None
    seed: int = 0

    def __post_init__(self):
        defaults = _defaults(self.model_id)
        if not isinstance(self.design, InputDesign):
            raise ValueError(f"design must be an InputDesign, got {self.design!r}")
        if self.n is None:
            object.__setattr__(self, "n", defaults.n)
        if self.d is None:
            object.__setattr__(self, "d", defaults.d)
        if self.n < 1:
            raise ValueError("n must be at least 1")
        if self.d < defaults.required_d:
            raise ValueError(
                f"model {self.model_id} needs d >= {defaults.required_d}, got {self.d}"
            )
        if self.seed < 0:
            raise ValueError("seed must be nonnegative")


def _streams(seed: int) -> Tuple[np.random.Generator, np.random.Generator]:
    """Independent (inputs, noise) generators derived from one seed."""
    input_seq, noise_seq = np.random.SeedSequence(seed).spawn(2)
    return np.random.default_rng(input_seq), np.random.default_rng(noise_seq)


def correlated_covariance(d: int) -> np.ndarray:
    """Sigma with entries 2^-|i-j|."""
    if d < 1:
        raise ValueError("d must be at least 1")
    return linalg.toeplitz(2.0 ** -np.arange(d, dtype=float))


def covariance_factor(d: int) -> np.ndarray:
    """Lower-triangular L with L @ L.T == Sigma."""
    if d > MAX_CORRELATED_DIMENSION:
        raise ValueError(
            f"correlated design supports d <= {MAX_CORRELATED_DIMENSION} "
            f"(the d x d factor would not fit in memory); got d={d}. "
            f"Use the uncorrelated design or a smaller d."
        )
    return linalg.cholesky(correlated_covariance(d), lower=True)


def _draw_inputs(design: SimDesign, rng: np.random.Generator) -> np.ndarray:
    if design.design is InputDesign.UNCORRELATED:
        return rng.uniform(-1.0, 1.0, size=(design.n, design.d))
    factor = covariance_factor(design.d)
    z = rng.standard_normal(size=(design.n, design.d))
    return z @ factor.T


def gen_inputs(design: SimDesign) -> np.ndarray:
    """n x d input matrix for the design."""
    return _draw_inputs(design, _streams(design.seed)[0])


def model9_coefficients(d: int) -> np.ndarray:
    j = np.arange(1, d + 1, dtype=float)
    return 2.0 ** (-(d + 1 - j) / 50.0) + 3.0 ** (-j / 50.0)


def model10_coefficients(d: int) -> np.ndarray:
    j = np.arange(1, d + 1, dtype=float)
    return np.exp(-j / 30.0) / (1.0 - np.exp(-(d + 1 - j) / 30.0))


def _model1(X: np.ndarray) -> np.ndarray:
    return X[:, 0] ** 2 + np.exp(-X[:, 1] ** 2)


def _model2(X: np.ndarray) -> np.ndarray:
    x = lambda j: X[:, j - 1]  # noqa: E731
    return x(1) * x(2) + x(3) ** 2 - x(4) * x(7) + x(8) * x(10) - x(6) ** 2


def _model3(X: np.ndarray) -> np.ndarray:
    return -np.sin(2.0 * X[:, 0]) + X[:, 1] ** 2 + X[:, 2] - np.exp(-X[:, 3])


def _model4(X: np.ndarray) -> np.ndarray:
    s3 = np.sin(2.0 * np.pi * X[:, 2])
    s4 = np.sin(2.0 * np.pi * X[:, 3])
    c4 = np.cos(2.0 * np.pi * X[:, 3])
    return (
        X[:, 0]
        + (2.0 * X[:, 1] - 1.0) ** 2
        + s3 / (2.0 - s3)
        + s4
        + 2.0 * c4
        + 3.0 * s4 ** 2
        + 4.0 * c4 ** 2
    )


def _model5(X: np.ndarray) -> np.ndarray:
    x = lambda j: X[:, j - 1]  # noqa: E731
    return (
        (x(1) > 0).astype(float)
        + x(2) ** 3
        + (x(4) + x(6) - x(8) - x(9) > 1.0 + x(14)).astype(float)
        + np.exp(-x(2) ** 2)
    )


def _model6(X: np.ndarray) -> np.ndarray:
    total = sum(X[:, j + 5 * k - 1] for j in range(1, 6) for k in range(4))
    product = np.prod(X[:, [4 * k - 1 for k in range(1, 6)]], axis=1)
    return total * np.cos(product * np.pi / 2.0)


def _model7(X: np.ndarray) -> np.ndarray:
    first = X[:, :15]
    second = X[:, 15:30]
    return np.sum(np.exp(0.25 - first ** 2) * np.sin(np.pi * second), axis=1)


def _model8(X: np.ndarray) -> np.ndarray:
    odd = X[:, 0:50:2]
    even = X[:, 1:50:2]
    floor = np.where(odd < 0, -MODEL8_DIVISOR_FLOOR, MODEL8_DIVISOR_FLOOR)
    divisor = np.where(np.abs(odd) < MODEL8_DIVISOR_FLOOR, floor, odd)
    inner = np.sum(even * np.sin(np.pi / divisor), axis=1)
    scale = np.exp(np.sum(X[:, 9:50:10] ** 2, axis=1) / 10.0)
    return inner * scale


def _model9(X: np.ndarray) -> np.ndarray:
    beta = model9_coefficients(X.shape[1])
    terms = X * np.log(np.abs(5.0 + X)) / (1.0 + np.exp(X))
    return np.pi + terms @ beta


def _model10(X: np.ndarray) -> np.ndarray:
    beta = model10_coefficients(X.shape[1])
    terms = X * np.exp(-X) / (1.0 - np.log(np.abs(10.0 - X)))
    return np.e + terms @ beta


_REGRESSION_FUNCTIONS: Dict[int, Callable[[np.ndarray], np.ndarray]] = {
    1: _model1,
    2: _model2,
    3: _model3,
    4: _model4,
    5: _model5,
    6: _model6,
    7: _model7,
    8: _model8,
    9: _model9,
    10: _model10,
}


def _noise_free(model_id: int, X) -> np.ndarray:
    defaults = _defaults(model_id)
    X = np.asarray(X, dtype=float)
    if X.ndim != 2:
        raise DataError("X must be a 2-D matrix")
    if X.shape[1] < defaults.required_d:
        raise ValueError(
            f"model {model_id} references X_{defaults.required_d}, "
            f"but X has only {X.shape[1]} columns"
        )
    return _REGRESSION_FUNCTIONS[int(model_id)](X)


def model_response(
    model_id: int, X, seed: int = 0, noise: bool = True
) -> np.ndarray:
    """
    Responses of simulation model 1..10 at the rows of X.

    Noise N(0, s) uses s as the standard deviation and is drawn from the noise
    stream of ``seed``; Model 1 is noiseless. ``noise=False`` returns the
    regression function itself.
    """
    y = _noise_free(model_id, X)
    sd = MODEL_DEFAULTS[int(model_id)].noise_sd
    if noise and sd > 0:
        y = y + _streams(seed)[1].normal(0.0, sd, size=y.shape[0])
    return y


def generate(design: SimDesign) -> Tuple[np.ndarray, np.ndarray]:
    """(X, y) fully determined by (model_id, design, n, d, seed)."""
    input_rng, noise_rng = _streams(design.seed)
    X = _draw_inputs(design, input_rng)
    y = _noise_free(design.model_id, X)
    sd = MODEL_DEFAULTS[design.model_id].noise_sd
    if sd > 0:
        y = y + noise_rng.normal(0.0, sd, size=y.shape[0])
    logger.debug(
        "generated model %d (%s) n=%d d=%d seed=%d",
        design.model_id,
        design.design.value,
        design.n,
        design.d,
        design.seed,
    )
    return X, y


@dataclass(frozen=True)
class SplitPlan:
    test_fraction: float = 0.2
    dk_fraction_of_train: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.test_fraction < 1:
            raise ValueError("test_fraction must lie in (0, 1)")
        if not 0 < self.dk_fraction_of_train < 1:
            raise ValueError("dk_fraction_of_train must lie in (0, 1)")

    def sizes(self, n: int) -> Tuple[int, int, int]:
        """(|D_k|, |D_l|, |D_test|) for n points."""
        n_test = int(math.floor(self.test_fraction * n + 0.5))
        n_train = n - n_test
        k = int(math.ceil(n_train * self.dk_fraction_of_train))
        return k, n_train - k, n_test


class DataSplit(NamedTuple):
    """Index arrays of the three disjoint parts."""

    dk: np.ndarray
    dl: np.ndarray
    test: np.ndarray


def split_indices(n: int, plan: SplitPlan) -> DataSplit:
    if n < 10:
        raise DataError(f"splitting needs at least 10 points, got {n}")
    k, ell, n_test = plan.sizes(n)
    if min(k, ell, n_test) < 1:
        raise DataError(f"split of {n} points leaves an empty part ({k}/{ell}/{n_test})")
    order = np.random.default_rng(plan.seed).permutation(n)
    return DataSplit(dk=order[:k], dl=order[k : k + ell], test=order[k + ell :])


Part = Tuple[np.ndarray, np.ndarray]


def split_data(X, y, plan: SplitPlan = SplitPlan()) -> Tuple[Part, Part, Part]:
    """Seeded shuffle into (D_k, D_l, D_test), each an (X, y) pair."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float).reshape(-1)
    if X.shape[0] != y.shape[0]:
        raise DataError(f"X has {X.shape[0]} rows but y has {y.shape[0]} values")
    parts = split_indices(X.shape[0], plan)
    return (
        (X[parts.dk], y[parts.dk]),
        (X[parts.dl], y[parts.dl]),
        (X[parts.test], y[parts.test]),
    )


def rmse(predictions, truths) -> float:
    predictions = np.asarray(predictions, dtype=float).reshape(-1)
    truths = np.asarray(truths, dtype=float).reshape(-1)
    if predictions.shape != truths.shape:
        raise ValueError(
            f"{predictions.shape[0]} predictions for {truths.shape[0]} truths"
        )
    if predictions.size == 0:
        raise ValueError("rmse needs at least one value")
    residuals = predictions - truths
    return float(np.sqrt(np.mean(residuals * residuals)))
