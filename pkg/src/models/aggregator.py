import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import NamedTuple, Optional, Sequence, Tuple

import numpy as np
from scipy.spatial.distance import cdist, pdist, squareform

from src.models.errors import DataError
from src.models.kernel import (
    BandwidthParam,
    DistanceSample,
    KernelFamily,
    KernelSpec,
    Parametrization,
    kernel_weight,
)

logger = logging.getLogger(__name__)


class ZeroMassFallback(Enum):
    ZERO = "zero"
    TRAIN_MEAN = "train_mean"


class AggregationMethod(Enum):
    CONSENSUAL = "consensual"
    COBRA = "cobra"
    KERNELCOBRA = "kernelcobra"


def _finite_matrix(values, name: str) -> np.ndarray:
    array = np.array(values, dtype=float)
    if array.ndim != 2:
        raise DataError(f"{name} must be a 2-D matrix, got {array.ndim} dimension(s)")
    if not np.all(np.isfinite(array)):
        raise DataError(f"{name} contains non-finite entries")
    return array


@dataclass(frozen=True)
class PredictionMatrix:
    """Base-learner predictions on D_l (one row per point) with the responses."""

    rows: np.ndarray
    responses: np.ndarray
    learner_names: Tuple[str, ...] = ()

    def __post_init__(self):
        rows = _finite_matrix(self.rows, "prediction rows")
        responses = np.array(self.responses, dtype=float).reshape(-1)
        if rows.shape[0] < 1 or rows.shape[1] < 1:
            raise DataError("prediction matrix needs at least one row and one learner")
        if responses.shape[0] != rows.shape[0]:
            raise DataError(
                f"responses length {responses.shape[0]} does not match "
                f"{rows.shape[0]} prediction rows"
            )
        if not np.all(np.isfinite(responses)):
            raise DataError("responses contain non-finite entries")
        names = tuple(str(name) for name in self.learner_names)
        if not names:
            names = tuple(f"learner_{m + 1}" for m in range(rows.shape[1]))
        if len(names) != rows.shape[1]:
            raise DataError(
                f"{len(names)} learner names for {rows.shape[1]} prediction columns"
            )
        rows.setflags(write=False)
        responses.setflags(write=False)
        object.__setattr__(self, "rows", rows)
        object.__setattr__(self, "responses", responses)
        object.__setattr__(self, "learner_names", names)

    @property
    def n_rows(self) -> int:
        return self.rows.shape[0]

    @property
    def n_learners(self) -> int:
        return self.rows.shape[1]

    def subset(self, indices: Sequence[int]) -> "PredictionMatrix":
        indices = np.asarray(indices, dtype=int)
        return PredictionMatrix(
            rows=self.rows[indices],
            responses=self.responses[indices],
            learner_names=self.learner_names,
        )


@dataclass(frozen=True)
class NormalizationParams:
    """Column-wise min/max affine map onto [0, 1]."""

    per_column_min: np.ndarray
    per_column_max: np.ndarray

    def __post_init__(self):
        lo = np.array(self.per_column_min, dtype=float).reshape(-1)
        hi = np.array(self.per_column_max, dtype=float).reshape(-1)
        if lo.shape != hi.shape:
            raise ValueError("normalization min and max must have the same length")
        if not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi))):
            raise ValueError("normalization parameters must be finite")
        if np.any(lo > hi):
            raise ValueError("normalization min must not exceed max")
        lo.setflags(write=False)
        hi.setflags(write=False)
        object.__setattr__(self, "per_column_min", lo)
        object.__setattr__(self, "per_column_max", hi)

    def transform(self, values) -> np.ndarray:
        """Map values column-wise; degenerate columns map to 0, nothing is clipped."""
        x = np.asarray(values, dtype=float)
        if x.shape[-1] != self.per_column_min.shape[0]:
            raise DataError(
                f"expected {self.per_column_min.shape[0]} prediction columns, "
                f"got {x.shape[-1]}"
            )
        span = self.per_column_max - self.per_column_min
        degenerate = span == 0
        safe_span = np.where(degenerate, 1.0, span)
        out = (x - self.per_column_min) / safe_span
        return np.where(degenerate, 0.0, out)


def fit_normalization(rows) -> NormalizationParams:
    """Fit column-wise min/max over the prediction rows of D_l."""
    matrix = _finite_matrix(rows, "rows")
    if matrix.shape[0] < 1:
        raise DataError("normalization needs at least one row")
    return NormalizationParams(
        per_column_min=matrix.min(axis=0), per_column_max=matrix.max(axis=0)
    )


@dataclass(frozen=True)
class DistanceCache:
    """
    Pairwise distances between normalized prediction rows.

    The symmetric form is l x l (training rows against themselves); the cross
    form is q x l (query rows against training rows).
    """

    sq_euclid: np.ndarray
    chebyshev: Optional[np.ndarray] = None
    is_cross: bool = False

    def row(self, query_index: int) -> DistanceSample:
        cheb = None if self.chebyshev is None else self.chebyshev[query_index]
        return DistanceSample(self.sq_euclid[query_index], cheb)

    def block(self, query_indices, train_indices) -> DistanceSample:
        """Rectangular slice, e.g. a validation fold against its training folds."""
        selector = np.ix_(np.asarray(query_indices), np.asarray(train_indices))
        cheb = None if self.chebyshev is None else self.chebyshev[selector]
        return DistanceSample(self.sq_euclid[selector], cheb)

    def full(self) -> DistanceSample:
        return DistanceSample(self.sq_euclid, self.chebyshev)


def build_distance_cache(
    rows, queries=None, need_chebyshev: bool = False
) -> DistanceCache:
    """
    Precompute squared Euclidean (and optionally Chebyshev) distances.

    Without queries the symmetric l x l matrices are built from the condensed
    upper triangle and mirrored, so the diagonal is exactly zero.
    """
    train = _finite_matrix(rows, "rows")
    if queries is None:
        sq = squareform(pdist(train, "sqeuclidean"))
        cheb = squareform(pdist(train, "chebyshev")) if need_chebyshev else None
        return DistanceCache(sq_euclid=sq, chebyshev=cheb, is_cross=False)

    query = _finite_matrix(queries, "queries")
    if query.shape[1] != train.shape[1]:
        raise DataError(
            f"queries have {query.shape[1]} columns, training rows have {train.shape[1]}"
        )
    sq = cdist(query, train, "sqeuclidean")
    cheb = cdist(query, train, "chebyshev") if need_chebyshev else None
    return DistanceCache(sq_euclid=sq, chebyshev=cheb, is_cross=True)


@dataclass(frozen=True)
class AggregatorModel:
    """Fitted aggregation: the prediction memory of D_l plus kernel and bandwidth."""

    predictions: PredictionMatrix
    norm: NormalizationParams
    kernel: KernelSpec
    bandwidth: BandwidthParam
    zero_mass_fallback: ZeroMassFallback = ZeroMassFallback.ZERO
    method: AggregationMethod = AggregationMethod.CONSENSUAL
    alpha: Optional[float] = None
    normalized_rows: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.norm.per_column_min.shape[0] != self.predictions.n_learners:
            raise ValueError("normalization does not match the prediction matrix")
        if self.method is AggregationMethod.CONSENSUAL:
            _check_param(self.kernel, self.bandwidth)
        elif self.method is AggregationMethod.COBRA:
            if self.alpha is None:
                raise ValueError("cobra aggregation requires alpha")
            _required_agreements(self.alpha, self.predictions.n_learners)
        elif self.kernel.family is not KernelFamily.GAUSSIAN:
            raise ValueError("kernelcobra aggregation uses the gauss kernel")
        rows = self.norm.transform(self.predictions.rows)
        rows.setflags(write=False)
        object.__setattr__(self, "normalized_rows", rows)

    @classmethod
    def fit(
        cls,
        predictions: PredictionMatrix,
        kernel: KernelSpec,
        bandwidth: BandwidthParam,
        zero_mass_fallback: ZeroMassFallback = ZeroMassFallback.ZERO,
        method: AggregationMethod = AggregationMethod.CONSENSUAL,
        alpha: Optional[float] = None,
    ) -> "AggregatorModel":
        return cls(
            predictions=predictions,
            norm=fit_normalization(predictions.rows),
            kernel=kernel,
            bandwidth=bandwidth,
            zero_mass_fallback=zero_mass_fallback,
            method=method,
            alpha=alpha,
        )


class PredictionResult(NamedTuple):
    values: np.ndarray
    zero_mass: np.ndarray


def _check_param(kernel: KernelSpec, param: BandwidthParam):
    if param.parametrization is Parametrization.INVERSE_SCALE and kernel.is_compact:
        raise ValueError(
            f"InverseScale parametrization is not valid for {kernel.family.value}"
        )


def _required_agreements(alpha: float, n_learners: int) -> int:
    """Number of coordinates that must agree, alpha*M, validated on {1/M,...,1}."""
    scaled = alpha * n_learners
    required = int(round(scaled))
    if abs(scaled - required) > 1e-9 or required < 1 or required > n_learners:
        raise ValueError(
            f"alpha must be one of 1/{n_learners}, 2/{n_learners}, ..., 1; got {alpha}"
        )
    return required


_GAUSS = KernelSpec(KernelFamily.GAUSSIAN)


def mass_matrix(
    method: AggregationMethod,
    train_rows: np.ndarray,
    query_rows: np.ndarray,
    kernel: Optional[KernelSpec] = None,
    param: Optional[BandwidthParam] = None,
    alpha: Optional[float] = None,
    cache: Optional[DistanceCache] = None,
) -> np.ndarray:
    """
    Unnormalized q x l weight masses for one of the aggregation methods.

    Consensual masses come from the distance cache (built here when not given);
    the COBRA and KernelCobra masses need per-coordinate differences and are
    recomputed from the rows every time.
    """
    if method is AggregationMethod.CONSENSUAL:
        if cache is None:
            cache = build_distance_cache(
                train_rows, query_rows, need_chebyshev=kernel.needs_chebyshev
            )
        return np.asarray(kernel_weight(kernel, param, cache.full()), dtype=float)

    diffs = np.abs(query_rows[:, None, :] - train_rows[None, :, :])
    if method is AggregationMethod.COBRA:
        required = _required_agreements(alpha, train_rows.shape[1])
        agreements = np.sum(diffs < param.h, axis=2)
        return np.where(agreements >= required, 1.0, 0.0)

    gauss = kernel if kernel is not None else _GAUSS
    per_coordinate = kernel_weight(gauss, param, DistanceSample(diffs * diffs))
    return np.sum(per_coordinate, axis=2)


def normalize_masses(masses: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Row-normalize masses with the 0/0 = 0 convention; returns (weights, zero_mass)."""
    masses = np.atleast_2d(masses)
    totals = masses.sum(axis=1)
    zero_mass = totals == 0
    safe = np.where(zero_mass, 1.0, totals)
    weights = masses / safe[:, None]
    weights[zero_mass] = 0.0
    return weights, zero_mass


def combine(
    masses: np.ndarray, responses: np.ndarray, fallback: ZeroMassFallback
) -> PredictionResult:
    """Weighted average of responses; zero-mass rows take the fallback value."""
    weights, zero_mass = normalize_masses(masses)
    values = np.sum(weights * responses[None, :], axis=1)
    if fallback is ZeroMassFallback.TRAIN_MEAN:
        values = np.where(zero_mass, float(np.mean(responses)), values)
    return PredictionResult(values=values, zero_mass=zero_mass)


def consensual_weights(
    model: AggregatorModel, cache: DistanceCache, query_index: int
) -> np.ndarray:
    """
    Kernel weights of the training rows for one query of the cache.

    All-zero weights mean the query has zero kernel mass.
    """
    _check_param(model.kernel, model.bandwidth)
    masses = kernel_weight(model.kernel, model.bandwidth, cache.row(query_index))
    weights, _ = normalize_masses(np.asarray(masses, dtype=float))
    return weights[0]


def cobra_weights(
    model: AggregatorModel, h: float, alpha: float, query
) -> np.ndarray:
    """Classical COBRA weights: uniform over points agreeing on at least alpha*M coordinates."""
    param = BandwidthParam(h)
    query_rows = model.norm.transform(np.atleast_2d(np.asarray(query, dtype=float)))
    masses = mass_matrix(
        AggregationMethod.COBRA, model.normalized_rows, query_rows, param=param, alpha=alpha
    )
    weights, _ = normalize_masses(masses)
    return weights[0]


def kernelcobra_weights(
    model: AggregatorModel,
    h: float,
    query,
    parametrization: Parametrization = Parametrization.SCALE,
) -> np.ndarray:
    """KernelCobra weights: univariate Gaussian kernels summed over the coordinates."""
    param = BandwidthParam(h, parametrization)
    kernel = model.kernel if model.kernel.family is KernelFamily.GAUSSIAN else _GAUSS
    query_rows = model.norm.transform(np.atleast_2d(np.asarray(query, dtype=float)))
    masses = mass_matrix(
        AggregationMethod.KERNELCOBRA,
        model.normalized_rows,
        query_rows,
        kernel=kernel,
        param=param,
    )
    weights, _ = normalize_masses(masses)
    return weights[0]


def predict(model: AggregatorModel, queries) -> PredictionResult:
    """
    Aggregate predictions for a q x M batch of base-learner predictions.

    Raises:
        DataError: column-count mismatch or non-finite queries
    """
    query = _finite_matrix(np.atleast_2d(queries), "queries")
    if query.shape[1] != model.predictions.n_learners:
        raise DataError(
            f"queries have {query.shape[1]} columns, model expects "
            f"{model.predictions.n_learners}"
        )
    query_rows = model.norm.transform(query)
    cache = None
    if model.method is AggregationMethod.CONSENSUAL:
        cache = build_distance_cache(
            model.normalized_rows, query_rows, need_chebyshev=model.kernel.needs_chebyshev
        )
    masses = mass_matrix(
        model.method,
        model.normalized_rows,
        query_rows,
        kernel=model.kernel,
        param=model.bandwidth,
        alpha=model.alpha,
        cache=cache,
    )
    result = combine(masses, model.predictions.responses, model.zero_mass_fallback)
    n_zero = int(result.zero_mass.sum())
    if n_zero:
        logger.debug("%d of %d queries have zero kernel mass", n_zero, query.shape[0])
    return result
