import logging
import math
from dataclasses import dataclass, field
from typing import List, NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np

from src.models.aggregator import (
    AggregationMethod,
    AggregatorModel,
    PredictionMatrix,
    ZeroMassFallback,
    build_distance_cache,
    fit_normalization,
    predict,
)
from src.models.errors import DataError, NumericError
from src.models.kernel import (
    BandwidthParam,
    KernelFamily,
    KernelSpec,
    Parametrization,
    kernel_weight,
    kernel_weight_dh,
)

logger = logging.getLogger(__name__)

MAX_NEGATIVE_RETRIES = 50

# Consecutive small-gradient iterations before speed_scale is applied.
FLAT_PATIENCE = 5


@dataclass(frozen=True)
class CVPlan:
    """Assignment of the rows of D_l to folds 1..kappa."""

    kappa: int
    fold_assignment: np.ndarray
    seed: int = 0

    def __post_init__(self):
        if self.kappa < 2:
            raise ValueError("kappa must be at least 2")
        folds = np.array(self.fold_assignment, dtype=int).reshape(-1)
        if folds.size and (folds.min() < 1 or folds.max() > self.kappa):
            raise ValueError(f"fold ids must lie in 1..{self.kappa}")
        sizes = np.bincount(folds, minlength=self.kappa + 1)[1:]
        if np.any(sizes == 0):
            raise ValueError("every fold must be non-empty")
        if sizes.max() - sizes.min() > 1:
            raise ValueError("fold sizes must differ by at most one")
        folds.setflags(write=False)
        object.__setattr__(self, "fold_assignment", folds)

    @classmethod
    def create(cls, n_rows: int, kappa: int = 5, seed: int = 0) -> "CVPlan":
        """Seeded shuffle followed by round-robin assignment."""
        if n_rows < kappa:
            raise ValueError(f"cannot split {n_rows} rows into {kappa} non-empty folds")
        order = np.random.default_rng(seed).permutation(n_rows)
        folds = np.empty(n_rows, dtype=int)
        folds[order] = np.arange(n_rows) % kappa + 1
        return cls(kappa=kappa, fold_assignment=folds, seed=seed)

    @property
    def n_rows(self) -> int:
        return self.fold_assignment.shape[0]

    def fold_indices(self, fold: int) -> Tuple[np.ndarray, np.ndarray]:
        """(validation indices, training indices) for fold 1..kappa."""
        return (
            np.flatnonzero(self.fold_assignment == fold),
            np.flatnonzero(self.fold_assignment != fold),
        )


@dataclass(frozen=True)
class GridConfig:
    """Uniform bandwidth grid, by default 500 points from 1e-100 to 10."""

    h_min: float = 1e-100
    h_max: float = 10.0
    count: int = 500

    def __post_init__(self):
        if not (0 < self.h_min < self.h_max) or not math.isfinite(self.h_max):
            raise ValueError("grid requires 0 < h_min < h_max")
        if self.count < 2:
            raise ValueError("grid count must be at least 2")

    def points(self) -> np.ndarray:
        return np.linspace(self.h_min, self.h_max, self.count)


@dataclass(frozen=True)
class GDConfig:
    """Settings of the gradient-descent bandwidth search."""

    h0: Optional[float] = None
    learning_rate: float = 0.01
    tolerance: float = 1e-6
    max_iter: int = 500
    lr_shrink: float = 0.5
    init_samples: int = 10
    speed_scale: Optional[float] = None
    lr_growth: float = 1.5
    init_range: Tuple[float, float] = (1e-3, 1e3)
    seed: int = 0

    def __post_init__(self):
        if self.h0 is not None and not self.h0 > 0:
            raise ValueError("h0 must be positive")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if not self.tolerance > 0:
            raise ValueError("tolerance must be positive")
        if self.max_iter < 1:
            raise ValueError("max_iter must be at least 1")
        if not 0 < self.lr_shrink < 1:
            raise ValueError("lr_shrink must lie in (0, 1)")
        if self.init_samples < 1:
            raise ValueError("init_samples must be at least 1")
        if self.speed_scale is not None and not self.speed_scale > 0:
            raise ValueError("speed_scale must be positive")
        if not self.lr_growth >= 1:
            raise ValueError("lr_growth must be at least 1")
        lo, hi = self.init_range
        if not 0 < lo < hi:
            raise ValueError("init_range must satisfy 0 < low < high")

    @property
    def adaptive(self) -> bool:
        return self.lr_growth > 1


class TraceEntry(NamedTuple):
    iteration: int
    h: float
    loss: float
    grad: float = math.nan
    learning_rate: float = math.nan
    event: str = "eval"


@dataclass
class TuningResult:
    h: float
    loss: float
    iterations: int
    trace: List[TraceEntry] = field(default_factory=list)
    converged: bool = True
    evaluations: int = 0
    parametrization: Parametrization = Parametrization.SCALE
    alpha: Optional[float] = None

    @property
    def bandwidth(self) -> BandwidthParam:
        return BandwidthParam(self.h, self.parametrization)

    @property
    def lr_shrinks(self) -> int:
        return sum(1 for entry in self.trace if entry.event == "shrink")


class _Fold(NamedTuple):
    val: np.ndarray
    train: np.ndarray
    distances: object


def ratio_gradient(
    masses: np.ndarray, dmasses: np.ndarray, responses: np.ndarray
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Per-query aggregate and its h-derivative from kernel masses.

    With S0 = sum K, S1 = sum YK, T0 = sum dK, T1 = sum Y dK the derivative is
    (T1*S0 - S1*T0) / S0^2, evaluated as (T1 - g*T0) / S0 so that S0^2 never
    underflows. Zero-mass queries get g = 0 and derivative 0.

    Returns:
        (aggregate, derivative, zero_mass) arrays of length q
    """
    s0 = masses.sum(axis=1)
    s1 = np.sum(masses * responses[None, :], axis=1)
    t0 = dmasses.sum(axis=1)
    t1 = np.sum(dmasses * responses[None, :], axis=1)
    zero = s0 == 0
    safe = np.where(zero, 1.0, s0)
    g = np.where(zero, 0.0, s1 / safe)
    dg = np.where(zero, 0.0, (t1 - g * t0) / safe)
    return g, dg, zero


class CrossValidationObjective:
    """
    kappa-fold CV error of the consensual aggregate as a function of h.

    Normalization and the l x l distance cache are computed once; each fold
    keeps its validation x training block so any h costs one kernel pass.
    """

    def __init__(
        self,
        data: PredictionMatrix,
        plan: CVPlan,
        kernel: KernelSpec,
        zero_mass_fallback: ZeroMassFallback = ZeroMassFallback.ZERO,
    ):
        if plan.n_rows != data.n_rows:
            raise DataError(
                f"fold plan covers {plan.n_rows} rows, data has {data.n_rows}"
            )
        self.data = data
        self.plan = plan
        self.kernel = kernel
        self.zero_mass_fallback = zero_mass_fallback
        self.evaluations = 0

        rows = fit_normalization(data.rows).transform(data.rows)
        cache = build_distance_cache(rows, need_chebyshev=kernel.needs_chebyshev)
        self._folds: List[_Fold] = []
        for fold in range(1, plan.kappa + 1):
            val, train = plan.fold_indices(fold)
            if train.size == 0:
                raise DataError(f"fold {fold} covers all of D_l")
            self._folds.append(_Fold(val, train, cache.block(val, train)))

    def _evaluate(self, param: BandwidthParam, with_gradient: bool) -> Tuple[float, float]:
        if with_gradient and not self.kernel.is_differentiable:
            raise ValueError(
                f"{self.kernel.family.value} kernel has no h-gradient; use grid search"
            )
        self.evaluations += 1
        responses = self.data.responses
        total = 0.0
        grad_total = 0.0
        for fold in self._folds:
            y_train = responses[fold.train]
            y_val = responses[fold.val]
            masses = np.asarray(kernel_weight(self.kernel, param, fold.distances))
            if with_gradient:
                dmasses = np.asarray(kernel_weight_dh(self.kernel, param, fold.distances))
            else:
                dmasses = np.zeros_like(masses)
            g, dg, zero = ratio_gradient(masses, dmasses, y_train)
            if self.zero_mass_fallback is ZeroMassFallback.TRAIN_MEAN:
                g = np.where(zero, float(np.mean(y_train)), g)
            residuals = g - y_val
            total += float(np.sum(residuals * residuals))
            grad_total += float(np.sum(2.0 * residuals * dg))
        return total / self.plan.kappa, grad_total / self.plan.kappa

    def loss(self, param: BandwidthParam) -> float:
        return self._evaluate(param, with_gradient=False)[0]

    def loss_and_gradient(self, param: BandwidthParam) -> Tuple[float, float]:
        return self._evaluate(param, with_gradient=True)


def cv_error(
    data: PredictionMatrix,
    plan: CVPlan,
    kernel: KernelSpec,
    param: BandwidthParam,
    zero_mass_fallback: ZeroMassFallback = ZeroMassFallback.ZERO,
) -> float:
    """kappa-fold CV loss: (1/kappa) * sum over folds of the summed squared residuals."""
    return CrossValidationObjective(data, plan, kernel, zero_mass_fallback).loss(param)


def cv_error_grad(
    data: PredictionMatrix,
    plan: CVPlan,
    kernel: KernelSpec,
    param: BandwidthParam,
    zero_mass_fallback: ZeroMassFallback = ZeroMassFallback.ZERO,
) -> float:
    """Derivative of cv_error with respect to h (gauss/exp4, InverseScale only)."""
    if param.parametrization is not Parametrization.INVERSE_SCALE:
        raise ValueError("cv_error_grad requires the InverseScale parametrization")
    objective = CrossValidationObjective(data, plan, kernel, zero_mass_fallback)
    return objective.loss_and_gradient(param)[1]


def _grid_points(grid: Union[GridConfig, Sequence[float]]) -> np.ndarray:
    if isinstance(grid, GridConfig):
        return grid.points()
    points = np.sort(np.asarray(list(grid), dtype=float))
    if points.size == 0:
        raise ValueError("grid must contain at least one bandwidth")
    if not np.all(points > 0):
        raise ValueError("grid bandwidths must be positive")
    return points


def grid_search(
    data: PredictionMatrix,
    plan: CVPlan,
    kernel: KernelSpec,
    grid: Union[GridConfig, Sequence[float]],
    parametrization: Parametrization = Parametrization.SCALE,
    zero_mass_fallback: ZeroMassFallback = ZeroMassFallback.ZERO,
) -> TuningResult:
    """Exhaustive CV scan; ties go to the smallest h."""
    objective = CrossValidationObjective(data, plan, kernel, zero_mass_fallback)
    trace: List[TraceEntry] = []
    best_h, best_loss = math.nan, math.inf
    for index, h in enumerate(_grid_points(grid)):
        loss = objective.loss(BandwidthParam(float(h), parametrization))
        trace.append(TraceEntry(index, float(h), loss, event="grid"))
        if loss < best_loss:
            best_h, best_loss = float(h), loss
    logger.info(
        "grid search (%s): h*=%.6g loss=%.6g over %d points",
        kernel.family.value,
        best_h,
        best_loss,
        len(trace),
    )
    return TuningResult(
        h=best_h,
        loss=best_loss,
        iterations=len(trace),
        trace=trace,
        converged=True,
        evaluations=objective.evaluations,
        parametrization=parametrization,
    )


def gradient_descent(
    data: PredictionMatrix,
    plan: CVPlan,
    kernel: KernelSpec,
    cfg: GDConfig = GDConfig(),
    zero_mass_fallback: ZeroMassFallback = ZeroMassFallback.ZERO,
) -> TuningResult:
    """
    Estimate h by gradient descent on the CV loss (InverseScale parametrization).

    Starts from h0 or from the lowest-loss of ``init_samples`` log-uniform
    candidates and iterates h <- h - lr * dphi/dh while |dphi/dh| > tolerance.
    A step that would make h nonpositive shrinks the learning rate and is
    retried. Returns the converged h, or the best h seen with converged=False
    once max_iter is exhausted.

    Raises:
        ValueError: kernel without an h-gradient
        NumericError: more than 50 consecutive nonpositive steps
    """
    if not kernel.is_differentiable:
        raise ValueError(
            f"{kernel.family.value} kernel has no h-gradient; use grid search"
        )
    inverse = Parametrization.INVERSE_SCALE
    objective = CrossValidationObjective(data, plan, kernel, zero_mass_fallback)
    trace: List[TraceEntry] = []

    if cfg.h0 is None:
        lo, hi = cfg.init_range
        rng = np.random.default_rng(cfg.seed)
        candidates = 10.0 ** rng.uniform(math.log10(lo), math.log10(hi), cfg.init_samples)
        best_candidate, best_candidate_loss = math.nan, math.inf
        for candidate in candidates:
            loss = objective.loss(BandwidthParam(float(candidate), inverse))
            trace.append(TraceEntry(0, float(candidate), loss, event="init"))
            if loss < best_candidate_loss:
                best_candidate, best_candidate_loss = float(candidate), loss
        h = best_candidate
    else:
        h = float(cfg.h0)

    lr = cfg.learning_rate
    loss, grad = objective.loss_and_gradient(BandwidthParam(h, inverse))
    trace.append(TraceEntry(0, h, loss, grad, lr, "start"))
    best_h, best_loss = h, loss
    converged = abs(grad) <= cfg.tolerance
    iterations = 0
    flat_run = 0

    while not converged and iterations < cfg.max_iter:
        iterations += 1
        new_h = h - lr * grad
        retries = 0
        while not (new_h > 0 and math.isfinite(new_h)):
            retries += 1
            if retries > MAX_NEGATIVE_RETRIES:
                raise NumericError(
                    f"gradient descent kept stepping to h <= 0 from h={h:.6g} "
                    f"(grad={grad:.6g}) after {MAX_NEGATIVE_RETRIES} learning-rate "
                    f"shrinks; lower the learning rate or pass h0"
                )
            lr *= cfg.lr_shrink
            trace.append(TraceEntry(iterations, h, loss, grad, lr, "shrink"))
            logger.debug("nonpositive step from h=%.6g, learning rate -> %.3g", h, lr)
            new_h = h - lr * grad

        new_loss, new_grad = objective.loss_and_gradient(BandwidthParam(new_h, inverse))
        if cfg.adaptive and new_loss > loss * (1.0 + 1e-12):
            lr *= cfg.lr_shrink
            trace.append(TraceEntry(iterations, new_h, new_loss, new_grad, lr, "reject"))
            continue

        h, loss, grad = new_h, new_loss, new_grad
        if cfg.adaptive:
            lr *= cfg.lr_growth
        trace.append(TraceEntry(iterations, h, loss, grad, lr, "step"))
        if loss < best_loss:
            best_h, best_loss = h, loss
        if abs(grad) <= cfg.tolerance:
            converged = True
            break

        if cfg.speed_scale is not None:
            flat_run = flat_run + 1 if abs(grad) < 10.0 * cfg.tolerance else 0
            if flat_run >= FLAT_PATIENCE:
                lr *= cfg.speed_scale
                flat_run = 0
                trace.append(TraceEntry(iterations, h, loss, grad, lr, "speed"))

    if converged:
        result_h, result_loss = h, loss
    else:
        result_h, result_loss = best_h, best_loss
        logger.info(
            "gradient descent did not converge in %d iterations; returning best h=%.6g",
            cfg.max_iter,
            best_h,
        )
    logger.info(
        "gradient descent (%s): h*=%.6g loss=%.6g iterations=%d evaluations=%d",
        kernel.family.value,
        result_h,
        result_loss,
        iterations,
        objective.evaluations,
    )
    return TuningResult(
        h=result_h,
        loss=result_loss,
        iterations=iterations,
        trace=trace,
        converged=converged,
        evaluations=objective.evaluations,
        parametrization=inverse,
    )


def holdout_error(
    fit_part: PredictionMatrix,
    val_part: PredictionMatrix,
    kernel: KernelSpec,
    param: BandwidthParam,
    alpha: Optional[float] = None,
    method: AggregationMethod = AggregationMethod.CONSENSUAL,
    zero_mass_fallback: ZeroMassFallback = ZeroMassFallback.ZERO,
) -> float:
    """
    Mean squared hold-out error of the aggregate fit on ``fit_part``.

    Supplying ``alpha`` switches to the alpha-relaxed COBRA weights.
    """
    if val_part.n_learners != fit_part.n_learners:
        raise DataError("fit and validation parts must have the same learners")
    if alpha is not None:
        method = AggregationMethod.COBRA
    model = AggregatorModel.fit(
        fit_part,
        kernel,
        param,
        zero_mass_fallback=zero_mass_fallback,
        method=method,
        alpha=alpha,
    )
    residuals = predict(model, val_part.rows).values - val_part.responses
    return float(np.mean(residuals * residuals))


def holdout_grid_search(
    fit_part: PredictionMatrix,
    val_part: PredictionMatrix,
    kernel: KernelSpec,
    grid: Union[GridConfig, Sequence[float]],
    method: AggregationMethod = AggregationMethod.CONSENSUAL,
    alphas: Optional[Sequence[float]] = None,
    parametrization: Parametrization = Parametrization.SCALE,
    zero_mass_fallback: ZeroMassFallback = ZeroMassFallback.ZERO,
) -> TuningResult:
    """
    Hold-out search over the grid, jointly over alpha for COBRA.

    Alphas are scanned from 1 downwards and h upwards, so ties go to the
    larger alpha and then the smaller h.
    """
    points = _grid_points(grid)
    if method is AggregationMethod.COBRA:
        m = fit_part.n_learners
        if alphas is None:
            alphas = [j / m for j in range(1, m + 1)]
        alpha_values: List[Optional[float]] = sorted(alphas, reverse=True)
    else:
        alpha_values = [None]

    trace: List[TraceEntry] = []
    best = (math.nan, math.inf, None)
    evaluations = 0
    for alpha in alpha_values:
        for h in points:
            loss = holdout_error(
                fit_part,
                val_part,
                kernel,
                BandwidthParam(float(h), parametrization),
                alpha=alpha,
                method=method,
                zero_mass_fallback=zero_mass_fallback,
            )
            evaluations += 1
            trace.append(TraceEntry(len(trace), float(h), loss, event="holdout"))
            if loss < best[1]:
                best = (float(h), loss, alpha)
    h_best, loss_best, alpha_best = best
    logger.info(
        "hold-out search (%s): h*=%.6g alpha*=%s loss=%.6g",
        method.value,
        h_best,
        alpha_best,
        loss_best,
    )
    return TuningResult(
        h=h_best,
        loss=loss_best,
        iterations=len(trace),
        trace=trace,
        converged=True,
        evaluations=evaluations,
        parametrization=parametrization,
        alpha=alpha_best,
    )


def default_parametrization(kernel: KernelSpec) -> Parametrization:
    if kernel.family in (KernelFamily.GAUSSIAN, KernelFamily.EXP4):
        return Parametrization.INVERSE_SCALE
    return Parametrization.SCALE
