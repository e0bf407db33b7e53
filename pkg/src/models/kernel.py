from dataclasses import dataclass
from enum import Enum
from typing import Dict, Optional, Union

import numpy as np

ArrayLike = Union[float, np.ndarray]


class KernelFamily(Enum):
    NAIVE = "naive"
    EPANECHNIKOV = "epanechnikov"
    BIWEIGHT = "biweight"
    TRIWEIGHT = "triweight"
    COMPACT_GAUSSIAN = "cgauss"
    GAUSSIAN = "gauss"
    EXP4 = "exp4"


class Parametrization(Enum):
    SCALE = "scale"
    INVERSE_SCALE = "inverse_scale"


_COMPACT_FAMILIES = frozenset(
    {
        KernelFamily.NAIVE,
        KernelFamily.EPANECHNIKOV,
        KernelFamily.BIWEIGHT,
        KernelFamily.TRIWEIGHT,
        KernelFamily.COMPACT_GAUSSIAN,
    }
)

# Exponent of (1 - |u|^2) for the polynomial families.
_POLY_POWER: Dict[KernelFamily, int] = {
    KernelFamily.EPANECHNIKOV: 1,
    KernelFamily.BIWEIGHT: 2,
    KernelFamily.TRIWEIGHT: 3,
}


@dataclass(frozen=True)
class KernelSpec:
    """One of the seven kernel families with its shape parameters."""

    family: KernelFamily
    sigma: float = 1.0
    rho1: float = 3.0

    def __post_init__(self):
        if not isinstance(self.family, KernelFamily):
            raise ValueError(f"family must be a KernelFamily, got {self.family!r}")
        if not np.isfinite(self.sigma) or self.sigma <= 0:
            raise ValueError("sigma must be positive")
        if not np.isfinite(self.rho1) or self.rho1 <= 0:
            raise ValueError("rho1 must be positive")

    @property
    def is_compact(self) -> bool:
        return self.family in _COMPACT_FAMILIES

    @property
    def is_differentiable(self) -> bool:
        """Whether the InverseScale gradient path is available."""
        return not self.is_compact

    @property
    def needs_chebyshev(self) -> bool:
        return self.family is KernelFamily.NAIVE

    @classmethod
    def from_token(cls, token: str) -> "KernelSpec":
        """
        Parse a kernel token such as ``gauss`` or ``cgauss:sigma=1:rho1=3``.

        Raises:
            ValueError: unknown family, unknown parameter or malformed value
        """
        parts = [part.strip() for part in token.strip().split(":")]
        try:
            family = KernelFamily(parts[0].lower())
        except ValueError:
            names = ", ".join(f.value for f in KernelFamily)
            raise ValueError(f"Unknown kernel '{parts[0]}', expected one of: {names}")

        params: Dict[str, float] = {}
        for part in parts[1:]:
            if not part:
                continue
            key, sep, value = part.partition("=")
            key = key.strip().lower()
            if not sep or key not in ("sigma", "rho1"):
                raise ValueError(f"Invalid kernel parameter '{part}' in '{token}'")
            try:
                params[key] = float(value)
            except ValueError:
                raise ValueError(f"Kernel parameter {key} must be a number, got '{value}'")
        return cls(family=family, **params)

    def to_token(self) -> str:
        if self.family is KernelFamily.COMPACT_GAUSSIAN:
            return f"{self.family.value}:sigma={self.sigma!r}:rho1={self.rho1!r}"
        if self.family in (KernelFamily.GAUSSIAN, KernelFamily.EXP4):
            return f"{self.family.value}:sigma={self.sigma!r}"
        return self.family.value


@dataclass(frozen=True)
class BandwidthParam:
    """Bandwidth h together with the way it enters the kernel."""

    h: float
    parametrization: Parametrization = Parametrization.SCALE

    def __post_init__(self):
        if not np.isfinite(self.h) or self.h <= 0:
            raise ValueError(f"bandwidth h must be positive, got {self.h}")
        if not isinstance(self.parametrization, Parametrization):
            raise ValueError("parametrization must be a Parametrization")


@dataclass(frozen=True)
class DistanceSample:
    """Squared Euclidean distances, plus Chebyshev distances for the naive kernel."""

    sq_euclid: ArrayLike
    chebyshev: Optional[ArrayLike] = None


def _check_combination(spec: KernelSpec, param: BandwidthParam):
    if param.parametrization is Parametrization.INVERSE_SCALE and spec.is_compact:
        raise ValueError(
            f"InverseScale parametrization is only defined for gauss and exp4, "
            f"not {spec.family.value}"
        )


def kernel_weight(
    spec: KernelSpec, param: BandwidthParam, dist: DistanceSample
) -> ArrayLike:
    """
    Evaluate K_h at the difference vectors described by ``dist``.

    Radial families read the squared Euclidean distance; the naive kernel reads
    the Chebyshev distance. Supports are closed (``|u| <= 1``).

    Args:
        spec: kernel family and shape parameters
        param: bandwidth and parametrization
        dist: precomputed distances, scalar or array

    Returns:
        Weights in [0, 1] with the shape of the distance input
    """
    _check_combination(spec, param)
    h = param.h
    family = spec.family

    if family is KernelFamily.NAIVE:
        if dist.chebyshev is None:
            raise ValueError("naive kernel requires Chebyshev distances")
        cheb = np.asarray(dist.chebyshev, dtype=float)
        return _as_output(np.where(cheb <= h, 1.0, 0.0), dist.chebyshev)

    d2 = np.asarray(dist.sq_euclid, dtype=float)
    sigma2 = spec.sigma * spec.sigma

    if param.parametrization is Parametrization.INVERSE_SCALE:
        with np.errstate(under="ignore"):
            if family is KernelFamily.GAUSSIAN:
                out = np.exp(-h * d2 / (2.0 * sigma2))
            else:
                out = np.exp(-h * d2 * d2 / (2.0 * sigma2 * sigma2))
        return _as_output(out, dist.sq_euclid)

    # (d2 / h) / h keeps h * h from underflowing for the 1e-100 grid endpoint
    with np.errstate(over="ignore", under="ignore"):
        u2 = (d2 / h) / h
        if family in _POLY_POWER:
            base = np.clip(1.0 - u2, 0.0, None)
            out = np.where(u2 <= 1.0, base ** _POLY_POWER[family], 0.0)
        elif family is KernelFamily.COMPACT_GAUSSIAN:
            out = np.where(
                u2 <= spec.rho1 * spec.rho1, np.exp(-u2 / (2.0 * sigma2)), 0.0
            )
        elif family is KernelFamily.GAUSSIAN:
            out = np.exp(-u2 / (2.0 * sigma2))
        else:
            out = np.exp(-u2 * u2 / (2.0 * sigma2 * sigma2))
    return _as_output(out, dist.sq_euclid)


def kernel_weight_dh(
    spec: KernelSpec, param: BandwidthParam, dist: DistanceSample
) -> ArrayLike:
    """Derivative of kernel_weight with respect to h on the InverseScale path."""
    if spec.is_compact:
        raise ValueError(
            f"{spec.family.value} kernel is not differentiable in h; use grid search"
        )
    if param.parametrization is not Parametrization.INVERSE_SCALE:
        raise ValueError("kernel_weight_dh requires the InverseScale parametrization")

    d2 = np.asarray(dist.sq_euclid, dtype=float)
    sigma2 = spec.sigma * spec.sigma
    if spec.family is KernelFamily.GAUSSIAN:
        a = d2 / (2.0 * sigma2)
    else:
        a = d2 * d2 / (2.0 * sigma2 * sigma2)
    with np.errstate(under="ignore"):
        out = -a * np.exp(-param.h * a)
    return _as_output(out, dist.sq_euclid)


def _as_output(values: np.ndarray, like: ArrayLike) -> ArrayLike:
    if np.ndim(like) == 0:
        return float(values)
    return values
