import json
import logging
from pathlib import Path
from typing import Any, Dict, Union

import numpy as np

from src.models.aggregator import (
    AggregationMethod,
    AggregatorModel,
    NormalizationParams,
    PredictionMatrix,
    ZeroMassFallback,
)
from src.models.errors import ModelFileError
from src.models.kernel import BandwidthParam, KernelSpec, Parametrization

logger = logging.getLogger(__name__)

FORMAT_TAG = "consensual-aggregation-model"
FORMAT_VERSION = 1


def model_to_dict(model: AggregatorModel) -> Dict[str, Any]:
    """Self-describing dictionary holding everything predict needs."""
    return {
        "format": FORMAT_TAG,
        "version": FORMAT_VERSION,
        "method": model.method.value,
        "kernel": model.kernel.to_token(),
        "parametrization": model.bandwidth.parametrization.value,
        "h": model.bandwidth.h,
        "alpha": model.alpha,
        "zero_mass_fallback": model.zero_mass_fallback.value,
        "normalization": {
            "min": model.norm.per_column_min.tolist(),
            "max": model.norm.per_column_max.tolist(),
        },
        "learner_names": list(model.predictions.learner_names),
        "rows": model.predictions.rows.tolist(),
        "responses": model.predictions.responses.tolist(),
    }


def model_from_dict(data: Dict[str, Any]) -> AggregatorModel:
    if not isinstance(data, dict) or data.get("format") != FORMAT_TAG:
        raise ModelFileError("not an aggregation model file (format tag missing)")
    if data.get("version") != FORMAT_VERSION:
        raise ModelFileError(
            f"unsupported model file version {data.get('version')!r}, "
            f"expected {FORMAT_VERSION}"
        )
    try:
        predictions = PredictionMatrix(
            rows=np.array(data["rows"], dtype=float),
            responses=np.array(data["responses"], dtype=float),
            learner_names=tuple(data["learner_names"]),
        )
        norm = NormalizationParams(
            per_column_min=data["normalization"]["min"],
            per_column_max=data["normalization"]["max"],
        )
        alpha = data.get("alpha")
        return AggregatorModel(
            predictions=predictions,
            norm=norm,
            kernel=KernelSpec.from_token(data["kernel"]),
            bandwidth=BandwidthParam(
                float(data["h"]), Parametrization(data["parametrization"])
            ),
            zero_mass_fallback=ZeroMassFallback(data["zero_mass_fallback"]),
            method=AggregationMethod(data["method"]),
            alpha=None if alpha is None else float(alpha),
        )
    except ModelFileError:
        raise
    except (KeyError, TypeError, ValueError) as e:
        raise ModelFileError(f"corrupt model file: {e}")


def save_model(model: AggregatorModel, path: Union[str, Path]):
    """Write the model as JSON; floats use repr so reloading is bitwise exact."""
    try:
        with open(path, "w", encoding="utf-8") as f:
            json.dump(model_to_dict(model), f, indent=2)
    except OSError as e:
        raise ValueError(f"Failed to save model to {path}: {e}")
    logger.info(
        "saved %s model (l=%d, M=%d) to %s",
        model.method.value,
        model.predictions.n_rows,
        model.predictions.n_learners,
        path,
    )


def load_model(path: Union[str, Path]) -> AggregatorModel:
    """
    Read a model written by save_model.

    Raises:
        ModelFileError: unreadable, corrupt or version-mismatched file
    """
    try:
        with open(path, "r", encoding="utf-8") as f:
            data = json.load(f)
    except FileNotFoundError:
        raise ModelFileError(f"model file not found: {path}")
    except (OSError, UnicodeDecodeError, json.JSONDecodeError) as e:
        raise ModelFileError(f"Failed to load model from {path}: {e}")
    model = model_from_dict(data)
    logger.info("loaded %s model from %s", model.method.value, path)
    return model
