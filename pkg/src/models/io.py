import logging
from pathlib import Path
from typing import Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from src.models.aggregator import PredictionMatrix
from src.models.errors import DataError

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

RESPONSE_COLUMN = "y"


def _read_frame(path: PathLike) -> pd.DataFrame:
    try:
        frame = pd.read_csv(path, encoding="utf-8", float_precision="round_trip")
    except FileNotFoundError:
        raise DataError(f"File not found: {path}")
    except (pd.errors.ParserError, pd.errors.EmptyDataError, UnicodeDecodeError) as e:
        raise DataError(f"Failed to parse CSV {path}: {e}")
    if frame.empty:
        raise DataError(f"{path} has no data rows")
    return frame


def _numeric(frame: pd.DataFrame, columns: Sequence[str], path: PathLike) -> np.ndarray:
    try:
        values = frame[list(columns)].to_numpy(dtype=float)
    except ValueError as e:
        raise DataError(f"{path} contains non-numeric values: {e}")
    if not np.all(np.isfinite(values)):
        raise DataError(f"{path} contains missing or non-finite values")
    return values


def read_prediction_csv(path: PathLike) -> PredictionMatrix:
    """Read ``y,<learner_1>,...,<learner_M>`` into a PredictionMatrix."""
    frame = _read_frame(path)
    if RESPONSE_COLUMN not in frame.columns:
        raise DataError(f"{path} has no '{RESPONSE_COLUMN}' column")
    learners = [column for column in frame.columns if column != RESPONSE_COLUMN]
    if not learners:
        raise DataError(f"{path} has no learner columns")
    rows = _numeric(frame, learners, path)
    responses = _numeric(frame, [RESPONSE_COLUMN], path)[:, 0]
    return PredictionMatrix(rows=rows, responses=responses, learner_names=tuple(learners))


def read_query_csv(
    path: PathLike, learner_names: Sequence[str]
) -> Tuple[np.ndarray, Optional[np.ndarray]]:
    """
    Read a query CSV holding the model's learner columns and an optional y.

    Returns:
        (q x M query rows in model column order, responses or None)
    """
    frame = _read_frame(path)
    missing = [name for name in learner_names if name not in frame.columns]
    if missing:
        raise DataError(f"{path} is missing learner columns: {', '.join(missing)}")
    rows = _numeric(frame, learner_names, path)
    responses = None
    if RESPONSE_COLUMN in frame.columns:
        responses = _numeric(frame, [RESPONSE_COLUMN], path)[:, 0]
    return rows, responses


def read_dataset_csv(path: PathLike) -> Tuple[np.ndarray, np.ndarray]:
    """Read a ``y,x1,...,xd`` dataset into (X, y)."""
    frame = _read_frame(path)
    if RESPONSE_COLUMN not in frame.columns:
        raise DataError(f"{path} has no '{RESPONSE_COLUMN}' column")
    features = [column for column in frame.columns if column != RESPONSE_COLUMN]
    if not features:
        raise DataError(f"{path} has no input columns")
    X = _numeric(frame, features, path)
    y = _numeric(frame, [RESPONSE_COLUMN], path)[:, 0]
    return X, y


def write_frame(frame: pd.DataFrame, path: PathLike):
    """Write a CSV with shortest round-trip float formatting."""
    frame.to_csv(path, index=False, encoding="utf-8", float_format=None)
    logger.info("wrote %d rows to %s", len(frame), path)


def write_dataset_csv(X, y, path: PathLike):
    X = np.asarray(X, dtype=float)
    frame = pd.DataFrame(X, columns=[f"x{j + 1}" for j in range(X.shape[1])])
    frame.insert(0, RESPONSE_COLUMN, np.asarray(y, dtype=float))
    write_frame(frame, path)


def write_prediction_csv(matrix: PredictionMatrix, path: PathLike):
    frame = pd.DataFrame(matrix.rows, columns=list(matrix.learner_names))
    frame.insert(0, RESPONSE_COLUMN, matrix.responses)
    write_frame(frame, path)


def write_predictions(values, path: PathLike, truths=None, zero_mass=None):
    """Aggregated predictions, one row per query."""
    frame = pd.DataFrame({"prediction": np.asarray(values, dtype=float)})
    if truths is not None:
        frame[RESPONSE_COLUMN] = np.asarray(truths, dtype=float)
    if zero_mass is not None:
        frame["zero_mass"] = np.asarray(zero_mass, dtype=bool).astype(int)
    write_frame(frame, path)


def write_trace(trace, path: PathLike):
    """Tuning trace as ``iter,h,loss,grad``."""
    frame = pd.DataFrame(
        {
            "iter": [entry.iteration for entry in trace],
            "h": [entry.h for entry in trace],
            "loss": [entry.loss for entry in trace],
            "grad": [entry.grad for entry in trace],
        }
    )
    write_frame(frame, path)
