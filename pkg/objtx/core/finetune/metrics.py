from typing import Sequence, Union

import numpy as np

from objtx.core.models.models import TaskKind
from objtx.utils.errors import UsageError

ArrayLike = Union[np.ndarray, Sequence[float]]


def eval_metrics(predictions: ArrayLike, labels: ArrayLike, kind: TaskKind) -> float:
    """
    Top-1 accuracy or mean squared error.

    Classification predictions are class indices, or per-class scores whose argmax
    (lowest index on ties) is the predicted class.
    """
    preds = np.asarray(predictions, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64).reshape(-1)
    if len(preds) != len(y):
        raise UsageError(f"{len(preds)} predictions for {len(y)} labels")
    if len(y) == 0:
        raise UsageError("no predictions to score")
    if TaskKind(kind) is TaskKind.CLASSIFICATION:
        if preds.ndim == 2:
            preds = np.argmax(preds, axis=1)
        return float(np.mean(preds.reshape(-1) == y))
    return float(np.mean((preds.reshape(-1) - y) ** 2))


def better(a: float, b: float, kind: TaskKind) -> bool:
    """Whether score `a` beats score `b`: higher accuracy, or lower MSE."""
    return a > b if TaskKind(kind) is TaskKind.CLASSIFICATION else a < b
