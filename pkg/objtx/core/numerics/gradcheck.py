from typing import Callable, Iterable, List, Optional, Tuple

import numpy as np
from pydantic import BaseModel

from objtx.core.numerics.tensor import Tensor, backward
from objtx.utils.logger import logger


class GradcheckResult(BaseModel):
    name: str
    max_rel_err: float
    worst_index: Tuple[int, ...]
    passed: bool


def relative_error(analytic: float, numeric: float, floor: float = 1e-6) -> float:
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)


def numeric_gradient(loss_fn: Callable[[], Tensor], tensor: Tensor, h: float = 1e-5) -> np.ndarray:
    """Central finite differences of `loss_fn()` with respect to every element of the leaf `tensor`."""
    data = tensor.data
    data.setflags(write=True)
    grad = np.zeros_like(data)
    try:
        for index in np.ndindex(*data.shape):
            original = data[index]
            data[index] = original + h
            plus = loss_fn().item()
            data[index] = original - h
            minus = loss_fn().item()
            data[index] = original
            grad[index] = (plus - minus) / (2.0 * h)
    finally:
        data.setflags(write=False)
    return grad


def check_gradients(
    loss_fn: Callable[[], Tensor],
    tensors: Iterable[Tensor],
    h: float = 1e-5,
    tol: float = 1e-4,
    names: Optional[List[str]] = None,
) -> List[GradcheckResult]:
    """
    Compare reverse-mode gradients of `loss_fn` with central differences on every element.

    `loss_fn` must be deterministic (eval mode, or dropout drawn from a freshly seeded generator).
    """
    tensors = list(tensors)
    grads = backward(loss_fn())
    results = []
    for i, tensor in enumerate(tensors):
        name = (names[i] if names else None) or tensor.name or f"input{i}"
        analytic = grads.get(tensor)
        if analytic is None:
            analytic = np.zeros_like(tensor.data)
        numeric = numeric_gradient(loss_fn, tensor, h=h)
        worst, worst_index = 0.0, ()
        for index in np.ndindex(*tensor.shape):
            err = relative_error(float(analytic[index]), float(numeric[index]))
            if err > worst:
                worst, worst_index = err, tuple(int(k) for k in index)
        results.append(GradcheckResult(name=name, max_rel_err=worst, worst_index=worst_index, passed=worst < tol))
        if worst >= tol:
            logger.warning(f"Gradcheck failed for {name}: rel. err {worst:.3e} at {worst_index}")
    return results
