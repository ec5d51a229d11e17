from typing import Sequence, Tuple, Union

import numpy as np

from objtx.core.numerics.functional import MASKED_LOGIT, log_softmax, matmul, stack
from objtx.core.numerics.tensor import Tensor
from objtx.utils.errors import DimensionError, UsageError

LOG_FLOOR = 1e-12

Vector = Union[Tensor, np.ndarray, Sequence[float]]


def _tensor(x: Vector) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))


def masked_loss(p: Union[np.ndarray, Tensor], p_hat: Tensor) -> Tensor:
    """
    Soft-label cross-entropy sum_k -p_k log p_hat_k, averaged over masked positions.

    :param p: target distributions, (d,) or (m x d)
    :param p_hat: predicted distributions with the same shape
    """
    p_hat = _tensor(p_hat)
    target = p.data if isinstance(p, Tensor) else np.asarray(p)
    if target.shape != p_hat.shape:
        raise DimensionError(f"targets {target.shape} and predictions {p_hat.shape} differ")
    ce = (Tensor(target, dtype=p_hat.dtype) * p_hat.log(floor=LOG_FLOOR)).sum(axis=-1) * -1.0
    return ce.mean() if ce.ndim else ce


def infonce_loss(v: Vector, v_pos: Vector, negatives: Sequence[Vector]) -> Tensor:
    """-log(exp(v.v+) / (exp(v.v+) + sum_n exp(v.v-_n))), evaluated through log-softmax."""
    if not negatives:
        raise UsageError("infonce_loss needs at least one negative")
    v = _tensor(v)
    others = [_tensor(v_pos)] + [_tensor(n) for n in negatives]
    for other in others:
        if other.shape != v.shape:
            raise DimensionError(f"vector shapes differ: {v.shape} vs {other.shape}")
    logits = stack([(v * other).sum() for other in others])
    return log_softmax(logits)[0] * -1.0


def batch_infonce_loss(V: Tensor, pairs: Sequence[Tuple[int, int]]) -> Tensor:
    """
    In-batch InfoNCE over compatibility vectors V (n x d) arranged as n/2 positive pairs.

    Every example is an anchor whose positive is its partner and whose negatives are the
    other n-2 examples; the loss is the mean over all n anchors.
    """
    n = V.shape[0]
    partner = np.full(n, -1)
    for a, b in pairs:
        partner[a], partner[b] = b, a
    if n < 4 or (partner < 0).any():
        raise UsageError(f"batch of {n} examples needs n/2 >= 2 complete pairs")
    self_mask = np.where(np.eye(n, dtype=bool), MASKED_LOGIT, 0.0).astype(V.dtype)
    scores = matmul(V, V.T) + Tensor(self_mask)
    log_p = log_softmax(scores, axis=-1)
    return log_p[np.arange(n), partner].mean() * -1.0
