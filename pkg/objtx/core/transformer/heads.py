from typing import Optional, Tuple, Union

import numpy as np

from objtx.core.models.models import Mode
from objtx.core.numerics.functional import concat, dropout, gelu, linear, softmax
from objtx.core.numerics.tensor import Tensor
from objtx.core.transformer.params import ModelParams


def _rows(x: Tensor) -> Tuple[Tensor, bool]:
    if x.ndim == 1:
        return x.reshape(1, x.shape[0]), True
    return x, False


def _dropout_linear(
    v: Tensor, W: Tensor, b: Tensor, params: ModelParams, mode: Mode, rng: Optional[np.random.Generator]
) -> Tensor:
    rows, single = _rows(v)
    out = linear(dropout(rows, params.config.dropout, mode, rng), W, b)
    return out.reshape(out.shape[1]) if single else out


def head_task(
    v_cls: Tensor, params: ModelParams, mode: Mode = Mode.EVAL, rng: Optional[np.random.Generator] = None
) -> Tensor:
    """Dropout then a linear layer: class logits, or a single regression output."""
    return _dropout_linear(v_cls, params["head.task.W"], params["head.task.b"], params, mode, rng)


def head_compat(
    v_cls: Tensor, params: ModelParams, mode: Mode = Mode.EVAL, rng: Optional[np.random.Generator] = None
) -> Tensor:
    """Dropout then a linear layer onto the compatibility embedding space."""
    return _dropout_linear(v_cls, params["head.compat.W"], params["head.compat.b"], params, mode, rng)


def head_mask(
    hidden: Tensor,
    params: ModelParams,
    mode: Mode = Mode.EVAL,
    return_hidden: bool = False,
) -> Union[Tensor, Tuple[Tensor, Tensor]]:
    """
    Two-layer MLP over the hidden states of masked positions.

    Returns the predicted label distribution per row and, with `return_hidden`,
    the GELU activations feeding the final layer.
    """
    rows, single = _rows(hidden)
    inner = gelu(linear(rows, params["head.mask.W_1"], params["head.mask.b_1"]))
    probs = softmax(linear(inner, params["head.mask.W_2"], params["head.mask.b_2"]), axis=-1)
    if single:
        probs = probs.reshape(probs.shape[1])
        inner = inner.reshape(inner.shape[1])
    return (probs, inner) if return_hidden else probs


def head_fusion(context: Tensor, short_term_logits: Tensor, params: ModelParams) -> Tensor:
    """One linear layer over [head_mask penultimate ; short-term logits]."""
    ctx, single = _rows(context)
    st, _ = _rows(short_term_logits)
    out = linear(concat([ctx, st], axis=-1), params["head.fusion.W"], params["head.fusion.b"])
    return out.reshape(out.shape[1]) if single else out
