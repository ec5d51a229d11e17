import math
from typing import Optional

import numpy as np

from objtx.core.models.models import Mode, ModelConfig
from objtx.core.numerics.functional import MASKED_LOGIT, concat, dropout, gelu, layer_norm, linear, matmul, softmax
from objtx.core.numerics.tensor import Tensor
from objtx.core.transformer.embedding import TokenBatch, TokenSequence, batch_tokens
from objtx.core.transformer.params import ModelParams
from objtx.utils.errors import DimensionError, UsageError


def attention(
    Q: Tensor,
    K: Tensor,
    V: Tensor,
    mask: Optional[np.ndarray] = None,
    dropout_rate: float = 0.0,
    mode: Mode = Mode.EVAL,
    rng: Optional[np.random.Generator] = None,
) -> Tensor:
    """
    Scaled dot-product attention, softmax(Q K^T / sqrt(d)) V.

    :param Q: (n_q x d) or (batch x n_q x d)
    :param K: keys, same rank as Q
    :param V: values, same rank as Q
    :param mask: (n_k,) or (batch x n_k) booleans, True for keys that may be attended
    :param dropout_rate: dropout on the attention probabilities (train mode only)
    """
    if Q.shape[-1] != K.shape[-1]:
        raise DimensionError(f"query/key widths differ: {Q.shape} vs {K.shape}")
    scores = matmul(Q, K.swapaxes(-1, -2)) * (1.0 / math.sqrt(Q.shape[-1]))
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape[-1] != K.shape[-2]:
            raise DimensionError(f"mask of shape {mask.shape} does not match {K.shape[-2]} keys")
        if not mask.any(axis=-1).all():
            raise UsageError("every key is masked for some query")
        bias = np.where(mask, 0.0, MASKED_LOGIT).astype(scores.dtype)
        bias = bias[:, None, :] if bias.ndim == 2 else bias[None, :]
        scores = scores + Tensor(bias)
    probs = dropout(softmax(scores, axis=-1), dropout_rate, mode, rng)
    return matmul(probs, V)


def encoder_layer(
    x: Tensor,
    mask: np.ndarray,
    params: ModelParams,
    index: int,
    mode: Mode = Mode.EVAL,
    rng: Optional[np.random.Generator] = None,
) -> Tensor:
    """One post-layer-norm block: self-attention, add & norm, GELU feed-forward, add & norm."""
    config = params.config
    p = f"encoder.layer{index}"
    q = linear(x, params[f"{p}.attn.W_q"], params[f"{p}.attn.b_q"])
    k = linear(x, params[f"{p}.attn.W_k"], params[f"{p}.attn.b_k"])
    v = linear(x, params[f"{p}.attn.W_v"], params[f"{p}.attn.b_v"])
    heads = []
    for h in range(config.heads):
        cols = slice(h * config.head_dim, (h + 1) * config.head_dim)
        heads.append(
            attention(q[..., cols], k[..., cols], v[..., cols], mask, config.dropout, mode, rng)
        )
    context = concat(heads, axis=-1)
    attn_out = dropout(linear(context, params[f"{p}.attn.W_o"], params[f"{p}.attn.b_o"]), config.dropout, mode, rng)
    x = layer_norm(x + attn_out, params[f"{p}.ln1.gamma"], params[f"{p}.ln1.beta"])
    ffn = gelu(linear(x, params[f"{p}.ffn.W_1"], params[f"{p}.ffn.b_1"]))
    ffn = dropout(linear(ffn, params[f"{p}.ffn.W_2"], params[f"{p}.ffn.b_2"]), config.dropout, mode, rng)
    return layer_norm(x + ffn, params[f"{p}.ln2.gamma"], params[f"{p}.ln2.beta"])


def encode_batch(
    batch: TokenBatch,
    params: ModelParams,
    config: Optional[ModelConfig] = None,
    mode: Mode = Mode.EVAL,
    rng: Optional[np.random.Generator] = None,
) -> Tensor:
    """Hidden states (batch x n_tokens x hidden); padded rows are excluded as keys."""
    config = config or params.config
    x = batch.embeddings
    for i in range(config.layers):
        x = encoder_layer(x, batch.attention_mask, params, i, mode, rng)
    return x


def encode(
    tokens: TokenSequence,
    params: ModelParams,
    config: Optional[ModelConfig] = None,
    mode: Mode = Mode.EVAL,
    rng: Optional[np.random.Generator] = None,
) -> Tensor:
    """Hidden states (n_tokens x hidden) of a single sequence; row 0 is v_cls."""
    out = encode_batch(batch_tokens([tokens]), params, config, mode, rng)
    return out[0]
