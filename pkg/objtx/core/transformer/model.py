from typing import List, Optional, Sequence, Tuple

import numpy as np

from objtx.core.models.models import Mode, ModelConfig, Span
from objtx.core.numerics.tensor import Tensor
from objtx.core.transformer.embedding import TokenSequence, batch_tokens, embed_tokens, prepare_span
from objtx.core.transformer.encoder import encode_batch
from objtx.core.transformer.params import ModelParams


def encode_sequences(
    sequences: Sequence[TokenSequence],
    params: ModelParams,
    mode: Mode = Mode.EVAL,
    rng: Optional[np.random.Generator] = None,
) -> Tensor:
    """Pad, stack and encode; returns (batch x n_tokens x hidden)."""
    return encode_batch(batch_tokens(sequences), params, params.config, mode, rng)


def encode_spans(
    spans: Sequence[Span],
    params: ModelParams,
    mode: Mode = Mode.EVAL,
    slot_rng: Optional[np.random.Generator] = None,
    dropout_rng: Optional[np.random.Generator] = None,
    config: Optional[ModelConfig] = None,
) -> Tuple[Tensor, List[TokenSequence]]:
    """Prepare, embed and encode raw spans in one batch."""
    config = config or params.config
    sequences = [embed_tokens(prepare_span(s, config), params, config, slot_rng, mode) for s in spans]
    return encode_sequences(sequences, params, mode, dropout_rng), sequences


def cls_vectors(hidden: Tensor) -> Tensor:
    """Row 0 of every sequence: v_cls, (batch x hidden)."""
    return hidden[:, 0]
