from typing import Optional, Union

import numpy as np

from objtx.core.models.models import Mode, ModelConfig, PoolMode, Span
from objtx.core.numerics.tensor import Tensor
from objtx.core.transformer.embedding import embed_tokens, prepare_span
from objtx.core.transformer.params import ModelParams
from objtx.utils.errors import DataError, UsageError


def nearest_to_center(times: np.ndarray, center: float) -> int:
    """Index of the time closest to `center`; the earlier index wins ties."""
    return int(np.argmin(np.abs(np.asarray(times, dtype=np.float64) - center)))


def pool_features(
    features: Union[Tensor, np.ndarray],
    mode: PoolMode,
    times: Optional[np.ndarray] = None,
    center: Optional[float] = None,
) -> Tensor:
    """Elementwise mean or max over rows, or the single row nearest `center` in time."""
    features = features if isinstance(features, Tensor) else Tensor(np.asarray(features, dtype=np.float64))
    if features.ndim != 2 or features.shape[0] == 0:
        raise DataError("pooling needs at least one feature row")
    mode = PoolMode(mode)
    if mode is PoolMode.AVG:
        return features.mean(axis=0)
    if mode is PoolMode.MAX:
        return features.max(axis=0)
    if times is None or center is None:
        raise UsageError("short-term pooling needs detection times and the span center")
    return features[nearest_to_center(times, center)]


def pool_baseline(
    span: Span,
    mode: PoolMode,
    params: Optional[ModelParams] = None,
    features: Optional[Union[Tensor, np.ndarray]] = None,
    config: Optional[ModelConfig] = None,
    rng: Optional[np.random.Generator] = None,
    emb_mode: Mode = Mode.EVAL,
) -> Tensor:
    """
    Video-level vector of a span without the encoder.

    By default the pooled rows are the span's token input vectors ([CLS]
    excluded); `features` substitutes any per-detection rows in token order.
    Short-term pooling keeps only the detection closest to the span center.
    """
    if features is None:
        if params is None:
            raise UsageError("pool_baseline needs either params or features")
        config = config or params.config
        tokens = embed_tokens(prepare_span(span, config), params, config, rng, emb_mode)
        if tokens.n_tokens < 2:
            raise DataError(f"span {span.video_id}@{span.start_time} has no detections to pool")
        return pool_features(tokens.embeddings[1:], mode, tokens.times, span.length / 2.0)
    times = np.array([d.t for t in span.tracks for d in t.detections])
    if len(times) == 0:
        raise DataError(f"span {span.video_id}@{span.start_time} has no detections to pool")
    return pool_features(features, mode, times, span.length / 2.0)
