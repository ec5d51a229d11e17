"""
Action-detection style adaptation: score one target instance per example from its
masked-out context, fused late with an external short-term prediction.
"""

from typing import Dict, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel
from tqdm import trange

from objtx.core.models.models import AvaTarget, Mode, Span, TrainConfig, Video
from objtx.core.numerics.functional import softplus
from objtx.core.numerics.optim import AdamState, adam_step, update_lr
from objtx.core.numerics.tensor import Tensor, backward
from objtx.core.preprocess.spans import center_span
from objtx.core.transformer.embedding import Corruption, embed_tokens, prepare_span
from objtx.core.transformer.encoder import encode
from objtx.core.transformer.heads import head_fusion, head_mask
from objtx.core.transformer.params import ModelParams
from objtx.utils import rng as rng_streams
from objtx.utils.errors import DataError
from objtx.utils.logger import logger

FUSION_PARAMS = ("head.fusion.W", "head.fusion.b")


class AvaExample(NamedTuple):
    span: Span
    track_id: int
    short_term: np.ndarray  # (n_classes,) short-term logits of the target
    labels: np.ndarray  # (n_classes,) multi-hot


class AvaScores(BaseModel):
    per_class: List[float]
    mean: float


def build_ava_examples(videos: Sequence[Video], targets: Sequence[AvaTarget], span_length: float = 60.0) -> List[AvaExample]:
    """Center span of each target's video; per-detection short-term logits are averaged."""
    by_id = {v.video_id: v for v in videos}
    examples = []
    for target in targets:
        video = by_id.get(target.video_id)
        if video is None:
            continue
        short_term = np.asarray(target.short_term)
        short_term = short_term.mean(axis=0) if short_term.ndim == 2 else short_term
        examples.append(AvaExample(center_span(video, span_length), target.track_id, short_term, np.asarray(target.labels)))
    return examples


def masked_context(span: Span, track_id: int, params: ModelParams) -> Tuple[np.ndarray, np.ndarray]:
    """
    Eval-mode forward with every token of the target replaced by z_mask.

    :return: head_mask's penultimate representation and its class distribution, each
        averaged over the target's tokens
    """
    config = params.config
    span = prepare_span(span, config)
    target = next((t for t in span.tracks if t.track_id == track_id), None)
    if target is None:
        raise DataError(f"target track {track_id} is not in span {span.video_id}@{span.start_time}")
    keys = frozenset((track_id, j) for j in range(len(target.detections)))
    tokens = embed_tokens(span, params, config, None, Mode.EVAL, Corruption(masked=keys, learned=keys, replaced={}))
    hidden = encode(tokens, params, config, Mode.EVAL)
    probs, inner = head_mask(hidden[np.array(tokens.masked_positions())], params, Mode.EVAL, return_hidden=True)
    return inner.data.mean(axis=0), probs.data.mean(axis=0)


def ava_late_fusion(span: Span, track_id: int, short_term_logits: np.ndarray, params: ModelParams) -> np.ndarray:
    """Per-class scores of the fusion layer over [masked context ; short-term logits]."""
    context, _ = masked_context(span, track_id, params)
    short_term = np.asarray(short_term_logits, dtype=np.float64)
    short_term = short_term.mean(axis=0) if short_term.ndim == 2 else short_term
    return head_fusion(Tensor(context), Tensor(short_term), params).data


def ava_masked_predict(span: Span, track_id: int, params: ModelParams) -> np.ndarray:
    """Context-only scores: the fusion layer with the short-term input zeroed."""
    n_classes = params["head.fusion.b"].shape[0]
    return ava_late_fusion(span, track_id, np.zeros(n_classes), params)


def logistic_loss(scores: Tensor, labels: np.ndarray) -> Tensor:
    """Mean elementwise log(1 + exp(-y s)) with y in {-1, +1}."""
    signs = Tensor(1.0 - 2.0 * np.asarray(labels), dtype=scores.dtype)
    return softplus(scores * signs).mean()


def per_class_accuracy(scores: np.ndarray, labels: np.ndarray) -> AvaScores:
    hits = (np.asarray(scores) > 0.0) == (np.asarray(labels) > 0.5)
    per_class = hits.mean(axis=0)
    return AvaScores(per_class=[float(a) for a in per_class], mean=float(per_class.mean()))


def context_features(examples: Sequence[AvaExample], params: ModelParams) -> np.ndarray:
    return np.stack([masked_context(ex.span, ex.track_id, params)[0] for ex in examples])


def train_ava_fusion(
    examples: Sequence[AvaExample],
    params: ModelParams,
    config: TrainConfig,
    seed: int = 0,
    use_context: bool = True,
    use_short_term: bool = True,
    context: Optional[np.ndarray] = None,
    disable_tqdm: bool = True,
) -> ModelParams:
    """
    Fit only the fusion layer for `config.ava_iterations` full-batch Adam steps; every
    other tensor stays bit-identical. Disabled inputs are fed as zeros.
    """
    if not examples:
        raise DataError("no AVA examples to train on")
    n_classes = len(examples[0].labels)
    if "head.fusion.W" not in params:
        params.add_fusion_head(n_classes, rng_streams.stream(seed, rng_streams.INIT, 2))
    ctx = context if context is not None else context_features(examples, params)
    if not use_context:
        ctx = np.zeros_like(ctx)
    st = np.stack([ex.short_term for ex in examples])
    if not use_short_term:
        st = np.zeros_like(st)
    labels = np.stack([ex.labels for ex in examples])
    state = AdamState(weight_decay=config.weight_decay)
    ctx_t, st_t = Tensor(ctx, dtype=params.dtype), Tensor(st, dtype=params.dtype)
    loss = None
    for step in trange(1, config.ava_iterations + 1, disable=disable_tqdm, desc="ava fusion", leave=False):
        loss = logistic_loss(head_fusion(ctx_t, st_t, params), labels)
        grads = params.registry.collect_grads(backward(loss), list(FUSION_PARAMS))
        lr = update_lr(step, config.ava_iterations, config.ava_lr, config.warmup_frac)
        adam_step(params.registry, grads, state, lr, FUSION_PARAMS)
    if loss is not None:
        logger.info(f"AVA fusion trained for {config.ava_iterations} iterations, final loss {loss.item():.4f}")
    return params


def evaluate_ava(
    examples: Sequence[AvaExample],
    params: ModelParams,
    use_context: bool = True,
    use_short_term: bool = True,
    context: Optional[np.ndarray] = None,
) -> AvaScores:
    ctx = context if context is not None else context_features(examples, params)
    if not use_context:
        ctx = np.zeros_like(ctx)
    st = np.stack([ex.short_term for ex in examples])
    if not use_short_term:
        st = np.zeros_like(st)
    scores = head_fusion(Tensor(ctx, dtype=params.dtype), Tensor(st, dtype=params.dtype), params).data
    return per_class_accuracy(scores, np.stack([ex.labels for ex in examples]))


AVA_VARIANTS: Dict[str, Tuple[bool, bool]] = {
    "short-term": (False, True),
    "masked-context": (True, False),
    "late-fusion": (True, True),
}
