from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from tqdm import trange

from objtx.core.models.models import Mode, Objective, Span, TrainConfig, Video
from objtx.core.numerics.functional import concat
from objtx.core.numerics.optim import AdamState, adam_step, update_lr
from objtx.core.numerics.tensor import Tensor, backward
from objtx.core.pretrain.compat import SpanPool, build_compat_batch
from objtx.core.pretrain.losses import batch_infonce_loss, masked_loss
from objtx.core.pretrain.masking import FeaturePool, labeled_tracks, select_and_corrupt
from objtx.core.transformer.embedding import prepare_span
from objtx.core.transformer.heads import head_compat, head_mask
from objtx.core.transformer.model import cls_vectors, encode_sequences, encode_spans
from objtx.core.transformer.params import ModelParams
from objtx.utils import rng as rng_streams
from objtx.utils.errors import DataError
from objtx.utils.logger import MetricsLog, logger

MAX_SPAN_DRAWS = 100


class PretrainStreams:
    """The named random sub-streams one pretraining run draws from."""

    def __init__(self, seed: int):
        self.batch = rng_streams.stream(seed, rng_streams.BATCH)
        self.mask = rng_streams.stream(seed, rng_streams.MASK)
        self.dropout = rng_streams.stream(seed, rng_streams.DROPOUT)
        self.slots = rng_streams.stream(seed, rng_streams.SLOTS)


def sample_labeled_spans(pool: SpanPool, n: int, params: ModelParams, rng: np.random.Generator) -> List[Span]:
    spans = []
    for _ in range(n):
        for _attempt in range(MAX_SPAN_DRAWS):
            span = prepare_span(pool.sample(rng), params.config)
            if labeled_tracks(span):
                spans.append(span)
                break
        else:
            raise DataError("could not find a span with pseudo-labeled instances")
    return spans


def mask_objective(
    spans: Sequence[Span], params: ModelParams, config: TrainConfig, streams: PretrainStreams, mode: Mode = Mode.TRAIN
) -> Tensor:
    """Masked-instance loss of one batch; random-feature corruption draws from other instances of the batch."""
    pool = FeaturePool.from_spans(spans)
    sequences, targets = [], []
    for span in spans:
        tokens, _, target = select_and_corrupt(
            span, params, streams.mask, config.mask_fraction, params.config, mode, feature_pool=pool, slot_rng=streams.slots
        )
        sequences.append(tokens)
        targets.append(target)
    hidden = encode_sequences(sequences, params, mode, streams.dropout)
    rows = [hidden[b][np.array(seq.masked_positions())] for b, seq in enumerate(sequences)]
    p_hat = head_mask(concat(rows, axis=0), params, mode)
    return masked_loss(np.concatenate(targets, axis=0), p_hat)


def compat_objective(
    pool: SpanPool, params: ModelParams, config: TrainConfig, streams: PretrainStreams, mode: Mode = Mode.TRAIN
) -> Tensor:
    """InfoNCE over one batch of n/2 same-segment pairs, on uncorrupted inputs."""
    batch = build_compat_batch(pool, config.batch, streams.batch)
    hidden, _ = encode_spans(batch.spans, params, mode, streams.slots, streams.dropout)
    vectors = head_compat(cls_vectors(hidden), params, mode, streams.dropout)
    return batch_infonce_loss(vectors, batch.pairs)


def pretrain_loop(
    dataset: Sequence[Video],
    params: ModelParams,
    config: TrainConfig,
    seed: int = 0,
    metrics: Optional[MetricsLog] = None,
    disable_tqdm: bool = True,
) -> Tuple[ModelParams, List[Dict[str, float]]]:
    """
    Self-supervised pretraining on spans cut from `dataset`.

    Each iteration samples a batch, sums the losses of the configured objective(s) and
    takes one Adam step at the scheduled learning rate. Only parameters reached by the
    losses are updated.

    :return: the trained parameters and the per-iteration loss trace
    """
    trace: List[Dict[str, float]] = []
    objective = Objective(config.objective)
    if objective is Objective.NONE or config.iterations == 0:
        return params, trace
    pool = SpanPool(dataset, config.span_length, config.span_stride)
    streams = PretrainStreams(seed)
    state = AdamState(weight_decay=config.weight_decay)
    logger.info(f"Pretraining ({objective.value}) for {config.iterations} iterations on {len(pool)} segments")
    for it in trange(config.iterations, disable=disable_tqdm, desc="pretrain", leave=False):
        lr = update_lr(it + 1, config.iterations, config.base_lr, config.warmup_frac)
        record: Dict[str, float] = {"step": it, "lr": lr}
        spans = sample_labeled_spans(pool, config.batch, params, streams.batch)
        loss = mask_objective(spans, params, config, streams)
        record["mask_loss"] = loss.item()
        if objective is Objective.MASK_COMPAT:
            compat = compat_objective(pool, params, config, streams)
            record["compat_loss"] = compat.item()
            loss = loss + compat
        record["loss"] = loss.item()
        grads = backward(loss)
        names = [n for n in params.registry.names() if params[n] in grads]
        adam_step(params.registry, params.registry.collect_grads(grads, names), state, lr, names)
        trace.append(record)
        if metrics is not None:
            for key, value in record.items():
                if key != "step":
                    metrics.log_step(it, key, value)
        if config.log_every and (it % config.log_every == 0 or it == config.iterations - 1):
            logger.info(f"pretrain step {it}: loss {record['loss']:.4f} lr {lr:.2e}")
    return params, trace
