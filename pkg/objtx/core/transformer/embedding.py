from typing import Dict, FrozenSet, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np

from objtx.core.models.models import Mode, ModelConfig, Span, Track
from objtx.core.numerics.functional import concat, matmul, stack
from objtx.core.numerics.tensor import Tensor
from objtx.core.preprocess.spans import truncate_tokens
from objtx.core.tracks.track_model import token_tracks
from objtx.core.transformer.params import ModelParams
from objtx.utils.errors import CapacityError, DataError, UsageError

# (track_id, detection index within the track)
TokenKey = Tuple[int, int]


class TokenRef(NamedTuple):
    track_id: int
    det_index: int
    masked: bool


class Corruption(NamedTuple):
    """Which tokens are masked and how their feature z is substituted before embedding."""

    masked: FrozenSet[TokenKey]
    learned: FrozenSet[TokenKey]
    replaced: Dict[TokenKey, np.ndarray]


class TokenSequence:
    def __init__(
        self,
        embeddings: Tensor,
        attention_mask: np.ndarray,
        provenance: List[Optional[TokenRef]],
        components: Optional[Dict[str, np.ndarray]] = None,
        instance_slots: Optional[np.ndarray] = None,
        shot_slots: Optional[np.ndarray] = None,
        times: Optional[np.ndarray] = None,
    ):
        """
        [CLS] followed by one token per detection.

        :param embeddings: (n_tokens x hidden) input vectors
        :param attention_mask: (n_tokens,) True for real tokens
        :param provenance: per token, the detection it came from (None for [CLS] and padding)
        :param components: per-term contributions to the input vectors of tokens 1..n-1 (detached)
        :param times: span-relative timestamp of tokens 1..n-1
        """
        self.embeddings = embeddings
        self.attention_mask = attention_mask
        self.provenance = provenance
        self.components = components or {}
        self.instance_slots = instance_slots if instance_slots is not None else np.zeros(0, dtype=int)
        self.shot_slots = shot_slots if shot_slots is not None else np.zeros(0, dtype=int)
        self.times = times if times is not None else np.zeros(0)

    @property
    def n_tokens(self) -> int:
        return self.embeddings.shape[0]

    def masked_positions(self) -> List[int]:
        return [i for i, ref in enumerate(self.provenance) if ref is not None and ref.masked]

    def positions_of(self, track_id: int) -> List[int]:
        return [i for i, ref in enumerate(self.provenance) if ref is not None and ref.track_id == track_id]

    def permuted(self, order: Sequence[int]) -> "TokenSequence":
        """Reorder tokens 1..n-1 by `order` (a permutation of range(1, n)); [CLS] stays first."""
        full = [0] + list(order)
        det_order = [i - 1 for i in order]
        return TokenSequence(
            embeddings=self.embeddings[np.array(full)],
            attention_mask=self.attention_mask[full],
            provenance=[self.provenance[i] for i in full],
            components={k: v[det_order] for k, v in self.components.items()},
            instance_slots=self.instance_slots[det_order],
            shot_slots=self.shot_slots[det_order],
            times=self.times[det_order],
        )

    def padded(self, n_tokens: int) -> "TokenSequence":
        extra = n_tokens - self.n_tokens
        if extra < 0:
            raise UsageError(f"cannot pad {self.n_tokens} tokens down to {n_tokens}")
        if extra == 0:
            return self
        pad = Tensor(np.zeros((extra, self.embeddings.shape[1])), dtype=self.embeddings.dtype)
        return TokenSequence(
            embeddings=concat([self.embeddings, pad], axis=0),
            attention_mask=np.concatenate([self.attention_mask, np.zeros(extra, dtype=bool)]),
            provenance=list(self.provenance) + [None] * extra,
            components=self.components,
            instance_slots=self.instance_slots,
            shot_slots=self.shot_slots,
            times=self.times,
        )


class TokenBatch(NamedTuple):
    embeddings: Tensor  # (batch x n_tokens x hidden)
    attention_mask: np.ndarray  # (batch x n_tokens)
    sequences: List[TokenSequence]


def batch_tokens(sequences: Sequence[TokenSequence]) -> TokenBatch:
    width = max(s.n_tokens for s in sequences)
    padded = [s.padded(width) for s in sequences]
    return TokenBatch(
        embeddings=stack([s.embeddings for s in padded]),
        attention_mask=np.stack([s.attention_mask for s in padded]),
        sequences=list(sequences),
    )


def temporal_features(t: float, span_start: float, span_length: float) -> np.ndarray:
    """(distance from start, distance from end, offset from center), each divided by the span length."""
    if not span_start <= t <= span_start + span_length:
        raise UsageError(f"t={t} outside span [{span_start}, {span_start + span_length}]")
    return np.array(
        [t - span_start, span_start + span_length - t, t - (span_start + span_length / 2.0)],
        dtype=np.float64,
    ) / span_length


def temporal_embedding(t: float, span_start: float, span_length: float, W_pos: Tensor) -> Tensor:
    """Linear map of the 3-vector of normalized distances; `t` and `span_start` share one time base."""
    features = Tensor(temporal_features(t, span_start, span_length)[None, :], dtype=W_pos.dtype)
    return matmul(features, W_pos).reshape(W_pos.shape[1])


def prepare_span(span: Span, config: ModelConfig) -> Span:
    """Keep the tracks that become tokens and fit them into the token cap."""
    tracks = token_tracks(span.tracks, config.use_objects)
    if len(tracks) != len(span.tracks):
        span = span.model_copy(update={"tracks": tracks})
    return truncate_tokens(span, config.token_cap)


def instance_order(tracks: Sequence[Track]) -> List[int]:
    """Track ids by first appearance (ties by id): the canonical eval-mode slot order."""
    return [t.track_id for t in sorted(tracks, key=lambda t: (t.start, t.track_id))]


def assign_instance_slots(
    tracks: Sequence[Track], n_slots: int, mode: Mode, rng: Optional[np.random.Generator]
) -> Dict[int, int]:
    """A fresh random injection of tracks into instance slots per train forward; first-appearance order in eval."""
    if len(tracks) > n_slots:
        raise CapacityError(f"{len(tracks)} instances exceed {n_slots} instance slots")
    order = instance_order(tracks)
    if Mode(mode) is Mode.TRAIN:
        if rng is None:
            raise UsageError("train-mode embedding needs a random generator for instance slots")
        slots = rng.permutation(n_slots)[: len(order)]
    else:
        slots = np.arange(len(order))
    return {track_id: int(slot) for track_id, slot in zip(order, slots)}


def assign_shot_slots(span: Span, n_slots: int) -> Dict[int, int]:
    """Slot of each shot of the span, by relative order."""
    shots = sorted(span.shots, key=lambda s: s.start)
    if len(shots) > n_slots:
        raise CapacityError(f"{len(shots)} shots exceed {n_slots} shot slots")
    return {shot.shot_id: i for i, shot in enumerate(shots)}


def embed_tokens(
    span: Span,
    params: ModelParams,
    config: ModelConfig,
    rng: Optional[np.random.Generator] = None,
    mode: Mode = Mode.EVAL,
    corruption: Optional[Corruption] = None,
) -> TokenSequence:
    """
    One input vector per detection of `span`, preceded by the [CLS] embedding.

    y = W_feat z + W_spatial box + W_pos temporal(t) + E_instance[slot of track] + E_shot[slot of shot] + b.
    `span` should already be prepared (token tracks only, within the cap).
    """
    hidden = config.hidden
    dtype = params.dtype
    cls_row = params["embed.E_cls"].reshape(1, hidden)
    keys: List[TokenKey] = []
    feats, boxes, temporal, inst_idx, shot_idx, times = [], [], [], [], [], []
    if span.tracks:
        slots = assign_instance_slots(span.tracks, config.n_instance_slots, mode, rng)
        shot_slots = assign_shot_slots(span, config.n_shot_slots)
        for track in span.tracks:
            if track.shot_id not in shot_slots:
                raise DataError(f"track {track.track_id} refers to shot {track.shot_id} outside the span")
            for j, det in enumerate(track.detections):
                key = (track.track_id, j)
                keys.append(key)
                z = det.z
                if corruption is not None and key in corruption.replaced:
                    z = corruption.replaced[key]
                feats.append(z)
                boxes.append(det.box)
                temporal.append(temporal_features(det.t, 0.0, span.length))
                inst_idx.append(slots[track.track_id])
                shot_idx.append(shot_slots[track.shot_id])
                times.append(det.t)
    masked = corruption.masked if corruption is not None else frozenset()
    provenance: List[Optional[TokenRef]] = [None] + [TokenRef(k[0], k[1], k in masked) for k in keys]
    if not keys:
        return TokenSequence(cls_row, np.ones(1, dtype=bool), provenance)

    Z = np.asarray(feats, dtype=dtype)
    if corruption is not None and corruption.learned:
        learned = np.array([[1.0] if k in corruption.learned else [0.0] for k in keys], dtype=dtype)
        z_in = Tensor(Z * (1.0 - learned)) + matmul(Tensor(learned), params["embed.z_mask"].reshape(1, config.D_z))
    else:
        z_in = Tensor(Z)
    inst_idx = np.asarray(inst_idx)
    shot_idx = np.asarray(shot_idx)
    parts = {
        "feat": matmul(z_in, params["embed.W_feat"]),
        "spatial": matmul(Tensor(np.asarray(boxes, dtype=dtype)), params["embed.W_spatial"]),
        "temporal": matmul(Tensor(np.asarray(temporal, dtype=dtype)), params["embed.W_pos"]),
        "instance": params["embed.E_instance"][inst_idx],
        "shot": params["embed.E_shot"][shot_idx],
    }
    y = parts["feat"] + parts["spatial"] + parts["temporal"] + parts["instance"] + parts["shot"] + params["embed.b"]
    return TokenSequence(
        embeddings=concat([cls_row, y], axis=0),
        attention_mask=np.ones(len(keys) + 1, dtype=bool),
        provenance=provenance,
        components={name: part.data for name, part in parts.items()},
        instance_slots=inst_idx,
        shot_slots=shot_idx,
        times=np.asarray(times),
    )
