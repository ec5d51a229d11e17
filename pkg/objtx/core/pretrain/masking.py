import math
from typing import List, Optional, Sequence, Tuple

import numpy as np

from objtx.core.models.models import CorruptionMode, MaskPlan, Mode, ModelConfig, Record, Span
from objtx.core.transformer.embedding import Corruption, TokenSequence, embed_tokens
from objtx.core.transformer.params import ModelParams
from objtx.utils.errors import DataError

CORRUPTION_MODES = (CorruptionMode.LEARNED_REPLACE, CorruptionMode.RANDOM_FEATURE, CorruptionMode.KEEP)
CORRUPTION_PROBS = (0.8, 0.1, 0.1)


class FeaturePool(Record):
    """Detection features of a batch, each tagged with the (video_id, track_id) instance it came from."""

    owners: List[Tuple[str, int]]
    z: np.ndarray

    @classmethod
    def from_spans(cls, spans: Sequence[Span]) -> "FeaturePool":
        owners = [(s.video_id, t.track_id) for s in spans for t in s.tracks for _ in t.detections]
        z = [d.z for s in spans for t in s.tracks for d in t.detections]
        return cls(owners=owners, z=np.stack(z) if z else np.zeros((0, 0)))

    def excluding(self, video_id: str, track_id: int) -> np.ndarray:
        keep = [i for i, owner in enumerate(self.owners) if owner != (video_id, track_id)]
        return self.z[keep]


def labeled_tracks(span: Span) -> List[int]:
    """Ids of the span's instances whose every detection carries a pseudo-label."""
    return [t.track_id for t in span.tracks if all(d.pseudo_label is not None for d in t.detections)]


def draw_mask_plan(span: Span, rng: np.random.Generator, mask_fraction: float = 0.15) -> MaskPlan:
    """Pick ceil(mask_fraction*|U|) labeled instances (at least one) and one corruption mode per instance."""
    eligible = labeled_tracks(span)
    if not eligible:
        raise DataError(f"span {span.video_id}@{span.start_time} has no instance with pseudo-labels")
    k = min(len(eligible), max(1, int(math.ceil(mask_fraction * len(eligible) - 1e-9))))
    chosen = sorted(rng.choice(len(eligible), size=k, replace=False))
    modes = rng.choice(len(CORRUPTION_MODES), size=k, p=CORRUPTION_PROBS)
    return MaskPlan(masked={eligible[i]: CORRUPTION_MODES[m] for i, m in zip(chosen, modes)})


def select_and_corrupt(
    span: Span,
    params: ModelParams,
    rng: np.random.Generator,
    mask_fraction: float = 0.15,
    config: Optional[ModelConfig] = None,
    mode: Mode = Mode.TRAIN,
    feature_pool: Optional[FeaturePool] = None,
    slot_rng: Optional[np.random.Generator] = None,
) -> Tuple[TokenSequence, MaskPlan, np.ndarray]:
    """
    Mask whole instances of `span` and embed the corrupted span.

    learned-replace swaps z for the learned z_mask, random-feature swaps it for a feature
    drawn from `feature_pool` (detections of other instances of the batch; the span alone by
    default), keep leaves it. An instance with no other feature to draw from gets z_mask.
    Time, box, instance slot and shot slot of every token are untouched.

    :return: the token sequence, the plan, and the pseudo-label targets of the masked
        tokens in token order
    """
    config = config or params.config
    plan = draw_mask_plan(span, rng, mask_fraction)
    masked, learned = set(), set()
    replaced = {}
    pool = feature_pool if feature_pool is not None else FeaturePool.from_spans([span])
    for track in span.tracks:
        how = plan.masked.get(track.track_id)
        if how is None:
            continue
        others = pool.excluding(span.video_id, track.track_id) if how is CorruptionMode.RANDOM_FEATURE else None
        if others is not None and not len(others):
            how = CorruptionMode.LEARNED_REPLACE
        for j in range(len(track.detections)):
            key = (track.track_id, j)
            masked.add(key)
            if how is CorruptionMode.LEARNED_REPLACE:
                learned.add(key)
            elif how is CorruptionMode.RANDOM_FEATURE:
                replaced[key] = others[int(rng.integers(len(others)))]
    corruption = Corruption(masked=frozenset(masked), learned=frozenset(learned), replaced=replaced)
    tokens = embed_tokens(span, params, config, slot_rng or rng, mode, corruption)
    by_key = {(t.track_id, j): d for t in span.tracks for j, d in enumerate(t.detections)}
    positions = tokens.masked_positions()
    targets = np.stack([by_key[(tokens.provenance[i].track_id, tokens.provenance[i].det_index)].pseudo_label for i in positions])
    return tokens, plan, targets
