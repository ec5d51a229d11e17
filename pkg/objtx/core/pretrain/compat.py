import math
from typing import Dict, Iterator, List, Mapping, Sequence, Union

import numpy as np

from objtx.core.models.models import CompatBatch, Span, Video
from objtx.core.preprocess.spans import cut_span, enumerate_spans, spans_by_segment
from objtx.utils.errors import DataError, UsageError


class VideoSpans(Sequence[Span]):
    """All windows of a group of videos, cut on access instead of up front."""

    def __init__(self, videos: Sequence[Video], length: float = 60.0, stride: float = 1.0):
        self.videos = list(videos)
        self.length = length
        self.stride = stride
        self._counts = [self._count(v) for v in self.videos]
        self._offsets = np.cumsum([0] + self._counts)

    def _count(self, video: Video) -> int:
        if video.duration < self.length:
            return 1
        return int(math.floor((video.duration - self.length) / self.stride + 1e-9)) + 1

    def __len__(self) -> int:
        return int(self._offsets[-1])

    def __getitem__(self, index: int) -> Span:
        if not 0 <= index < len(self):
            raise IndexError(index)
        k = int(np.searchsorted(self._offsets, index, side="right")) - 1
        video = self.videos[k]
        if video.duration < self.length:
            return enumerate_spans(video, self.length, self.stride)[0]
        return cut_span(video, (index - self._offsets[k]) * self.stride, self.length)


class SpanPool(Mapping[str, Sequence[Span]]):
    """segment_id -> the spans of that segment, lazily cut from the segment's videos."""

    def __init__(self, videos: Sequence[Video], length: float = 60.0, stride: float = 1.0):
        groups: Dict[str, List[Video]] = {}
        for video in videos:
            groups.setdefault(video.segment_id, []).append(video)
        self._spans = {seg: VideoSpans(vs, length, stride) for seg, vs in sorted(groups.items())}

    def __getitem__(self, segment_id: str) -> Sequence[Span]:
        return self._spans[segment_id]

    def __iter__(self) -> Iterator[str]:
        return iter(self._spans)

    def __len__(self) -> int:
        return len(self._spans)

    def sample(self, rng: np.random.Generator) -> Span:
        """A uniformly chosen segment, then a uniformly chosen span of it."""
        segments = list(self._spans)
        spans = self._spans[segments[int(rng.integers(len(segments)))]]
        return spans[int(rng.integers(len(spans)))]


def build_compat_batch(
    pool: Union[Mapping[str, Sequence[Span]], Sequence[Span]], n: int, rng: np.random.Generator
) -> CompatBatch:
    """
    n/2 positive pairs from n/2 distinct segments; examples 2k and 2k+1 form pair k.

    Every example's negatives are the other n-2 examples of the batch.
    """
    if n < 2 or n % 2:
        raise UsageError(f"compatibility batches need an even size, got {n}")
    if not isinstance(pool, Mapping):
        pool = spans_by_segment(list(pool))
    eligible = sorted(seg for seg, spans in pool.items() if len(spans) >= 2)
    if len(eligible) < n // 2:
        raise DataError(f"{n // 2} pairs need {n // 2} segments with 2+ spans, only {len(eligible)} available")
    spans: List[Span] = []
    pairs = []
    for k, s in enumerate(rng.choice(len(eligible), size=n // 2, replace=False)):
        segment = pool[eligible[int(s)]]
        a, b = rng.choice(len(segment), size=2, replace=False)
        spans.extend([segment[int(a)], segment[int(b)]])
        pairs.append((2 * k, 2 * k + 1))
    return CompatBatch(spans=spans, pairs=pairs)
