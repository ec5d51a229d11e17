import math
from typing import Dict, List

import numpy as np

from objtx.core.models.models import Detection, Shot, Span, Track, Video
from objtx.utils.errors import UsageError
from objtx.utils.logger import logger

_EPS = 1e-9


def cut_span(video: Video, start: float, length: float) -> Span:
    """Window [start, start+length) of `video` with span-relative timestamps and clipped shots."""
    end = start + length
    tracks = []
    for track in video.tracks:
        dets = [d.model_copy(update={"t": d.t - start}) for d in track.detections if start <= d.t < end]
        if dets:
            tracks.append(Track(track_id=track.track_id, detections=dets, shot_id=track.shot_id))
    shots = [
        Shot(shot_id=s.shot_id, start=max(s.start, start) - start, end=min(s.end, end) - start)
        for s in video.shots
        if s.end > start and s.start < end
    ]
    return Span(
        video_id=video.video_id,
        segment_id=video.segment_id,
        movie_id=video.movie_id,
        start_time=start,
        length=length,
        tracks=tracks,
        shots=shots,
    )


def enumerate_spans(video: Video, length: float = 60.0, stride: float = 1.0) -> List[Span]:
    """
    All full-length windows starting at 0, stride, 2*stride, ...

    A video shorter than `length` yields a single span covering it, flagged `truncated`.
    """
    if stride <= 0:
        raise UsageError(f"stride must be positive, got {stride}")
    if video.duration < length - _EPS:
        logger.warning(f"Video {video.video_id} ({video.duration}s) is shorter than a {length}s span")
        return [cut_span(video, 0.0, video.duration).model_copy(update={"truncated": True})]
    count = int(math.floor((video.duration - length) / stride + _EPS)) + 1
    return [cut_span(video, k * stride, length) for k in range(count)]


def center_span(video: Video, length: float = 60.0) -> Span:
    """The window centered on the video, used as the end-task example of that video."""
    if video.duration <= length:
        return enumerate_spans(video, length)[0]
    return cut_span(video, (video.duration - length) / 2.0, length)


def _keep_indices(n: int, k: int) -> np.ndarray:
    if k >= n:
        return np.arange(n)
    if k == 1:
        return np.array([0])
    return np.rint(np.linspace(0, n - 1, k)).astype(int)


def _reductions(sizes: List[int], overage: int) -> List[int]:
    """Per-track removals summing to `overage`, proportional to track size, each leaving >= 2 (or 1)."""
    floors = [min(n, 2) for n in sizes]
    capacity = [n - f for n, f in zip(sizes, floors)]
    cuts = [0] * len(sizes)
    remaining = overage
    active = [i for i, c in enumerate(capacity) if c > 0]
    while remaining > 0 and active:
        total = sum(sizes[i] for i in active)
        shares = {i: remaining * sizes[i] / total for i in active}
        base = {i: min(int(math.floor(shares[i])), capacity[i] - cuts[i]) for i in active}
        given = sum(base.values())
        # hand out the remainder by largest fractional part, ties to earlier tracks
        order = sorted(active, key=lambda i: (-(shares[i] - math.floor(shares[i])), i))
        for i in order:
            if given >= remaining:
                break
            if base[i] < capacity[i] - cuts[i]:
                base[i] += 1
                given += 1
        for i in active:
            cuts[i] += base[i]
        remaining -= given
        active = [i for i in active if cuts[i] < capacity[i]]
        if given == 0:
            break
    return cuts


def truncate_tokens(span: Span, cap: int) -> Span:
    """
    Subsample detections so the span fits in `cap` tokens ([CLS] included).

    Each track loses detections in proportion to its share of the overage; the
    survivors are spread uniformly in time and keep the track's first and last
    detections. When even two detections per track do not fit, the latest-starting
    tracks are dropped first.
    """
    if cap < 2:
        raise UsageError(f"token cap must be at least 2, got {cap}")
    budget = cap - 1
    if span.n_detections <= budget:
        return span
    tracks = list(span.tracks)
    while tracks and sum(min(len(t.detections), 2) for t in tracks) > budget:
        latest = max(range(len(tracks)), key=lambda i: (tracks[i].start, i))
        tracks.pop(latest)
    sizes = [len(t.detections) for t in tracks]
    cuts = _reductions(sizes, max(0, sum(sizes) - budget))
    out = []
    for track, n, cut in zip(tracks, sizes, cuts):
        keep = _keep_indices(n, n - cut)
        out.append(track.model_copy(update={"detections": [track.detections[i] for i in keep]}))
    return span.model_copy(update={"tracks": out})


def spans_by_segment(spans: List[Span]) -> Dict[str, List[Span]]:
    groups: Dict[str, List[Span]] = {}
    for span in spans:
        groups.setdefault(span.segment_id, []).append(span)
    return groups
