from typing import Dict, List, Optional, Sequence

import numpy as np

from objtx.core.models.models import FrameSignature, Shot, Track
from objtx.utils.errors import DataError, UsageError


def signature_distance(a: FrameSignature, b: FrameSignature) -> float:
    """Half L1 distance (total variation) between two normalized histograms."""
    return 0.5 * float(np.abs(a.hist - b.hist).sum())


def detect_shots(
    signatures: Sequence[FrameSignature], threshold: float = 0.3, duration: Optional[float] = None
) -> List[Shot]:
    """
    Rule-based cut detection: a cut sits between consecutive frames whose signatures
    differ by more than `threshold`. Returns half-open shots covering the timeline,
    which ends at `duration` or one frame interval after the last signature.
    """
    if not signatures:
        raise UsageError("detect_shots needs at least one frame signature")
    times = [s.t for s in signatures]
    if duration is None:
        step = times[-1] - times[-2] if len(times) > 1 else 1.0
        duration = times[-1] + step
    starts = [times[0]]
    for prev, cur in zip(signatures, signatures[1:]):
        if signature_distance(prev, cur) > threshold:
            starts.append(cur.t)
    ends = starts[1:] + [duration]
    return [Shot(shot_id=i, start=s, end=e) for i, (s, e) in enumerate(zip(starts, ends))]


def shot_index(shots: Sequence[Shot], t: float) -> int:
    for i, shot in enumerate(shots):
        if shot.contains(t):
            return i
    return -1


def assign_shots(tracks: Sequence[Track], shots: Sequence[Shot]) -> List[Track]:
    """
    Set `shot_id` on every track, splitting tracks that cross a cut into per-shot
    tracks. The first piece keeps the original id; later pieces get fresh ids
    numbered after the largest input id, in input order.
    """
    next_id = max((t.track_id for t in tracks), default=-1) + 1
    out: List[Track] = []
    for track in tracks:
        pieces: Dict[int, list] = {}
        order: List[int] = []
        for det in track.detections:
            idx = shot_index(shots, det.t)
            if idx < 0:
                raise DataError(f"track {track.track_id}: detection at t={det.t} lies outside all shots")
            if idx not in pieces:
                pieces[idx] = []
                order.append(idx)
            pieces[idx].append(det)
        for k, idx in enumerate(order):
            track_id = track.track_id if k == 0 else next_id
            if k > 0:
                next_id += 1
            out.append(Track(track_id=track_id, detections=pieces[idx], shot_id=shots[idx].shot_id))
    return out
