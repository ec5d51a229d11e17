from typing import Iterable, List, Optional, Sequence

import numpy as np

from objtx.core.models.models import Detection, Shot, SourceClass, Span, Track, ValidationReport, Video

LABEL_SUM_TOL = 1e-6


def _violation(message: str, path: str) -> ValidationReport:
    return ValidationReport(ok=False, violation=message, path=path)


def check_detection(det: Detection, path: str, d_z: Optional[int] = None) -> Optional[ValidationReport]:
    if det.box.shape != (4,):
        return _violation("box must have 4 corners", f"{path}.box")
    if not np.all(np.isfinite(det.box)) or np.any(det.box < 0.0) or np.any(det.box > 1.0):
        return _violation("box out of range", f"{path}.box")
    top, bottom, left, right = det.box
    if not (top < bottom and left < right):
        return _violation("degenerate box", f"{path}.box")
    if det.z.ndim != 1 or (d_z is not None and det.z.shape[0] != d_z):
        return _violation("feature dimension mismatch", f"{path}.z")
    if not np.all(np.isfinite(det.z)):
        return _violation("non-finite feature", f"{path}.z")
    if det.t < 0 or not np.isfinite(det.t):
        return _violation("negative timestamp", f"{path}.t")
    if det.pseudo_label is not None:
        p = det.pseudo_label
        if p.ndim != 1 or np.any(p < 0) or abs(float(p.sum()) - 1.0) > LABEL_SUM_TOL:
            return _violation("pseudo-label is not a distribution", f"{path}.pseudo_label")
    return None


def check_tracks(
    tracks: Sequence[Track], shots: Sequence[Shot], t_end: float, prefix: str = ""
) -> ValidationReport:
    """Shared track checks for spans and whole videos (timestamps in [0, t_end))."""
    for i in range(1, len(shots)):
        if shots[i].start < shots[i - 1].end or shots[i].start < shots[i - 1].start:
            return _violation("shots overlap or are out of order", f"{prefix}shots[{i}]")
    for i, shot in enumerate(shots):
        if not shot.start < shot.end:
            return _violation("empty shot", f"{prefix}shots[{i}]")
    shot_by_id = {shot.shot_id: shot for shot in shots}
    seen_ids = set()
    d_z = None
    for i, track in enumerate(tracks):
        path = f"{prefix}tracks[{i}]"
        if track.track_id in seen_ids:
            return _violation("duplicate track id", f"{path}.track_id")
        seen_ids.add(track.track_id)
        if not track.detections:
            return _violation("empty track", f"{path}.detections")
        if track.shot_id is None or track.shot_id < 0:
            return _violation("track has no shot", f"{path}.shot_id")
        for j, det in enumerate(track.detections):
            det_path = f"{path}.detections[{j}]"
            if d_z is None:
                d_z = det.z.shape[0] if det.z.ndim == 1 else None
            report = check_detection(det, det_path, d_z)
            if report is not None:
                return report
            if j > 0 and not det.t > track.detections[j - 1].t:
                return _violation("timestamps not strictly increasing", f"{det_path}.t")
            if det.t >= t_end:
                return _violation("detection outside time range", f"{det_path}.t")
            if det.source_class != track.detections[0].source_class:
                return _violation("mixed source classes", f"{det_path}.source_class")
        own_shot = shot_by_id.get(track.shot_id)
        if own_shot is None:
            return _violation("unknown shot id", f"{path}.shot_id")
        for j, det in enumerate(track.detections):
            if not own_shot.contains(det.t):
                if any(other.contains(det.t) for other in shots):
                    return _violation("track spans shots", f"{path}.detections[{j}]")
                return _violation("detection outside shot", f"{path}.detections[{j}]")
    return ValidationReport(ok=True)


def validate_span(span: Span) -> ValidationReport:
    """Return the first violated track-model invariant of `span` with a path to the offending record."""
    if not span.length > 0:
        return _violation("non-positive span length", "length")
    return check_tracks(span.tracks, span.shots, span.length)


def validate_video(video: Video) -> ValidationReport:
    if not video.duration > 0:
        return _violation("non-positive duration", "duration")
    return check_tracks(video.tracks, video.shots, video.duration)


def token_tracks(tracks: Iterable[Track], include_objects: bool) -> List[Track]:
    """Tracks that become tokens: persons always, objects only when requested."""
    return [t for t in tracks if include_objects or t.source_class is SourceClass.PERSON]


def count_tokens(span: Span, include_objects: bool = False) -> int:
    """Detections that become tokens, plus one for [CLS]."""
    return 1 + sum(len(t.detections) for t in token_tracks(span.tracks, include_objects))
