"""Small hand-built records shared by the tests."""

from typing import List, Optional, Sequence

import numpy as np

from objtx.core.models.models import Detection, Shot, SourceClass, Span, Track, Video


def box_at(cell: int, size: float = 0.2) -> np.ndarray:
    row, col = divmod(cell, 3)
    top, left = row / 3.0 + 0.05, col / 3.0 + 0.05
    return np.array([top, top + size, left, left + size])


def label(role: int, d_label: int = 4) -> np.ndarray:
    out = np.full(d_label, 0.1 / d_label)
    out[role] += 0.9
    return out


def make_track(
    track_id: int,
    times: Sequence[float],
    shot_id: int = 0,
    cell: int = 0,
    d_z: int = 6,
    role: Optional[int] = 0,
    d_label: int = 4,
    source: SourceClass = SourceClass.PERSON,
    seed: int = 0,
) -> Track:
    rng = np.random.default_rng(seed + 97 * track_id)
    dets = [
        Detection(
            t=float(t),
            box=box_at(cell),
            z=rng.standard_normal(d_z),
            pseudo_label=None if role is None or source is SourceClass.OBJECT else label(role, d_label),
            source_class=source,
        )
        for t in times
    ]
    return Track(track_id=track_id, detections=dets, shot_id=shot_id)


def make_span(tracks: List[Track], shots: Optional[List[Shot]] = None, length: float = 30.0, segment_id: str = "seg0") -> Span:
    shots = shots or [Shot(shot_id=0, start=0.0, end=length)]
    return Span(video_id=segment_id, segment_id=segment_id, movie_id="movie0", length=length, tracks=tracks, shots=shots)


def make_video(
    video_id: str, movie_id: str, tracks: List[Track], duration: float = 40.0, shots: Optional[List[Shot]] = None
) -> Video:
    shots = shots or [Shot(shot_id=0, start=0.0, end=duration)]
    return Video(video_id=video_id, movie_id=movie_id, segment_id=video_id, duration=duration, shots=shots, tracks=tracks)


def small_span(n_tracks: int = 3, dets: int = 4, d_z: int = 6, d_label: int = 4, seed: int = 0) -> Span:
    """`n_tracks` persons over two shots of a 30 s span, each in its own grid cell."""
    shots = [Shot(shot_id=0, start=0.0, end=15.0), Shot(shot_id=1, start=15.0, end=30.0)]
    tracks = []
    for i in range(n_tracks):
        shot = i % 2
        start = 2.0 + 15.0 * shot + i
        tracks.append(
            make_track(i, [start + k for k in range(dets)], shot_id=shot, cell=i, d_z=d_z, role=i % d_label, d_label=d_label, seed=seed)
        )
    return make_span(tracks, shots)
