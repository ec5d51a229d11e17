"""
Line-delimited JSON corpus files.

One record per line, each tagged with a `kind`. A video record is followed by its
shots, then each track record followed by that track's detections; labels, AVA
targets, raw frames and frame signatures come after all videos and refer back to
them by id. Floats are written with full round-trip precision, so saving a loaded
corpus reproduces the file byte for byte.
"""

import json
import os
import re
from typing import Any, Dict, Iterator, List, Optional, Tuple

import numpy as np

from objtx.core.models.models import (
    AvaTarget,
    Corpus,
    Detection,
    FrameSignature,
    Label,
    RawDetectionStream,
    RawFrame,
    Shot,
    SourceClass,
    Track,
    Video,
)
from objtx.core.tracks.track_model import check_detection, validate_video
from objtx.utils.errors import LoadError
from objtx.utils.logger import logger

_TRACK_PATH = re.compile(r"^tracks\[(\d+)\](?:\.detections\[(\d+)\])?")


def _floats(a: Optional[np.ndarray]) -> Optional[List[float]]:
    return None if a is None else [float(v) for v in np.asarray(a).reshape(-1)]


def _detection_fields(det: Detection) -> Dict[str, Any]:
    return {
        "t": float(det.t),
        "box": _floats(det.box),
        "z": _floats(det.z),
        "pseudo_label": _floats(det.pseudo_label),
        "source_class": det.source_class.value,
    }


def corpus_records(corpus: Corpus) -> Iterator[Dict[str, Any]]:
    for video in corpus.videos:
        yield {
            "kind": "video",
            "video_id": video.video_id,
            "movie_id": video.movie_id,
            "segment_id": video.segment_id,
            "duration": float(video.duration),
        }
        for shot in video.shots:
            yield {"kind": "shot", "video_id": video.video_id, "shot_id": shot.shot_id, "start": float(shot.start), "end": float(shot.end)}
        for track in video.tracks:
            yield {"kind": "track", "video_id": video.video_id, "track_id": track.track_id, "shot_id": track.shot_id}
            for det in track.detections:
                yield {"kind": "detection", "video_id": video.video_id, "track_id": track.track_id, **_detection_fields(det)}
    for label in corpus.labels:
        yield {"kind": "label", "video_id": label.video_id, "task": label.task, "value": float(label.value)}
    for target in corpus.ava:
        yield {
            "kind": "ava",
            "video_id": target.video_id,
            "track_id": target.track_id,
            "labels": _floats(target.labels),
            "short_term": [_floats(row) for row in np.atleast_2d(target.short_term)],
        }
    for stream in corpus.raw:
        for frame in stream.frames:
            yield {
                "kind": "frame",
                "video_id": stream.video_id,
                "t": float(frame.t),
                "detections": [_detection_fields(d) for d in frame.detections],
            }
    for video_id in sorted(corpus.signatures):
        for sig in corpus.signatures[video_id]:
            yield {"kind": "signature", "video_id": video_id, "t": float(sig.t), "hist": _floats(sig.hist)}


def save_corpus(corpus: Corpus, path: str) -> str:
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        for record in corpus_records(corpus):
            f.write(json.dumps(record, ensure_ascii=False, allow_nan=False))
            f.write("\n")
    logger.info(f"Saved corpus of {len(corpus.videos)} videos to {path}")
    return path


class _VideoDraft:
    def __init__(self, record: Dict[str, Any], line: int):
        self.record = record
        self.line = line
        self.shots: List[Shot] = []
        self.tracks: List[Dict[str, Any]] = []
        self.track_lines: List[int] = []
        self.detection_lines: List[List[int]] = []
        self.track_index: Dict[int, int] = {}


def _require(record: Dict[str, Any], keys: Tuple[str, ...], path: str, line: int) -> None:
    missing = [k for k in keys if k not in record]
    if missing:
        raise LoadError(f"{record.get('kind')} record lacks {', '.join(missing)}", path, line)


def _detection(record: Dict[str, Any], path: str, line: int) -> Detection:
    _require(record, ("t", "box", "z", "source_class"), path, line)
    try:
        return Detection(
            t=record["t"],
            box=record["box"],
            z=record["z"],
            pseudo_label=record.get("pseudo_label"),
            source_class=SourceClass(record["source_class"]),
        )
    except ValueError as e:
        raise LoadError(f"bad detection: {e}", path, line) from e


def _video_from_draft(draft: _VideoDraft, path: str) -> Video:
    r = draft.record
    tracks = [Track(track_id=t["track_id"], shot_id=t["shot_id"], detections=t["detections"]) for t in draft.tracks]
    video = Video(
        video_id=r["video_id"], movie_id=r["movie_id"], segment_id=r["segment_id"], duration=r["duration"],
        shots=draft.shots, tracks=tracks,
    )
    report = validate_video(video)
    if not report.ok:
        line = draft.line
        match = _TRACK_PATH.match(report.path or "")
        if match:
            i = int(match.group(1))
            line = draft.track_lines[i]
            if match.group(2) is not None:
                line = draft.detection_lines[i][int(match.group(2))]
        raise LoadError(f"{report.violation} at {r['video_id']}.{report.path}", path, line)
    return video


def load_corpus(path: str) -> Corpus:
    """Parse and validate a corpus file; every failure names the offending line."""
    if not os.path.isfile(path):
        raise LoadError("corpus file not found", path)
    drafts: Dict[str, _VideoDraft] = {}
    order: List[str] = []
    labels, ava = [], []
    raw: Dict[str, List[RawFrame]] = {}
    signatures: Dict[str, List[FrameSignature]] = {}
    with open(path, encoding="utf-8") as f:
        for line_no, line in enumerate(f, start=1):
            if not line.strip():
                continue
            if not line.endswith("\n"):
                raise LoadError("truncated final line", path, line_no)
            try:
                record = json.loads(line)
            except json.JSONDecodeError as e:
                raise LoadError(f"parse error: {e.msg}", path, line_no) from e
            if not isinstance(record, dict) or "kind" not in record:
                raise LoadError("record is not an object with a kind", path, line_no)
            kind = record["kind"]
            if kind == "video":
                _require(record, ("video_id", "movie_id", "segment_id", "duration"), path, line_no)
                if record["video_id"] in drafts:
                    raise LoadError(f"duplicate video {record['video_id']}", path, line_no)
                drafts[record["video_id"]] = _VideoDraft(record, line_no)
                order.append(record["video_id"])
                continue
            video_id = record.get("video_id")
            if kind in ("shot", "track", "detection", "label", "ava", "frame", "signature") and video_id not in drafts:
                raise LoadError(f"{kind} refers to unknown video {video_id}", path, line_no)
            draft = drafts.get(video_id)
            try:
                if kind == "shot":
                    _require(record, ("shot_id", "start", "end"), path, line_no)
                    draft.shots.append(Shot(shot_id=record["shot_id"], start=record["start"], end=record["end"]))
                elif kind == "track":
                    _require(record, ("track_id",), path, line_no)
                    draft.track_index[record["track_id"]] = len(draft.tracks)
                    draft.tracks.append({"track_id": record["track_id"], "shot_id": record.get("shot_id"), "detections": []})
                    draft.track_lines.append(line_no)
                    draft.detection_lines.append([])
                elif kind == "detection":
                    index = draft.track_index.get(record.get("track_id"))
                    if index is None or index != len(draft.tracks) - 1:
                        raise LoadError(f"detection refers to track {record.get('track_id')} out of order", path, line_no)
                    det = _detection(record, path, line_no)
                    report = check_detection(det, "detection")
                    if report is not None:
                        raise LoadError(f"{report.violation} at {report.path}", path, line_no)
                    draft.tracks[index]["detections"].append(det)
                    draft.detection_lines[index].append(line_no)
                elif kind == "label":
                    _require(record, ("task", "value"), path, line_no)
                    labels.append(Label(video_id=video_id, task=record["task"], value=record["value"]))
                elif kind == "ava":
                    _require(record, ("track_id", "labels", "short_term"), path, line_no)
                    if record["track_id"] not in draft.track_index:
                        raise LoadError(f"ava target refers to unknown track {record['track_id']}", path, line_no)
                    ava.append(
                        AvaTarget(
                            video_id=video_id,
                            track_id=record["track_id"],
                            labels=record["labels"],
                            short_term=np.asarray(record["short_term"], dtype=np.float64),
                        )
                    )
                elif kind == "frame":
                    _require(record, ("t", "detections"), path, line_no)
                    dets = [_detection(d, path, line_no) for d in record["detections"]]
                    frames = raw.setdefault(video_id, [])
                    if frames and not record["t"] > frames[-1].t:
                        raise LoadError("raw frames out of time order", path, line_no)
                    frames.append(RawFrame(t=record["t"], detections=dets))
                elif kind == "signature":
                    _require(record, ("t", "hist"), path, line_no)
                    hist = np.asarray(record["hist"], dtype=np.float64)
                    if np.any(hist < 0) or abs(float(hist.sum()) - 1.0) > 1e-6:
                        raise LoadError("frame signature is not a normalized histogram", path, line_no)
                    signatures.setdefault(video_id, []).append(FrameSignature(t=record["t"], hist=hist))
                else:
                    raise LoadError(f"unknown record kind '{kind}'", path, line_no)
            except LoadError:
                raise
            except (ValueError, TypeError) as e:
                raise LoadError(f"bad {kind} record: {e}", path, line_no) from e
    videos = [_video_from_draft(drafts[v], path) for v in order]
    corpus = Corpus(
        videos=videos,
        labels=labels,
        ava=ava,
        raw=[RawDetectionStream(video_id=v, frames=raw[v]) for v in order if v in raw],
        signatures={v: signatures[v] for v in sorted(signatures)},
    )
    logger.info(f"Loaded {len(videos)} videos, {len(labels)} labels from {path}")
    return corpus
