from typing import Dict, List, Optional, Sequence, Tuple

from objtx.core.models.models import AvaTarget, Corpus, Detection, FrameSignature, RawDetectionStream, Video
from objtx.core.preprocess.shots import assign_shots, detect_shots
from objtx.core.preprocess.tracking import link_tracks
from objtx.core.tracks.track_model import validate_video
from objtx.utils.errors import DataError
from objtx.utils.logger import logger

DetectionKey = Tuple[float, Tuple[float, ...]]


def detection_key(det: Detection) -> DetectionKey:
    return float(det.t), tuple(float(v) for v in det.box)


def preprocess_stream(
    stream: RawDetectionStream,
    signatures: Sequence[FrameSignature],
    movie_id: str,
    segment_id: str,
    duration: Optional[float] = None,
    iou_threshold: float = 0.5,
    shot_threshold: float = 0.3,
) -> Video:
    """
    Turn one video's raw inputs into a validated Video: link detections into tracks,
    detect shots from the frame signatures and split tracks at the cuts.
    """
    shots = detect_shots(signatures, shot_threshold, duration)
    tracks = assign_shots(link_tracks(stream, iou_threshold), shots)
    video = Video(
        video_id=stream.video_id,
        movie_id=movie_id,
        segment_id=segment_id,
        duration=shots[-1].end,
        shots=shots,
        tracks=tracks,
    )
    report = validate_video(video)
    if not report.ok:
        raise DataError(f"{stream.video_id}: {report.violation} at {report.path}")
    return video


def _remap_ava(targets: Sequence[AvaTarget], before: Video, after: Video) -> List[AvaTarget]:
    """Point AVA targets at the re-linked track holding their first detection."""
    new_ids: Dict[DetectionKey, int] = {}
    for track in after.tracks:
        for det in track.detections:
            new_ids[detection_key(det)] = track.track_id
    old_tracks = {t.track_id: t for t in before.tracks}
    sizes = {t.track_id: len(t.detections) for t in after.tracks}
    out = []
    for target in targets:
        old = old_tracks.get(target.track_id)
        new_id = new_ids.get(detection_key(old.detections[0])) if old is not None else None
        if new_id is None or sizes[new_id] != len(target.short_term):
            logger.warning(f"{target.video_id}: dropping AVA target of track {target.track_id} (not recovered by linking)")
            continue
        out.append(target.model_copy(update={"track_id": new_id}))
    return out


def preprocess_corpus(corpus: Corpus, iou_threshold: float = 0.5, shot_threshold: float = 0.3) -> Corpus:
    """
    Rebuild every video of `corpus` from its raw detection stream and frame signatures.

    Videos without raw inputs are kept as they are. Labels, raw inputs and signatures
    carry over; AVA targets follow their instances to the re-linked track ids.
    """
    raw = {stream.video_id: stream for stream in corpus.raw}
    videos: List[Video] = []
    ava: List[AvaTarget] = []
    for video in corpus.videos:
        stream = raw.get(video.video_id)
        signatures = corpus.signatures.get(video.video_id)
        targets = [a for a in corpus.ava if a.video_id == video.video_id]
        if stream is None or not signatures:
            videos.append(video)
            ava.extend(targets)
            continue
        rebuilt = preprocess_stream(
            stream, signatures, video.movie_id, video.segment_id, video.duration, iou_threshold, shot_threshold
        )
        videos.append(rebuilt)
        ava.extend(_remap_ava(targets, video, rebuilt))
        logger.debug(f"{video.video_id}: {len(rebuilt.tracks)} tracks in {len(rebuilt.shots)} shots")
    logger.info(f"Preprocessed {len(raw)} raw streams into {sum(len(v.tracks) for v in videos)} tracks")
    return corpus.model_copy(update={"videos": videos, "ava": ava})
