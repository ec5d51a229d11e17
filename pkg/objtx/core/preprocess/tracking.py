from typing import Dict, List, Sequence

import numpy as np

from objtx.core.models.models import Detection, RawDetectionStream, Track


def iou(box_a: Sequence[float], box_b: Sequence[float]) -> float:
    """Intersection over union of two (top, bottom, left, right) boxes."""
    top_a, bottom_a, left_a, right_a = (float(v) for v in box_a)
    top_b, bottom_b, left_b, right_b = (float(v) for v in box_b)
    inter_h = max(0.0, min(bottom_a, bottom_b) - max(top_a, top_b))
    inter_w = max(0.0, min(right_a, right_b) - max(left_a, left_b))
    inter = inter_h * inter_w
    union = (bottom_a - top_a) * (right_a - left_a) + (bottom_b - top_b) * (right_b - left_b) - inter
    return inter / union if union > 0 else 0.0


def link_tracks(stream: RawDetectionStream, iou_threshold: float = 0.5) -> List[Track]:
    """
    Greedy IoU linking of per-frame detections into tracks.

    For every consecutive frame pair, same-class candidate pairs are visited in
    descending IoU order (ties: smaller previous index, then smaller current index)
    and accepted while both ends are free and IoU >= `iou_threshold`. Unmatched
    detections start new tracks. Output tracks carry no shot yet.
    """
    tracks: Dict[int, List[Detection]] = {}
    next_id = 0
    # track id of each detection in the previous frame
    prev_ids: List[int] = []
    prev_dets: List[Detection] = []
    for frame in stream.frames:
        cur_dets = list(frame.detections)
        cur_ids = [-1] * len(cur_dets)
        candidates = []
        for i, prev in enumerate(prev_dets):
            for j, cur in enumerate(cur_dets):
                if prev.source_class != cur.source_class:
                    continue
                score = iou(prev.box, cur.box)
                if score >= iou_threshold:
                    candidates.append((-score, i, j))
        candidates.sort()
        used_prev = set()
        for _, i, j in candidates:
            if i in used_prev or cur_ids[j] != -1:
                continue
            used_prev.add(i)
            cur_ids[j] = prev_ids[i]
        for j, det in enumerate(cur_dets):
            if cur_ids[j] == -1:
                cur_ids[j] = next_id
                tracks[next_id] = []
                next_id += 1
            tracks[cur_ids[j]].append(det)
        prev_ids, prev_dets = cur_ids, cur_dets
    return [Track(track_id=tid, detections=dets) for tid, dets in tracks.items()]
