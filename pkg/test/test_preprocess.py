import numpy as np
import pytest

from objtx.core.models.models import Detection, FrameSignature, RawDetectionStream, RawFrame, Shot, SourceClass
from objtx.core.preprocess.pipeline import detection_key, preprocess_corpus, preprocess_stream
from objtx.core.preprocess.shots import assign_shots, detect_shots, signature_distance
from objtx.core.preprocess.spans import center_span, enumerate_spans, truncate_tokens
from objtx.core.preprocess.tracking import iou, link_tracks
from objtx.core.synth.generator import generate_corpus
from objtx.core.tracks.track_model import count_tokens, validate_video
from objtx.utils.errors import DataError, UsageError
from test.helpers import box_at, make_span, make_track, make_video

RESOLUTION = 1000


def rasterized_iou(box_a, box_b, resolution=RESOLUTION):
    """IoU counted on a pixel grid, a pixel belonging to a box when its center does."""
    centers = (np.arange(resolution) + 0.5) / resolution

    def rows_cols(box):
        top, bottom, left, right = box
        return (centers >= top) & (centers < bottom), (centers >= left) & (centers < right)

    rows_a, cols_a = rows_cols(box_a)
    rows_b, cols_b = rows_cols(box_b)
    area_a = rows_a.sum() * cols_a.sum()
    area_b = rows_b.sum() * cols_b.sum()
    inter = (rows_a & rows_b).sum() * (cols_a & cols_b).sum()
    union = area_a + area_b - inter
    return inter / union if union else 0.0


def det(t, box, source=SourceClass.PERSON):
    return Detection(t=float(t), box=np.asarray(box, dtype=float), z=np.zeros(6), source_class=source)


def raw_stream(frames):
    return RawDetectionStream(video_id="v", frames=[RawFrame(t=float(t), detections=d) for t, d in enumerate(frames)])


def partition(tracks):
    return {frozenset(detection_key(d) for d in t.detections) for t in tracks}


class TestIou:
    def test_identical(self):
        assert iou([0.1, 0.4, 0.2, 0.6], [0.1, 0.4, 0.2, 0.6]) == pytest.approx(1.0)

    def test_disjoint(self):
        assert iou([0.0, 0.2, 0.0, 0.2], [0.5, 0.7, 0.5, 0.7]) == 0.0

    def test_half_shifted(self):
        assert iou([0.0, 0.5, 0.0, 0.5], [0.0, 0.5, 0.25, 0.75]) == pytest.approx(1.0 / 3.0)

    def test_nested(self):
        assert iou([0.0, 1.0, 0.0, 1.0], [0.25, 0.75, 0.25, 0.75]) == pytest.approx(0.25)

    def test_matches_rasterized_count(self):
        rng = np.random.default_rng(3)

        def random_box():
            top, bottom = np.sort(rng.choice(RESOLUTION + 1, 2, replace=False)) / RESOLUTION
            left, right = np.sort(rng.choice(RESOLUTION + 1, 2, replace=False)) / RESOLUTION
            return [top, bottom, left, right]

        for _ in range(1000):
            a, b = random_box(), random_box()
            assert iou(a, b) == pytest.approx(rasterized_iou(a, b), abs=2e-3)


class TestLinkTracks:
    def test_stationary_box_is_one_track(self):
        tracks = link_tracks(raw_stream([[det(t, box_at(0))] for t in range(5)]))
        assert len(tracks) == 1
        assert len(tracks[0].detections) == 5
        assert tracks[0].shot_id is None

    def test_no_identity_switch_when_order_swaps(self):
        a, b = box_at(0), box_at(8)
        frames = [[det(0, a), det(0, b)], [det(1, b), det(1, a)], [det(2, a), det(2, b)]]
        tracks = link_tracks(raw_stream(frames))
        assert [t.track_id for t in tracks] == [0, 1]
        assert all(np.array_equal(d.box, a) for d in tracks[0].detections)
        assert all(np.array_equal(d.box, b) for d in tracks[1].detections)

    def test_jump_starts_new_track(self):
        tracks = link_tracks(raw_stream([[det(0, box_at(0))], [det(1, box_at(4))]]))
        assert len(tracks) == 2

    def test_threshold_is_inclusive(self):
        a, b = [0.0, 0.5, 0.0, 0.5], [0.0, 0.5, 0.0, 0.25]
        assert iou(a, b) == 0.5
        assert len(link_tracks(raw_stream([[det(0, a)], [det(1, b)]]), 0.5)) == 1
        assert len(link_tracks(raw_stream([[det(0, a)], [det(1, b)]]), 0.51)) == 2

    def test_tie_goes_to_earlier_previous_detection(self):
        box = box_at(2)
        tracks = link_tracks(raw_stream([[det(0, box), det(0, box)], [det(1, box)]]))
        assert [len(t.detections) for t in tracks] == [2, 1]

    def test_classes_never_link(self):
        box = box_at(3)
        frames = [[det(0, box)], [det(1, box, SourceClass.OBJECT)]]
        assert len(link_tracks(raw_stream(frames))) == 2

    def test_empty_frame_breaks_tracks(self):
        box = box_at(3)
        assert len(link_tracks(raw_stream([[det(0, box)], [], [det(2, box)]]))) == 2

    def test_partitions_generated_stream(self, tiny_synth):
        for raw in tiny_synth.corpus.raw:
            tracks = link_tracks(raw)
            n_raw = sum(len(f.detections) for f in raw.frames)
            assert sum(len(t.detections) for t in tracks) == n_raw
            assert len(partition(tracks)) == len(tracks)
            for track in tracks:
                times = [d.t for d in track.detections]
                assert times == sorted(times)


def signatures(hists):
    return [FrameSignature(t=float(t), hist=np.asarray(h, dtype=float)) for t, h in enumerate(hists)]


class TestShots:
    def test_constant_signature_is_one_shot(self):
        shots = detect_shots(signatures([[0.5, 0.5]] * 6))
        assert [(s.shot_id, s.start, s.end) for s in shots] == [(0, 0.0, 6.0)]

    def test_step_change_is_a_cut(self):
        shots = detect_shots(signatures([[1.0, 0.0]] * 3 + [[0.0, 1.0]] * 3), duration=10.0)
        assert [(s.start, s.end) for s in shots] == [(0.0, 3.0), (3.0, 10.0)]

    def test_distance_is_total_variation(self):
        a, b = signatures([[0.7, 0.3], [0.2, 0.8]])
        assert signature_distance(a, b) == pytest.approx(0.5)

    def test_no_signatures(self):
        with pytest.raises(UsageError):
            detect_shots([])

    def test_recovers_generated_cuts(self, gen_config):
        config = gen_config.model_copy(update={"segment_length_s": 120, "span_length_s": 60, "detections_per_instance": 8})
        synth = generate_corpus(config)
        for video in synth.videos:
            shots = detect_shots(synth.corpus.signatures[video.video_id], 0.3, video.duration)
            assert [(s.start, s.end) for s in shots] == [(s.start, s.end) for s in video.shots]

    def test_assign_keeps_single_shot_tracks(self):
        shots = [Shot(shot_id=0, start=0.0, end=10.0), Shot(shot_id=1, start=10.0, end=20.0)]
        tracks = assign_shots([make_track(3, [1.0, 2.0]), make_track(4, [12.0, 13.0], cell=1)], shots)
        assert [(t.track_id, t.shot_id) for t in tracks] == [(3, 0), (4, 1)]

    def test_assign_splits_at_cut(self):
        shots = [Shot(shot_id=0, start=0.0, end=10.0), Shot(shot_id=1, start=10.0, end=20.0)]
        tracks = assign_shots([make_track(0, [1.0]), make_track(5, [8.0, 9.0, 10.0, 11.0, 12.0], cell=1)], shots)
        assert [(t.track_id, t.shot_id, len(t.detections)) for t in tracks] == [(0, 0, 1), (5, 0, 2), (6, 1, 3)]

    def test_assign_rejects_detection_outside_shots(self):
        shots = [Shot(shot_id=0, start=0.0, end=10.0)]
        with pytest.raises(DataError):
            assign_shots([make_track(0, [9.0, 25.0])], shots)


class TestPipeline:
    def test_rebuilds_generated_tracks(self, gen_config):
        config = gen_config.model_copy(update={"cross_cut_instances": 1})
        synth = generate_corpus(config)
        signatures_by_video = synth.corpus.signatures
        for video, raw in zip(synth.videos, synth.corpus.raw):
            rebuilt = preprocess_stream(raw, signatures_by_video[video.video_id], video.movie_id, video.segment_id, video.duration)
            assert validate_video(rebuilt).ok
            assert partition(rebuilt.tracks) == partition(video.tracks)
            assert [(s.start, s.end) for s in rebuilt.shots] == [(s.start, s.end) for s in video.shots]

    def test_corpus_keeps_labels_and_remaps_ava(self, tiny_synth):
        corpus = tiny_synth.corpus
        rebuilt = preprocess_corpus(corpus)
        assert len(rebuilt.videos) == len(corpus.videos)
        assert rebuilt.labels == corpus.labels
        assert len(rebuilt.ava) == len(corpus.ava)
        for before, after in zip(corpus.ava, rebuilt.ava):
            old = corpus.video(before.video_id)
            new = rebuilt.video(after.video_id)
            old_track = next(t for t in old.tracks if t.track_id == before.track_id)
            new_track = next(t for t in new.tracks if t.track_id == after.track_id)
            assert detection_key(new_track.detections[0]) == detection_key(old_track.detections[0])
            assert len(new_track.detections) == after.short_term.shape[0]

    def test_videos_without_raw_inputs_pass_through(self, tiny_synth):
        corpus = tiny_synth.corpus.model_copy(update={"raw": [], "signatures": {}})
        rebuilt = preprocess_corpus(corpus)
        assert all(a is b for a, b in zip(rebuilt.videos, corpus.videos))


class TestSpans:
    @pytest.mark.parametrize("duration,expected", [(60.0, 1), (62.0, 3), (180.0, 121)])
    def test_window_count(self, duration, expected):
        spans = enumerate_spans(make_video("v", "m", [], duration=duration), 60.0, 1.0)
        assert len(spans) == expected
        assert spans[-1].start_time == duration - 60.0
        assert not any(s.truncated for s in spans)

    def test_short_video_gives_one_truncated_span(self):
        spans = enumerate_spans(make_video("v", "m", [make_track(0, [1.0, 2.0])], duration=40.0), 60.0)
        assert len(spans) == 1
        assert spans[0].truncated
        assert spans[0].length == 40.0

    def test_bad_stride(self):
        with pytest.raises(UsageError):
            enumerate_spans(make_video("v", "m", [], duration=80.0), 60.0, 0.0)

    def test_timestamps_become_span_relative(self):
        video = make_video("v", "m", [make_track(0, [10.0, 11.0, 12.0])], duration=80.0)
        spans = enumerate_spans(video, 60.0, 10.0)
        second = spans[1]
        assert second.start_time == 10.0
        assert [d.t for d in second.tracks[0].detections] == [0.0, 1.0, 2.0]
        assert spans[2].tracks == []

    def test_center_span(self):
        video = make_video("v", "m", [], duration=120.0)
        assert center_span(video, 60.0).start_time == 30.0


class TestTruncation:
    def test_long_track(self):
        track = make_track(0, [0.1 * k for k in range(400)])
        span = truncate_tokens(make_span([track], length=60.0), 256)
        kept = span.tracks[0].detections
        assert len(kept) == 255
        assert count_tokens(span) == 256
        assert kept[0].t == track.detections[0].t
        assert kept[-1].t == track.detections[-1].t

    def test_idempotent(self):
        track = make_track(0, [0.1 * k for k in range(400)])
        once = truncate_tokens(make_span([track], length=60.0), 256)
        assert truncate_tokens(once, 256) is once

    def test_under_cap_is_unchanged(self):
        span = make_span([make_track(0, [1.0, 2.0, 3.0])])
        assert truncate_tokens(span, 256) is span

    def test_proportional_cuts(self):
        tracks = [
            make_track(0, [0.1 * k for k in range(300)]),
            make_track(1, [0.1 * k for k in range(100)], cell=1),
            make_track(2, [0.1 * k for k in range(50)], cell=2),
        ]
        span = truncate_tokens(make_span(tracks, length=60.0), 256)
        sizes = [len(t.detections) for t in span.tracks]
        assert sum(sizes) == 255
        assert sizes == [170, 57, 28]

    def test_drops_latest_tracks_when_pairs_do_not_fit(self):
        tracks = [make_track(i, [0.1 * i, 0.1 * i + 0.05], cell=i % 9) for i in range(200)]
        span = truncate_tokens(make_span(tracks, length=60.0), 256)
        assert count_tokens(span) <= 256
        assert [t.track_id for t in span.tracks] == list(range(127))

    def test_cap_too_small(self):
        with pytest.raises(UsageError):
            truncate_tokens(make_span([]), 1)
