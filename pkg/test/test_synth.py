import numpy as np
import pytest
from pydantic import ValidationError

from objtx.core.finetune.baselines import pool_baseline
from objtx.core.models.models import GenConfig, OracleQuery, PoolMode, SourceClass, TaskKind
from objtx.core.preprocess.shots import shot_index
from objtx.core.preprocess.spans import center_span
from objtx.core.synth.generator import center_window, generate_corpus, oracle_predict, smoothed_label
from objtx.io.corpus import corpus_records
from objtx.utils.errors import UsageError


@pytest.fixture(scope="module")
def roomy():
    """Enough feature dimensions for orthonormal prototypes, and room for objects and extra shots."""
    config = GenConfig(
        n_movies=3,
        segments_per_movie=2,
        segment_length_s=120,
        span_length_s=60,
        instances_per_segment=6,
        detections_per_instance=6,
        D_z=16,
        d_label=4,
        theme_dim=2,
        n_scenes=3,
        seed=5,
    )
    return generate_corpus(config)


class TestLayout:
    def test_same_config_same_corpus(self, gen_config):
        a = list(corpus_records(generate_corpus(gen_config).corpus))
        b = list(corpus_records(generate_corpus(gen_config).corpus))
        assert a == b

    def test_seed_changes_corpus(self, gen_config):
        a = list(corpus_records(generate_corpus(gen_config).corpus))
        b = list(corpus_records(generate_corpus(gen_config.model_copy(update={"seed": 1})).corpus))
        assert a != b

    def test_counts_and_ids(self, tiny_synth, gen_config):
        videos = tiny_synth.videos
        assert len(videos) == gen_config.n_movies * gen_config.segments_per_movie
        assert videos[0].video_id == "movie0000_seg00"
        assert len({v.movie_id for v in videos}) == gen_config.n_movies
        for video in videos:
            assert video.segment_id == video.video_id
            assert len(video.tracks) == gen_config.instances_per_segment
            assert all(len(t.detections) == gen_config.detections_per_instance for t in video.tracks)

    def test_center_span_holds_a_cut(self, roomy):
        c0, c1 = center_window(roomy.config)
        for video in roomy.videos:
            assert 2 <= len(video.shots) <= 4
            cuts = [s.start for s in video.shots[1:]]
            assert any(c0 < c < c1 for c in cuts)

    def test_anchor_pair_shares_the_center_shot(self, roomy):
        for video in roomy.videos:
            script = roomy.script(video.video_id)
            assert shot_index(video.shots, video.duration / 2.0) == script.anchor_shot
            tracks = {t.track_id: t for t in video.tracks}
            for instance in script.instances[:2]:
                assert tracks[instance.track_ids[0]].shot_id == video.shots[script.anchor_shot].shot_id
            assert script.instances[0].partner == 1

    def test_objects(self, roomy):
        for video in roomy.videos:
            objects = [t for t in video.tracks if t.source_class is SourceClass.OBJECT]
            assert len(objects) == 1
            assert all(d.pseudo_label is None for d in objects[0].detections)

    def test_cross_cut_instances_are_split(self, gen_config):
        synth = generate_corpus(gen_config.model_copy(update={"cross_cut_instances": 1}))
        for video in synth.videos:
            script = synth.script(video.video_id)
            assert len(script.instances[-1].track_ids) == 2
            assert len(video.tracks) == gen_config.instances_per_segment + 2

    def test_signatures_and_raw_cover_every_second(self, tiny_synth):
        for video, raw in zip(tiny_synth.videos, tiny_synth.corpus.raw):
            assert raw.video_id == video.video_id
            assert [f.t for f in raw.frames] == [float(t) for t in range(int(video.duration))]
            n_dets = sum(len(t.detections) for t in video.tracks)
            assert sum(len(f.detections) for f in raw.frames) == n_dets
            sigs = tiny_synth.corpus.signatures[video.video_id]
            assert all(abs(s.hist.sum() - 1.0) < 1e-9 for s in sigs)

    def test_invalid_config(self):
        with pytest.raises(ValidationError):
            GenConfig(d_label=5)
        with pytest.raises(ValidationError):
            GenConfig(span_length_s=20, detections_per_instance=8)


class TestPlantedStructure:
    def test_features_follow_roles(self, roomy):
        for video in roomy.videos:
            script = roomy.script(video.video_id)
            tracks = {t.track_id: t for t in video.tracks}
            for instance in script.instances:
                if instance.source_class is SourceClass.OBJECT:
                    continue
                dets = [d for tid in instance.track_ids for d in tracks[tid].detections]
                for det, role in zip(dets, instance.roles):
                    assert int(np.argmax(role_scores(roomy, det.z))) == role
                    np.testing.assert_allclose(det.pseudo_label, smoothed_label(role, roomy.config.d_label))

    def test_roles_stay_in_the_shot_activity(self, roomy):
        for video in roomy.videos:
            script = roomy.script(video.video_id)
            tracks = {t.track_id: t for t in video.tracks}
            for instance in script.instances:
                if instance.source_class is SourceClass.OBJECT:
                    continue
                dets = [d for tid in instance.track_ids for d in tracks[tid].detections]
                for det, role in zip(dets, instance.roles):
                    activity = script.shot_activities[shot_index(video.shots, det.t)]
                    assert role // 2 == activity

    def test_labels(self, roomy):
        for video in roomy.videos:
            script = roomy.script(video.video_id)
            labels = roomy.corpus.task_labels
            assert labels("scene")[video.video_id] == script.scene
            first, second = script.instances[0], script.instances[1]
            anchor_activity = script.shot_activities[script.anchor_shot]
            same = (2 * anchor_activity + first.role_bit) == (2 * anchor_activity + second.role_bit)
            assert labels("agreement")[video.video_id] == float(same)
            assert labels("transition")[video.video_id] in (0.0, 1.0)

    def test_transition_from_the_shots_of_the_center_span(self, roomy):
        config = roomy.config
        start = (config.segment_length_s - config.span_length_s) / 2.0
        end = start + config.span_length_s
        labels = roomy.corpus.task_labels("transition")
        assert any(len(video.shots) > 2 for video in roomy.videos)
        for video in roomy.videos:
            activities = roomy.script(video.video_id).shot_activities
            inside = [i for i, shot in enumerate(sorted(video.shots, key=lambda s: s.start)) if shot.start < end and shot.end > start]
            assert len(inside) == 2
            assert labels[video.video_id] == float((activities[inside[0]] + activities[inside[-1]]) % 2)

    def test_task_specs(self, roomy):
        assert roomy.task_spec("scene").kind is TaskKind.CLASSIFICATION
        assert roomy.task_spec("scene").n_classes == 3
        assert roomy.task_spec("intensity").kind is TaskKind.REGRESSION
        with pytest.raises(UsageError):
            roomy.task_spec("nope")

    def test_ava_targets(self, roomy):
        assert len(roomy.corpus.ava) == 2 * len(roomy.videos)
        for target in roomy.corpus.ava:
            assert target.labels.sum() in (1.0, 2.0)
            track = next(t for t in roomy.corpus.video(target.video_id).tracks if t.track_id == target.track_id)
            assert target.short_term.shape == (len(track.detections), roomy.config.d_label)


def role_scores(synth, z):
    """Projection of a feature onto each role prototype."""
    return synth.role_prototypes @ z


class TestOracle:
    def test_masked_role(self, tiny_synth):
        video = tiny_synth.videos[0]
        track = video.tracks[0]
        answer = oracle_predict(tiny_synth, OracleQuery(kind="masked_role", video_id=video.video_id, track_id=track.track_id, det_index=1))
        np.testing.assert_allclose(answer, track.detections[1].pseudo_label)

    def test_compatible(self, tiny_synth):
        a, b = tiny_synth.videos[0].video_id, tiny_synth.videos[1].video_id
        assert oracle_predict(tiny_synth, OracleQuery(kind="compatible", video_id=a, other_video_id=a))
        assert not oracle_predict(tiny_synth, OracleQuery(kind="compatible", video_id=a, other_video_id=b))

    def test_task_label(self, tiny_synth):
        video_id = tiny_synth.videos[2].video_id
        value = oracle_predict(tiny_synth, OracleQuery(kind="task_label", video_id=video_id, task="scene"))
        assert value == tiny_synth.corpus.task_labels("scene")[video_id]

    def test_bad_queries(self, tiny_synth):
        video_id = tiny_synth.videos[0].video_id
        with pytest.raises(UsageError):
            oracle_predict(tiny_synth, OracleQuery(kind="task_label", video_id="missing", task="scene"))
        with pytest.raises(UsageError):
            oracle_predict(tiny_synth, OracleQuery(kind="masked_role", video_id=video_id, track_id=99))
        with pytest.raises(UsageError):
            oracle_predict(tiny_synth, OracleQuery(kind="masked_role", video_id=video_id, track_id=0, det_index=50))


def short_term_vectors(synth, videos):
    """The detection feature nearest the center of each video's center span."""
    vectors = []
    for video in videos:
        span = center_span(video, synth.config.span_length_s)
        z = np.stack([d.z for t in span.tracks for d in t.detections])
        vectors.append(pool_baseline(span, PoolMode.SHORT_TERM, features=z).data)
    return np.stack(vectors)


def linear_readout(train_x, train_y, test_x, n_classes):
    """Least-squares fit of one-hot targets; predicts the arg-max class."""
    design = np.hstack([train_x, np.ones((len(train_x), 1))])
    weights, *_ = np.linalg.lstsq(design, np.eye(n_classes)[train_y], rcond=None)
    return np.argmax(np.hstack([test_x, np.ones((len(test_x), 1))]) @ weights, axis=1)


@pytest.mark.slow
class TestTierReachability:
    @pytest.fixture(scope="class")
    def large(self):
        return generate_corpus(GenConfig(n_movies=150, seed=0))

    def accuracy_and_chance(self, synth, task):
        labels = synth.corpus.task_labels(task)
        train = [v for v in synth.videos if int(v.movie_id[len("movie") :]) < 75]
        test = [v for v in synth.videos if int(v.movie_id[len("movie") :]) >= 75]
        train_y = np.array([int(labels[v.video_id]) for v in train])
        test_y = np.array([int(labels[v.video_id]) for v in test])
        n_classes = int(max(train_y.max(), test_y.max())) + 1
        predicted = linear_readout(short_term_vectors(synth, train), train_y, short_term_vectors(synth, test), n_classes)
        chance = np.bincount(test_y, minlength=n_classes).max() / len(test_y)
        return float(np.mean(predicted == test_y)), float(chance)

    def test_scene_is_read_from_one_detection(self, large):
        accuracy, _ = self.accuracy_and_chance(large, "scene")
        assert accuracy == 1.0

    @pytest.mark.parametrize("task", ["agreement", "transition"])
    def test_long_range_labels_are_out_of_reach(self, large, task):
        accuracy, chance = self.accuracy_and_chance(large, task)
        assert accuracy <= chance + 0.10
