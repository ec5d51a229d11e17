"""
Deterministic desk-scale corpora with planted long-range structure.

Every segment becomes one video. Its shots carry an activity; persons act out one
role of their shot's activity pair and drift between the two roles along a sticky
Markov chain, so a masked person's role is predictable from the others in the shot
but not from its neighbors in time alone. End-task labels come in three tiers:

- scene / intensity: readable from any single detection (the theme term of z)
- agreement: whether the two persons of the anchor shot hold the same role
- transition: parity of the activities of the first and last shot of the center span
"""

import math
from typing import Dict, List, Optional, Tuple

import numpy as np

from objtx.core.models.models import (
    AvaTarget,
    Corpus,
    Detection,
    FrameSignature,
    GenConfig,
    InstanceScript,
    Label,
    LatentScript,
    OracleQuery,
    RawDetectionStream,
    RawFrame,
    Shot,
    SourceClass,
    TaskKind,
    TaskSpec,
    Track,
    Video,
)
from objtx.core.preprocess.shots import shot_index
from objtx.utils.errors import ConfigError, UsageError
from objtx.utils.logger import logger
from objtx.utils.rng import CORPUS, stream

ROLE_SCALE = 2.0
THEME_JITTER = 0.1
LABEL_SMOOTHING = 0.05
SHORT_TERM_SCALE = 2.0
BOX_SIZE = 0.25
BOX_DRIFT = 0.01
GRID = 3
HIST_NOISE = 0.002
MIN_SHOT_CONTRAST = 0.5

TASK_KINDS = {
    "scene": TaskKind.CLASSIFICATION,
    "intensity": TaskKind.REGRESSION,
    "agreement": TaskKind.CLASSIFICATION,
    "transition": TaskKind.CLASSIFICATION,
}
TASK_TIERS = {"scene": "a", "intensity": "a", "agreement": "b", "transition": "c"}


class SyntheticCorpus:
    def __init__(
        self,
        config: GenConfig,
        corpus: Corpus,
        scripts: Dict[str, LatentScript],
        role_prototypes: np.ndarray,
        object_prototypes: np.ndarray,
        theme_map: np.ndarray,
    ):
        """
        A generated corpus plus the latent script that produced it.

        :param role_prototypes: (d_label x D_z) feature prototype of each role
        :param object_prototypes: (d_label/2 x D_z) feature prototype of each activity's objects
        :param theme_map: (D_z x theme_dim) projection of the segment theme into feature space
        """
        self.config = config
        self.corpus = corpus
        self.scripts = scripts
        self.role_prototypes = role_prototypes
        self.object_prototypes = object_prototypes
        self.theme_map = theme_map

    @property
    def videos(self) -> List[Video]:
        return self.corpus.videos

    def script(self, video_id: str) -> LatentScript:
        if video_id not in self.scripts:
            raise UsageError(f"Unknown video: {video_id}")
        return self.scripts[video_id]

    def task_spec(self, name: str) -> TaskSpec:
        if name not in TASK_KINDS:
            raise UsageError(f"Unknown task: {name}")
        n_classes = {"scene": self.config.n_scenes, "agreement": 2, "transition": 2}.get(name)
        return TaskSpec(name=name, kind=TASK_KINDS[name], n_classes=n_classes, labels=self.corpus.task_labels(name))


def shot_margin(config: GenConfig) -> int:
    """Shortest shot the layout produces: room for a full track plus its guard seconds."""
    return config.detections_per_instance + 4


def center_window(config: GenConfig) -> Tuple[int, int]:
    """Whole seconds covered by the span centered on a segment."""
    offset = (config.segment_length_s - config.span_length_s) / 2.0
    return int(math.ceil(offset)), int(math.floor(offset + config.span_length_s))


def smoothed_label(role: int, d_label: int) -> np.ndarray:
    out = np.full(d_label, LABEL_SMOOTHING / d_label)
    out[role] += 1.0 - LABEL_SMOOTHING
    return out


def _basis(rng: np.random.Generator, dim: int, n: int) -> np.ndarray:
    """n directions in R^dim, orthonormal whenever n <= dim."""
    if n <= dim:
        q, _ = np.linalg.qr(rng.standard_normal((dim, dim)))
        return q[:, :n]
    return rng.standard_normal((dim, n)) / math.sqrt(dim)


def _shot_histograms(rng: np.random.Generator, n_shots: int, bins: int) -> List[np.ndarray]:
    hists: List[np.ndarray] = []
    for _ in range(n_shots):
        for _attempt in range(100):
            h = rng.dirichlet(np.full(bins, 0.5))
            if not hists or 0.5 * np.abs(h - hists[-1]).sum() > MIN_SHOT_CONTRAST:
                break
        else:
            h = np.roll(hists[-1], bins // 2)
        hists.append(h)
    return hists


def _cell_box(cell: int) -> np.ndarray:
    row, col = divmod(cell, GRID)
    top = row / GRID + 0.04
    left = col / GRID + 0.04
    return np.array([top, top + BOX_SIZE, left, left + BOX_SIZE])


class _VideoBuilder:
    def __init__(self, config: GenConfig, rng: np.random.Generator, world: Dict[str, np.ndarray]):
        self.config = config
        self.rng = rng
        self.world = world

    def _cuts(self) -> Tuple[List[int], int]:
        cfg, rng = self.config, self.rng
        margin = shot_margin(cfg)
        c0, c1 = center_window(cfg)
        lo = c0 + margin
        cut = int(rng.integers(lo, max(lo, c1 - margin) + 1))
        cuts = [cut]
        add_left, add_right = rng.random(2) < 0.5
        if c0 - margin >= margin and add_left:
            cuts.insert(0, int(rng.integers(margin, c0 - margin + 1)))
        if cfg.segment_length_s - margin >= c1 + margin and add_right:
            cuts.append(int(rng.integers(c1 + margin, cfg.segment_length_s - margin + 1)))
        return cuts, cut

    def _start_window(self, shot: Shot, center: bool) -> Tuple[int, int]:
        n = self.config.detections_per_instance
        lo = int(math.ceil(shot.start)) + 1
        hi = int(math.floor(shot.end)) - 2 - (n - 1)
        if center:
            c0, c1 = center_window(self.config)
            lo = max(lo, c0)
            hi = min(hi, c1 - 1 - (n - 1))
        return lo, max(lo, hi)

    def build(self, movie_id: str, video_id: str, split_tracks: bool):
        cfg, rng, world = self.config, self.rng, self.world
        n_pairs = cfg.d_label // 2
        duration = cfg.segment_length_s
        cuts, cut = self._cuts()
        bounds = [0] + cuts + [duration]
        shots = [Shot(shot_id=i, start=float(a), end=float(b)) for i, (a, b) in enumerate(zip(bounds, bounds[1:]))]
        left = cuts.index(cut)
        right = left + 1
        anchor = shot_index(shots, duration / 2.0)
        other = right if anchor == left else left
        center_shots = {left, right}

        scene = int(rng.integers(cfg.n_scenes))
        theme = world["scene_protos"][scene] + THEME_JITTER * rng.standard_normal(cfg.theme_dim)
        theme_term = world["theme_map"] @ theme
        activities = [int(a) for a in rng.integers(n_pairs, size=len(shots))]

        n_base = cfg.instances_per_segment
        n_objects = int(round(cfg.object_fraction * (n_base - 3)))
        n_total = n_base + cfg.cross_cut_instances
        if cfg.cross_cut_instances and cfg.detections_per_instance < 2:
            raise ConfigError("cross-cut instances need at least 2 detections per instance")

        free = {i: [int(c) for c in rng.permutation(GRID * GRID)] for i in range(len(shots))}

        def take(shot: int, also: Optional[int] = None) -> int:
            for c in free[shot]:
                if also is None or c in free[also]:
                    free[shot].remove(c)
                    if also is not None:
                        free[also].remove(c)
                    return c
            raise ConfigError(f"too many instances for the {GRID}x{GRID} layout of shot {shot}")

        # instance -> (list of shots, cell)
        layout: List[Tuple[List[int], int]] = [None] * n_total
        for i in range(n_base, n_total):
            layout[i] = ([left, right], take(left, right))
        layout[0] = ([anchor], take(anchor))
        layout[1] = ([anchor], take(anchor))
        layout[2] = ([other], take(other))
        for i in range(3, n_base):
            open_shots = [s for s in range(len(shots)) if free[s]]
            if not open_shots:
                raise ConfigError(f"too many instances for {len(shots)} shots")
            shot = int(open_shots[int(rng.integers(len(open_shots)))])
            layout[i] = ([shot], take(shot))

        role_bits = [int(b) for b in rng.integers(2, size=n_total)]
        instances: List[InstanceScript] = []
        pieces: List[List[List[Detection]]] = []
        for i, (inst_shots, cell) in enumerate(layout):
            is_object = 3 <= i < 3 + n_objects
            if len(inst_shots) == 2:
                half = max(1, cfg.detections_per_instance // 2)
                times = cut - half + np.arange(cfg.detections_per_instance)
            else:
                lo, hi = self._start_window(shots[inst_shots[0]], inst_shots[0] in center_shots)
                times = int(rng.integers(lo, hi + 1)) + np.arange(cfg.detections_per_instance)
            bit = role_bits[i]
            roles: List[int] = []
            by_shot: Dict[int, List[Detection]] = {}
            base_box = _cell_box(cell)
            for t in times:
                shot = shot_index(shots, float(t))
                act = activities[shot]
                box = np.clip(base_box + rng.uniform(-BOX_DRIFT, BOX_DRIFT, 4), 0.0, 1.0)
                noise = cfg.noise_scale * rng.standard_normal(cfg.D_z)
                if is_object:
                    z = world["object_protos"][act] + theme_term + noise
                    det = Detection(t=float(t), box=box, z=z, source_class=SourceClass.OBJECT)
                else:
                    if roles and rng.random() >= cfg.role_stickiness:
                        bit = 1 - bit
                    role = 2 * act + bit
                    roles.append(role)
                    z = world["role_protos"][role] + theme_term + noise
                    det = Detection(t=float(t), box=box, z=z, pseudo_label=smoothed_label(role, cfg.d_label))
                by_shot.setdefault(shot, []).append(det)
            pieces.append([by_shot[s] for s in sorted(by_shot)])
            instances.append(
                InstanceScript(
                    track_ids=[],
                    source_class=SourceClass.OBJECT if is_object else SourceClass.PERSON,
                    role_bit=role_bits[i],
                    roles=roles,
                    partner={0: 1, 1: 0}.get(i),
                )
            )

        tracks: List[Track] = []
        next_id = n_total
        for i, inst_pieces in enumerate(pieces):
            if not split_tracks and len(inst_pieces) > 1:
                merged = [d for piece in inst_pieces for d in piece]
                tracks.append(Track(track_id=i, detections=merged, shot_id=layout[i][0][0]))
                instances[i].track_ids.append(i)
                continue
            for k, piece in enumerate(inst_pieces):
                track_id = i if k == 0 else next_id
                if k > 0:
                    next_id += 1
                tracks.append(Track(track_id=track_id, detections=piece, shot_id=shot_index(shots, piece[0].t)))
                instances[i].track_ids.append(track_id)
        tracks.sort(key=lambda tr: tr.track_id)

        video = Video(
            video_id=video_id, movie_id=movie_id, segment_id=video_id, duration=float(duration), shots=shots, tracks=tracks
        )

        frames: Dict[int, List[Detection]] = {t: [] for t in range(duration)}
        for inst_pieces in pieces:
            for piece in inst_pieces:
                for det in piece:
                    frames[int(det.t)].append(det)
        raw = RawDetectionStream(video_id=video_id, frames=[RawFrame(t=float(t), detections=frames[t]) for t in range(duration)])

        hists = _shot_histograms(rng, len(shots), cfg.hist_bins)
        signatures = []
        for t in range(duration):
            h = np.abs(hists[shot_index(shots, float(t))] + HIST_NOISE * rng.standard_normal(cfg.hist_bins))
            signatures.append(FrameSignature(t=float(t), hist=h / h.sum()))

        base_roles = [2 * activities[layout[i][0][0]] + role_bits[i] for i in range(n_total)]
        labels = {
            "scene": float(scene),
            "intensity": float(theme @ world["intensity_w"]),
            "agreement": float(base_roles[0] == base_roles[1]),
            "transition": float((activities[left] + activities[right]) % 2),
        }

        ava = []
        for i in (0, 1):
            partner = instances[i].partner
            target = np.zeros(cfg.d_label)
            target[base_roles[i]] = 1.0
            target[base_roles[partner]] = 1.0
            eye = np.eye(cfg.d_label)
            short_term = np.stack(
                [SHORT_TERM_SCALE * eye[r] + cfg.short_term_noise * rng.standard_normal(cfg.d_label) for r in instances[i].roles]
            )
            ava.append(AvaTarget(video_id=video_id, track_id=instances[i].track_ids[0], labels=target, short_term=short_term))

        script = LatentScript(
            video_id=video_id,
            scene=scene,
            theme=theme,
            cuts=cuts,
            shot_activities=activities,
            anchor_shot=anchor,
            instances=instances,
            labels=labels,
        )
        return video, raw, signatures, labels, ava, script


def generate_corpus(config: GenConfig, split_tracks: bool = True) -> SyntheticCorpus:
    """
    Generate the corpus described by `config`; the same config always yields the same corpus.

    :param config: generator settings, including the seed
    :param split_tracks: when False, instances crossing a cut stay one (invalid) track
    """
    rng = stream(config.seed, CORPUS)
    n_pairs = config.d_label // 2
    basis = _basis(rng, config.D_z, config.d_label + config.theme_dim + n_pairs)
    world = {
        "role_protos": ROLE_SCALE * basis[:, : config.d_label].T,
        "theme_map": basis[:, config.d_label : config.d_label + config.theme_dim],
        "object_protos": ROLE_SCALE * basis[:, config.d_label + config.theme_dim :].T,
        "scene_protos": rng.standard_normal((config.n_scenes, config.theme_dim)),
        "intensity_w": rng.standard_normal(config.theme_dim) / math.sqrt(config.theme_dim),
    }
    corpus = Corpus()
    scripts: Dict[str, LatentScript] = {}
    for m in range(config.n_movies):
        builder = _VideoBuilder(config, stream(config.seed, CORPUS, m + 1), world)
        movie_id = f"movie{m:04d}"
        for s in range(config.segments_per_movie):
            video_id = f"{movie_id}_seg{s:02d}"
            video, raw, signatures, labels, ava, script = builder.build(movie_id, video_id, split_tracks)
            corpus.videos.append(video)
            corpus.raw.append(raw)
            corpus.signatures[video_id] = signatures
            corpus.labels.extend(Label(video_id=video_id, task=k, value=v) for k, v in labels.items())
            corpus.ava.extend(ava)
            scripts[video_id] = script
    logger.info(f"Generated {len(corpus.videos)} videos from {config.n_movies} movies (seed {config.seed})")
    return SyntheticCorpus(config, corpus, scripts, world["role_protos"], world["object_protos"], world["theme_map"])


def oracle_predict(corpus: SyntheticCorpus, query: OracleQuery):
    """
    Ground truth from the latent script.

    masked_role -> the detection's pseudo-label distribution; compatible -> whether two
    videos come from one segment; task_label -> the planted end-task label.
    """
    script = corpus.script(query.video_id)
    if query.kind == "compatible":
        if query.other_video_id is None:
            raise UsageError("compatible queries need other_video_id")
        other = corpus.script(query.other_video_id)
        return corpus.corpus.video(script.video_id).segment_id == corpus.corpus.video(other.video_id).segment_id
    if query.kind == "task_label":
        if query.task not in script.labels:
            raise UsageError(f"Unknown task: {query.task}")
        return script.labels[query.task]
    for inst in script.instances:
        if query.track_id not in inst.track_ids:
            continue
        if inst.source_class is SourceClass.OBJECT:
            raise UsageError(f"track {query.track_id} is an object and has no role")
        video = corpus.corpus.video(script.video_id)
        sizes = {t.track_id: len(t.detections) for t in video.tracks}
        offset = 0
        for track_id in inst.track_ids:
            if track_id == query.track_id:
                break
            offset += sizes[track_id]
        index = offset + (query.det_index or 0)
        if not 0 <= (query.det_index or 0) < sizes[query.track_id]:
            raise UsageError(f"track {query.track_id} has no detection {query.det_index}")
        return smoothed_label(inst.roles[index], corpus.config.d_label)
    raise UsageError(f"Unknown track {query.track_id} in {query.video_id}")
