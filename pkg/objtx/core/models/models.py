from enum import Enum
from typing import Annotated, Dict, List, Literal, Optional, Tuple

import numpy as np
from pydantic import BaseModel, BeforeValidator, ConfigDict, PlainSerializer, field_validator, model_validator
from pydantic.fields import Field


def _as_float_array(value) -> np.ndarray:
    return np.asarray(value, dtype=np.float64)


FloatArray = Annotated[
    np.ndarray,
    BeforeValidator(_as_float_array),
    PlainSerializer(lambda a: a.tolist(), return_type=list),
]


def _split_csv(value):
    if isinstance(value, str):
        return tuple(int(v) for v in value.replace(" ", "").split(",") if v)
    return value


# Global
class Mode(str, Enum):
    TRAIN = "train"
    EVAL = "eval"


class SourceClass(str, Enum):
    PERSON = "person"
    OBJECT = "object"


class CorruptionMode(str, Enum):
    LEARNED_REPLACE = "learned-replace"
    RANDOM_FEATURE = "random-feature"
    KEEP = "keep"


class Objective(str, Enum):
    NONE = "none"
    MASK = "mask"
    MASK_COMPAT = "mask+compat"


class TaskKind(str, Enum):
    CLASSIFICATION = "classification"
    REGRESSION = "regression"


class PoolMode(str, Enum):
    AVG = "avg"
    MAX = "max"
    SHORT_TERM = "short-term"


class Record(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)


# Track model
class Detection(Record):
    t: float = Field(description="Seconds from the start of the enclosing span (or video)")
    box: FloatArray = Field(description="Normalized (top, bottom, left, right) corners in [0, 1]")
    z: FloatArray = Field(description="Short-term feature vector of dimension D_z")
    pseudo_label: Optional[FloatArray] = Field(
        default=None, description="Soft class distribution from the short-term model"
    )
    source_class: SourceClass = SourceClass.PERSON


class Track(Record):
    track_id: int
    detections: List[Detection]
    shot_id: Optional[int] = Field(default=None, description="The shot this instance lives in")

    @property
    def source_class(self) -> SourceClass:
        return self.detections[0].source_class

    @property
    def start(self) -> float:
        return self.detections[0].t

    @property
    def end(self) -> float:
        return self.detections[-1].t


class Shot(Record):
    shot_id: int
    start: float
    end: float

    def contains(self, t: float) -> bool:
        return self.start <= t < self.end


class Span(Record):
    video_id: str
    segment_id: str
    movie_id: str = ""
    start_time: float = 0.0
    length: float = 60.0
    tracks: List[Track] = Field(default_factory=list)
    shots: List[Shot] = Field(default_factory=list)
    truncated: bool = Field(default=False, description="Set when the source video was shorter than `length`")

    @property
    def n_detections(self) -> int:
        return sum(len(track.detections) for track in self.tracks)


class Video(Record):
    video_id: str
    movie_id: str
    segment_id: str
    duration: float
    shots: List[Shot] = Field(default_factory=list)
    tracks: List[Track] = Field(default_factory=list)


class ValidationReport(BaseModel):
    ok: bool
    violation: Optional[str] = None
    path: Optional[str] = None


# Preprocess
class FrameSignature(Record):
    t: float
    hist: FloatArray


class RawFrame(Record):
    t: float
    detections: List[Detection] = Field(default_factory=list)


class RawDetectionStream(Record):
    video_id: str
    frames: List[RawFrame] = Field(default_factory=list)


# Object transformer
class ModelConfig(BaseModel):
    hidden: int = 768
    layers: int = 3
    heads: int = 12
    head_dim: int = 64
    ffn_dim: int = 3072
    dropout: float = 0.1
    n_instance_slots: int = 64
    n_shot_slots: int = 32
    d_label: int = 12
    D_z: int = 64
    use_objects: bool = False
    token_cap: Optional[int] = Field(default=None, description="Defaults to 256 (persons) or 512 (with objects)")
    precision: Literal["float32", "float64"] = "float32"

    @model_validator(mode="after")
    def check_invariants(self) -> "ModelConfig":
        if self.heads * self.head_dim != self.hidden:
            raise ValueError(f"heads*head_dim ({self.heads}*{self.head_dim}) must equal hidden ({self.hidden})")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError(f"dropout must be in [0, 1), got {self.dropout}")
        if self.token_cap is None:
            self.token_cap = 512 if self.use_objects else 256
        if self.token_cap < 2:
            raise ValueError("token_cap must leave room for [CLS] and one detection")
        return self


class GenConfig(BaseModel):
    n_movies: int = 40
    segments_per_movie: int = 4
    segment_length_s: int = 120
    span_length_s: int = 60
    instances_per_segment: int = 6
    detections_per_instance: int = 8
    D_z: int = 64
    d_label: int = 12
    theme_dim: int = 8
    n_scenes: int = 4
    noise_scale: float = 0.1
    role_stickiness: float = 0.9
    object_fraction: float = 0.34
    cross_cut_instances: int = 0
    short_term_noise: float = 1.0
    hist_bins: int = 16
    seed: int = 0

    @model_validator(mode="after")
    def check_invariants(self) -> "GenConfig":
        counts = (
            "n_movies", "segments_per_movie", "segment_length_s", "span_length_s",
            "instances_per_segment", "detections_per_instance", "D_z", "d_label",
            "theme_dim", "n_scenes", "hist_bins",
        )
        for name in counts:
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.noise_scale < 0:
            raise ValueError("noise_scale must be non-negative")
        if self.d_label % 2 or self.d_label < 4:
            raise ValueError("d_label must be even and at least 4 (roles come in activity pairs)")
        if self.instances_per_segment < 3:
            raise ValueError("instances_per_segment must be at least 3")
        if self.segment_length_s < self.span_length_s:
            raise ValueError("segment_length_s must be at least span_length_s")
        if self.span_length_s < 2 * (self.detections_per_instance + 4):
            raise ValueError("span_length_s is too short for two shots of tracks")
        if not 0.0 <= self.role_stickiness <= 1.0 or not 0.0 <= self.object_fraction <= 1.0:
            raise ValueError("role_stickiness and object_fraction are probabilities")
        return self


class TrainConfig(BaseModel):
    iterations: int = 2000
    batch: int = 16
    objective: Objective = Objective.MASK
    base_lr: float = 1e-4
    weight_decay: float = 0.01
    warmup_frac: float = 0.1
    mask_fraction: float = 0.15
    span_length: float = 60.0
    span_stride: float = 1.0
    finetune_lr: float = 2e-5
    epoch_grid: Tuple[int, ...] = (3, 5, 10, 20, 30, 50)
    batch_grid: Tuple[int, ...] = (16, 32)
    ava_iterations: int = 2000
    ava_lr: float = 1e-4
    log_every: int = 50

    @field_validator("epoch_grid", "batch_grid", mode="before")
    @classmethod
    def parse_grid(cls, value):
        return _split_csv(value)


# Pretrain
class MaskPlan(BaseModel):
    masked: Dict[int, CorruptionMode] = Field(description="track_id -> corruption mode of each masked instance")

    @property
    def masked_ids(self) -> List[int]:
        return sorted(self.masked)


class CompatBatch(Record):
    spans: List[Span]
    pairs: List[Tuple[int, int]] = Field(description="Indices into `spans` of each positive pair")

    def partner(self, index: int) -> int:
        for a, b in self.pairs:
            if a == index:
                return b
            if b == index:
                return a
        raise KeyError(index)

    def negatives(self, index: int) -> List[int]:
        """Every other example of the batch except `index` and its partner."""
        partner = self.partner(index)
        return [j for j in range(len(self.spans)) if j not in (index, partner)]


# Finetune / eval
class TaskSpec(BaseModel):
    name: str
    kind: TaskKind
    n_classes: Optional[int] = None
    labels: Dict[str, float] = Field(default_factory=dict, description="video_id -> label")

    @model_validator(mode="after")
    def check_invariants(self) -> "TaskSpec":
        if self.kind is TaskKind.CLASSIFICATION:
            if not self.n_classes or self.n_classes < 2:
                raise ValueError("classification tasks need n_classes >= 2")
            for video_id, label in self.labels.items():
                if label != int(label) or not 0 <= label < self.n_classes:
                    raise ValueError(f"label {label} of {video_id} outside [0, {self.n_classes})")
        else:
            for video_id, label in self.labels.items():
                if not np.isfinite(label):
                    raise ValueError(f"regression target of {video_id} is not finite")
        return self

    @property
    def n_outputs(self) -> int:
        return self.n_classes if self.kind is TaskKind.CLASSIFICATION else 1


class GridCell(BaseModel):
    epochs: int
    batch: int
    val_score: Optional[float] = None


class GridResult(BaseModel):
    kind: TaskKind
    cells: List[GridCell]
    chosen: GridCell
    test_score: float


class Label(Record):
    video_id: str
    task: str
    value: float


class AvaTarget(Record):
    video_id: str
    track_id: int
    labels: FloatArray = Field(description="Multi-hot per-class targets of the instance")
    short_term: FloatArray = Field(description="Short-term logits, one row per detection")


# Synthetic data
class OracleQuery(BaseModel):
    kind: Literal["masked_role", "compatible", "task_label"]
    video_id: str
    track_id: Optional[int] = None
    det_index: Optional[int] = None
    other_video_id: Optional[str] = None
    task: Optional[str] = None


class InstanceScript(BaseModel):
    track_ids: List[int] = Field(description="Track ids of this instance in the video, one per shot it visits")
    source_class: SourceClass
    role_bit: int = Field(description="Which role of the shot's activity pair the instance holds by default")
    roles: List[int] = Field(default_factory=list, description="Role class at each detection (persons only)")
    partner: Optional[int] = Field(default=None, description="Instance index of the co-acting person, if any")


class LatentScript(BaseModel):
    video_id: str
    scene: int
    theme: FloatArray
    cuts: List[int] = Field(description="Shot cut times in seconds")
    shot_activities: List[int]
    anchor_shot: int = Field(description="Index of the shot containing the video center")
    instances: List[InstanceScript]
    labels: Dict[str, float]

    model_config = ConfigDict(arbitrary_types_allowed=True)


# Corpus
class Corpus(BaseModel):
    """Everything a corpus file holds: videos with their tracks, task labels and raw inputs."""

    videos: List[Video] = Field(default_factory=list)
    labels: List[Label] = Field(default_factory=list)
    ava: List[AvaTarget] = Field(default_factory=list)
    raw: List[RawDetectionStream] = Field(default_factory=list)
    signatures: Dict[str, List[FrameSignature]] = Field(default_factory=dict)

    def video(self, video_id: str) -> Video:
        for video in self.videos:
            if video.video_id == video_id:
                return video
        raise KeyError(video_id)

    def task_labels(self, task: str) -> Dict[str, float]:
        return {label.video_id: label.value for label in self.labels if label.task == task}

    def task_names(self) -> List[str]:
        return sorted({label.task for label in self.labels})
