import math
from abc import ABC, abstractmethod
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from tqdm import trange

from objtx.core.finetune.baselines import pool_baseline
from objtx.core.finetune.metrics import better, eval_metrics
from objtx.core.finetune.splits import DatasetSplits
from objtx.core.models.models import (
    Corpus,
    GridCell,
    GridResult,
    Mode,
    PoolMode,
    Span,
    TaskKind,
    TaskSpec,
    TrainConfig,
    Video,
)
from objtx.core.numerics.functional import log_softmax, stack
from objtx.core.numerics.optim import AdamState, adam_step, update_lr
from objtx.core.numerics.tensor import Tensor, backward
from objtx.core.preprocess.spans import center_span
from objtx.core.transformer.embedding import prepare_span
from objtx.core.transformer.heads import head_task
from objtx.core.transformer.model import cls_vectors, encode_spans
from objtx.core.transformer.params import ModelParams
from objtx.utils import rng as rng_streams
from objtx.utils.errors import DataError
from objtx.utils.logger import MetricsLog, logger

EVAL_BATCH = 32


class TaskModel(ABC):
    """A video-level predictor whose last layer is the task head."""

    def __init__(self, params: ModelParams):
        self.params = params

    @abstractmethod
    def trainable(self) -> List[str]:
        pass

    @abstractmethod
    def forward(
        self,
        spans: Sequence[Span],
        mode: Mode = Mode.EVAL,
        slot_rng: Optional[np.random.Generator] = None,
        dropout_rng: Optional[np.random.Generator] = None,
    ) -> Tensor:
        """Task outputs, (batch x n_outputs)."""

    def with_params(self, params: ModelParams) -> "TaskModel":
        clone = self.__class__.__new__(self.__class__)
        clone.__dict__.update(self.__dict__)
        clone.params = params
        return clone

    def predict(self, spans: Sequence[Span]) -> np.ndarray:
        outputs = []
        for start in range(0, len(spans), EVAL_BATCH):
            outputs.append(self.forward(spans[start : start + EVAL_BATCH], Mode.EVAL).data)
        return np.concatenate(outputs, axis=0)


class TransformerTaskModel(TaskModel):
    """Encoder plus task head on v_cls; everything but the pretraining heads is fine-tuned."""

    name = "transformer"

    def trainable(self) -> List[str]:
        skip = ("head.mask.", "head.compat.", "head.fusion.")
        return [n for n in self.params.names() if not n.startswith(skip)]

    def forward(self, spans, mode=Mode.EVAL, slot_rng=None, dropout_rng=None) -> Tensor:
        hidden, _ = encode_spans(spans, self.params, mode, slot_rng, dropout_rng)
        return head_task(cls_vectors(hidden), self.params, mode, dropout_rng)


class PoolTaskModel(TaskModel):
    """Pooled token input vectors fed to the same task head; the embedding layer is trained too."""

    def __init__(self, params: ModelParams, pool_mode: PoolMode):
        super().__init__(params)
        self.pool_mode = PoolMode(pool_mode)
        self.name = f"{self.pool_mode.value}-pool" if self.pool_mode is not PoolMode.SHORT_TERM else "short-term"

    def trainable(self) -> List[str]:
        return self.params.names("embed.") + self.params.names("head.task.")

    def forward(self, spans, mode=Mode.EVAL, slot_rng=None, dropout_rng=None) -> Tensor:
        vectors = stack([pool_baseline(s, self.pool_mode, self.params, rng=slot_rng, emb_mode=mode) for s in spans])
        return head_task(vectors, self.params, mode, dropout_rng)


def task_from_labels(corpus: Corpus, name: str, kind: Optional[TaskKind] = None) -> TaskSpec:
    """TaskSpec of a labeled corpus task; integer-valued labels default to classification."""
    labels = corpus.task_labels(name)
    if not labels:
        raise DataError(f"corpus has no labels for task {name}")
    values = np.array(list(labels.values()))
    if kind is None:
        kind = TaskKind.CLASSIFICATION if np.all(values == np.round(values)) and values.min() >= 0 else TaskKind.REGRESSION
    n_classes = max(2, int(values.max()) + 1) if kind is TaskKind.CLASSIFICATION else None
    return TaskSpec(name=name, kind=kind, n_classes=n_classes, labels=labels)


def task_examples(videos: Sequence[Video], task: TaskSpec, config: TrainConfig, params: ModelParams) -> Tuple[List[Span], np.ndarray]:
    """One centered span per labeled video, prepared for the token cap."""
    spans, targets = [], []
    for video in videos:
        if video.video_id not in task.labels:
            continue
        spans.append(prepare_span(center_span(video, config.span_length), params.config))
        targets.append(task.labels[video.video_id])
    return spans, np.asarray(targets, dtype=np.float64)


def task_loss(outputs: Tensor, targets: np.ndarray, kind: TaskKind) -> Tensor:
    """Cross-entropy on class indices, or squared error on the single regression output."""
    if TaskKind(kind) is TaskKind.CLASSIFICATION:
        log_p = log_softmax(outputs, axis=-1)
        return log_p[np.arange(len(targets)), targets.astype(int)].mean() * -1.0
    diff = outputs[:, 0] - Tensor(targets, dtype=outputs.dtype)
    return (diff * diff).mean()


def score(model: TaskModel, spans: Sequence[Span], targets: np.ndarray, kind: TaskKind) -> float:
    outputs = model.predict(spans)
    predictions = outputs if TaskKind(kind) is TaskKind.CLASSIFICATION else outputs[:, 0]
    return eval_metrics(predictions, targets, kind)


def train_cell(
    model: TaskModel,
    spans: Sequence[Span],
    targets: np.ndarray,
    task: TaskSpec,
    cell: GridCell,
    config: TrainConfig,
    seed: int,
    cell_index: int,
    disable_tqdm: bool = True,
) -> TaskModel:
    """`cell.epochs` passes over shuffled mini-batches of `cell.batch` examples."""
    steps_per_epoch = int(math.ceil(len(spans) / cell.batch))
    total = cell.epochs * steps_per_epoch
    if total == 0:
        return model
    order_rng = rng_streams.stream(seed, rng_streams.GRID, cell_index)
    slot_rng = rng_streams.stream(seed, rng_streams.SLOTS, cell_index + 1)
    dropout_rng = rng_streams.stream(seed, rng_streams.DROPOUT, cell_index + 1)
    state = AdamState(weight_decay=config.weight_decay)
    names = model.trainable()
    step = 0
    for _ in trange(cell.epochs, disable=disable_tqdm, desc=f"finetune {cell.epochs}x{cell.batch}", leave=False):
        order = order_rng.permutation(len(spans))
        for start in range(0, len(spans), cell.batch):
            idx = order[start : start + cell.batch]
            step += 1
            outputs = model.forward([spans[i] for i in idx], Mode.TRAIN, slot_rng, dropout_rng)
            loss = task_loss(outputs, targets[idx], task.kind)
            grads = model.params.registry.collect_grads(backward(loss), names)
            lr = update_lr(step, total, config.finetune_lr, config.warmup_frac)
            adam_step(model.params.registry, grads, state, lr, names)
    return model


def finetune(
    splits: DatasetSplits,
    params: ModelParams,
    task: TaskSpec,
    config: TrainConfig,
    seed: int = 0,
    model: Optional[TaskModel] = None,
    metrics: Optional[MetricsLog] = None,
) -> Tuple[GridResult, TaskModel]:
    """
    Grid search over (epochs, batch): every cell fine-tunes a copy of `params` with a
    fresh task head, the best validation score picks the cell (ties: fewer epochs, then
    smaller batch), and only the chosen cell is scored on the test split.
    """
    data: Dict[str, Tuple[List[Span], np.ndarray]] = {}
    for split, videos in splits.as_dict().items():
        data[split] = task_examples(videos, task, config, params)
        if not data[split][0]:
            raise DataError(f"{split} split has no labeled videos for task {task.name}")
    template = model or TransformerTaskModel(params)
    cells: List[GridCell] = []
    trained: List[TaskModel] = []
    grid = [(e, b) for e in sorted(config.epoch_grid) for b in sorted(config.batch_grid)]
    for index, (epochs, batch) in enumerate(grid):
        cell_params = params.copy()
        cell_params.reset_task_head(task.n_outputs, rng_streams.stream(seed, rng_streams.INIT, 1))
        cell_model = train_cell(
            template.with_params(cell_params), *data["train"], task, GridCell(epochs=epochs, batch=batch), config, seed, index
        )
        val_score = score(cell_model, *data["val"], task.kind)
        cells.append(GridCell(epochs=epochs, batch=batch, val_score=val_score))
        trained.append(cell_model)
        logger.info(f"{task.name} [{getattr(template, 'name', 'model')}] epochs={epochs} batch={batch}: val {val_score:.4f}")
    best = 0
    for i, cell in enumerate(cells):
        if better(cell.val_score, cells[best].val_score, task.kind):
            best = i
    test_score = score(trained[best], *data["test"], task.kind)
    result = GridResult(kind=task.kind, cells=cells, chosen=cells[best], test_score=test_score)
    if metrics is not None:
        for cell in cells:
            metrics.log_split("val", f"{task.name}.e{cell.epochs}b{cell.batch}", cell.val_score)
        metrics.log_split("test", task.name, test_score)
    return result, trained[best]
