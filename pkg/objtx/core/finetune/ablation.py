from typing import Dict, List, Optional, Sequence

import numpy as np
from pydantic import BaseModel, Field
from tabulate import tabulate

from objtx.core.finetune.ava import AVA_VARIANTS, build_ava_examples, context_features, evaluate_ava, train_ava_fusion
from objtx.core.finetune.splits import split_dataset
from objtx.core.finetune.trainer import PoolTaskModel, TransformerTaskModel, finetune, task_from_labels
from objtx.core.models.models import Corpus, ModelConfig, Objective, PoolMode, TaskKind, TrainConfig
from objtx.core.pretrain.loop import pretrain_loop
from objtx.core.transformer.params import ModelParams
from objtx.utils import rng as rng_streams
from objtx.utils.logger import logger

DEFAULT_OBJECTIVES = (Objective.NONE, Objective.MASK, Objective.MASK_COMPAT)
DEFAULT_POOLS = (PoolMode.AVG, PoolMode.MAX, PoolMode.SHORT_TERM)


class AblationReport(BaseModel):
    kinds: Dict[str, TaskKind] = Field(default_factory=dict)
    scores: Dict[str, Dict[str, List[float]]] = Field(
        default_factory=dict, description="task -> method -> test score of each seed"
    )

    def add(self, task: str, method: str, value: float) -> None:
        self.scores.setdefault(task, {}).setdefault(method, []).append(float(value))

    def mean(self, task: str, method: str) -> float:
        return float(np.mean(self.scores[task][method]))

    def methods(self) -> List[str]:
        seen: List[str] = []
        for per_task in self.scores.values():
            seen.extend(m for m in per_task if m not in seen)
        return seen

    def table(self) -> str:
        methods = self.methods()
        rows = [["task", "metric"] + methods]
        for task, per_method in self.scores.items():
            metric = "accuracy" if self.kinds.get(task) is TaskKind.CLASSIFICATION else "mse"
            rows.append([task, metric] + [f"{self.mean(task, m):.4f}" if m in per_method else "-" for m in methods])
        return tabulate(rows, headers="firstrow", tablefmt="grid")


class AvaReport(BaseModel):
    per_class: Dict[str, List[float]]
    mean: Dict[str, float]

    def table(self) -> str:
        rows = [["variant", "mean accuracy"] + [f"class {c}" for c in range(len(next(iter(self.per_class.values()))))]]
        for variant, accs in self.per_class.items():
            rows.append([variant, f"{self.mean[variant]:.4f}"] + [f"{a:.3f}" for a in accs])
        return tabulate(rows, headers="firstrow", tablefmt="grid")


def objective_name(objective: Objective) -> str:
    return "scratch" if Objective(objective) is Objective.NONE else f"pretrained({Objective(objective).value})"


def run_ablation(
    corpus: Corpus,
    model_config: ModelConfig,
    train_config: TrainConfig,
    seeds: Sequence[int] = (0, 1, 2),
    tasks: Optional[Sequence[str]] = None,
    objectives: Sequence[Objective] = DEFAULT_OBJECTIVES,
    pools: Sequence[PoolMode] = DEFAULT_POOLS,
    task_kinds: Optional[Dict[str, TaskKind]] = None,
) -> AblationReport:
    """
    Pretraining on/off and transformer-vs-pooling comparisons, averaged over seeds.

    Per seed: one movie-disjoint split; one initialization; one pretraining run per
    objective on the training videos; then a grid-searched fine-tune per task for the
    transformer (from every objective) and for every pooling baseline (from the
    un-pretrained initialization).
    """
    report = AblationReport()
    tasks = list(tasks or corpus.task_names())
    specs = {t: task_from_labels(corpus, t, (task_kinds or {}).get(t)) for t in tasks}
    report.kinds = {t: s.kind for t, s in specs.items()}
    for seed in seeds:
        splits = split_dataset(corpus.videos, movie_disjoint=True, seed=seed)
        init = ModelParams.initialize(model_config, rng_streams.stream(seed, rng_streams.INIT))
        starts: Dict[Objective, ModelParams] = {}
        for objective in objectives:
            config = train_config.model_copy(update={"objective": Objective(objective)})
            starts[Objective(objective)], _ = pretrain_loop(splits.train, init.copy(), config, seed)
        for task, spec in specs.items():
            for objective, params in starts.items():
                result, _ = finetune(splits, params, spec, train_config, seed, TransformerTaskModel(params))
                report.add(task, f"transformer/{objective_name(objective)}", result.test_score)
            for pool in pools:
                model = PoolTaskModel(init, pool)
                result, _ = finetune(splits, init, spec, train_config, seed, model)
                report.add(task, model.name, result.test_score)
        logger.info(f"Ablation seed {seed} done")
    return report


def run_ava_analog(
    corpus: Corpus,
    params: ModelParams,
    train_config: TrainConfig,
    seed: int = 0,
) -> AvaReport:
    """
    Short-term only vs masked context only vs late fusion on the AVA-style targets.

    The fusion layer of each variant is trained on the training movies of one
    movie-disjoint split and scored on the test movies; `params` are never modified.
    """
    splits = split_dataset(corpus.videos, movie_disjoint=True, seed=seed)
    train = build_ava_examples(splits.train, corpus.ava, train_config.span_length)
    test = build_ava_examples(splits.test, corpus.ava, train_config.span_length)
    train_ctx = context_features(train, params)
    test_ctx = context_features(test, params)
    per_class, mean = {}, {}
    for variant, (use_context, use_short_term) in AVA_VARIANTS.items():
        fused = train_ava_fusion(
            train, params.copy(), train_config, seed, use_context, use_short_term, context=train_ctx
        )
        scores = evaluate_ava(test, fused, use_context, use_short_term, context=test_ctx)
        per_class[variant] = scores.per_class
        mean[variant] = scores.mean
    return AvaReport(per_class=per_class, mean=mean)
