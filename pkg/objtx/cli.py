import argparse
import json
import os
import sys
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

from termcolor import colored

from objtx.config.config import CHECKPOINT_FILE, CORPUS_FILE, DEFAULT_CONFIG, METRICS_FILE, REPORT_FILE, TINY_CONFIG
from objtx.core.finetune.ablation import run_ablation, run_ava_analog
from objtx.core.finetune.splits import split_dataset
from objtx.core.finetune.trainer import PoolTaskModel, TaskModel, TransformerTaskModel, finetune, task_from_labels
from objtx.core.models.models import Corpus, Mode, ModelConfig, PoolMode, TrainConfig
from objtx.core.numerics.gradcheck import check_gradients
from objtx.core.numerics.tensor import precision
from objtx.core.preprocess.pipeline import preprocess_corpus
from objtx.core.pretrain.compat import SpanPool
from objtx.core.pretrain.loop import (
    PretrainStreams,
    compat_objective,
    mask_objective,
    pretrain_loop,
    sample_labeled_spans,
)
from objtx.core.synth.generator import TASK_KINDS, generate_corpus
from objtx.core.transformer.params import ModelParams
from objtx.io.checkpoint import load_checkpoint, save_checkpoint
from objtx.io.config_file import load_config_file
from objtx.io.corpus import load_corpus, save_corpus
from objtx.utils import rng as rng_streams
from objtx.utils.errors import ConfigError, ObjtxError, UsageError
from objtx.utils.logger import add_file_handler, logger, metrics_logger, set_log_level

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_USAGE = 2


class Run:
    """Resolved inputs of one subcommand invocation."""

    def __init__(self, args: argparse.Namespace, default_config: str = DEFAULT_CONFIG):
        self.args = args
        self.model_config, self.gen_config, self.train_config = load_config_file(args.config or default_config)
        self.seed = args.seed if args.seed is not None else self.gen_config.seed
        self.out = args.out
        os.makedirs(self.out, exist_ok=True)
        add_file_handler(self.out)

    def path(self, file_name: str) -> str:
        return os.path.join(self.out, file_name)

    def corpus(self) -> Corpus:
        if not self.args.corpus:
            raise UsageError(f"{self.args.command} needs --corpus")
        return load_corpus(self.args.corpus)

    def params(self, corpus: Optional[Corpus] = None) -> ModelParams:
        """Parameters from --checkpoint, or a fresh initialization from the config and seed."""
        if getattr(self.args, "checkpoint", None):
            params, model_config, _, _ = load_checkpoint(self.args.checkpoint)
            self.model_config = model_config
        else:
            params = ModelParams.initialize(self.model_config, rng_streams.stream(self.seed, rng_streams.INIT))
        if corpus is not None:
            check_feature_dim(corpus, params.config)
        return params

    def write_report(self, report: Dict[str, Any]) -> str:
        path = self.path(REPORT_FILE)
        with open(path, "w", encoding="utf-8") as f:
            json.dump(report, f, indent=2, sort_keys=True)
            f.write("\n")
        return path


def check_feature_dim(corpus: Corpus, config: ModelConfig) -> None:
    for video in corpus.videos:
        for track in video.tracks:
            d_z = len(track.detections[0].z)
            if d_z != config.D_z:
                raise ConfigError(f"corpus features have D_z={d_z} but the model expects D_z={config.D_z}")
            return


def corpus_tasks(run: Run, corpus: Corpus) -> List[str]:
    tasks = run.args.task or corpus.task_names()
    unknown = sorted(set(tasks) - set(corpus.task_names()))
    if unknown:
        raise UsageError(f"corpus has no task(s) {', '.join(unknown)}")
    return tasks


def cmd_gen_synth(run: Run) -> Dict[str, Any]:
    config = run.gen_config.model_copy(update={"seed": run.seed})
    synth = generate_corpus(config, split_tracks=not run.args.merged_tracks)
    path = save_corpus(synth.corpus, run.path(CORPUS_FILE))
    return {"corpus": path, "videos": len(synth.videos), "seed": run.seed}


def cmd_preprocess(run: Run) -> Dict[str, Any]:
    corpus = preprocess_corpus(run.corpus(), run.args.iou_threshold, run.args.shot_threshold)
    path = save_corpus(corpus, run.path(CORPUS_FILE))
    return {
        "corpus": path,
        "videos": len(corpus.videos),
        "tracks": sum(len(v.tracks) for v in corpus.videos),
        "shots": sum(len(v.shots) for v in corpus.videos),
    }


def cmd_pretrain(run: Run) -> Dict[str, Any]:
    corpus = run.corpus()
    params = run.params(corpus)
    with metrics_logger(run.out, METRICS_FILE) as metrics:
        params, trace = pretrain_loop(
            corpus.videos, params, run.train_config, run.seed, metrics, disable_tqdm=not run.args.progress
        )
    path = save_checkpoint(run.path(CHECKPOINT_FILE), params, run.gen_config, run.train_config)
    final = trace[-1] if trace else {}
    return {
        "checkpoint": path,
        "objective": run.train_config.objective.value,
        "iterations": len(trace),
        "final": {k: v for k, v in final.items() if k != "step"},
        "seed": run.seed,
    }


def _finetune_tasks(run: Run, model_factory: Callable[[ModelParams], List[TaskModel]]) -> Dict[str, Any]:
    corpus = run.corpus()
    params = run.params(corpus)
    splits = split_dataset(corpus.videos, movie_disjoint=True, seed=run.seed)
    report: Dict[str, Any] = {"seed": run.seed, "split_sizes": {k: len(v) for k, v in splits.as_dict().items()}}
    results: Dict[str, Dict[str, Any]] = {}
    with metrics_logger(run.out, METRICS_FILE) as metrics:
        for task in corpus_tasks(run, corpus):
            spec = task_from_labels(corpus, task, TASK_KINDS.get(task))
            for model in model_factory(params):
                result, _ = finetune(splits, params, spec, run.train_config, run.seed, model, metrics)
                results.setdefault(task, {})[model.name] = result.model_dump(mode="json")
                print(
                    f"{task} [{model.name}]: chosen epochs={result.chosen.epochs} batch={result.chosen.batch} "
                    f"val {result.chosen.val_score:.4f} test {colored(f'{result.test_score:.4f}', 'green')}"
                )
    report["tasks"] = results
    return report


def cmd_finetune(run: Run) -> Dict[str, Any]:
    return _finetune_tasks(run, lambda params: [TransformerTaskModel(params)])


def cmd_baseline(run: Run) -> Dict[str, Any]:
    pools = [PoolMode(p) for p in run.args.pool] if run.args.pool else list(PoolMode)
    return _finetune_tasks(run, lambda params: [PoolTaskModel(params, pool) for pool in pools])


def cmd_eval(run: Run) -> Dict[str, Any]:
    corpus = run.corpus()
    if run.args.experiment == "ava":
        if not run.args.checkpoint:
            raise UsageError("eval --experiment ava needs --checkpoint")
        params = run.params(corpus)
        report = run_ava_analog(corpus, params, run.train_config, run.seed)
    else:
        check_feature_dim(corpus, run.model_config)
        seeds = [run.seed + k for k in range(run.args.runs)]
        tasks = run.args.task or None
        report = run_ablation(corpus, run.model_config, run.train_config, seeds, tasks, task_kinds=TASK_KINDS)
    print(report.table())
    return {"experiment": run.args.experiment, "seed": run.seed, **report.model_dump(mode="json")}


def full_model_loss(params: ModelParams, corpus: Corpus, train_config: TrainConfig, seed: int) -> Callable:
    """Masked-instance plus compatibility loss in eval mode; every call sees the same batches."""
    pool = SpanPool(corpus.videos, train_config.span_length, train_config.span_stride)

    def loss_fn():
        streams = PretrainStreams(seed)
        spans = sample_labeled_spans(pool, train_config.batch, params, streams.batch)
        mask = mask_objective(spans, params, train_config, streams, Mode.EVAL)
        return mask + compat_objective(pool, params, train_config, PretrainStreams(seed), Mode.EVAL)

    return loss_fn


def cmd_gradcheck(run: Run) -> Dict[str, Any]:
    model_config = run.model_config.model_copy(update={"precision": "float64", "dropout": 0.0})
    with precision("float64"):
        corpus = generate_corpus(run.gen_config.model_copy(update={"seed": run.seed})).corpus
        params = ModelParams.initialize(model_config, rng_streams.stream(run.seed, rng_streams.INIT))
        names = params.names()
        results = check_gradients(
            full_model_loss(params, corpus, run.train_config, run.seed),
            [params[n] for n in names],
            h=run.args.step,
            tol=run.args.tol,
            names=names,
        )
    failed = [r.name for r in results if not r.passed]
    worst = max(results, key=lambda r: r.max_rel_err)
    print(f"gradcheck: {len(results) - len(failed)}/{len(results)} tensors passed, worst {worst.name} {worst.max_rel_err:.3e}")
    return {
        "passed": not failed,
        "failed": failed,
        "tolerance": run.args.tol,
        "results": [r.model_dump(mode="json") for r in results],
    }


COMMANDS: Dict[str, Tuple[Callable[[Run], Dict[str, Any]], str, str]] = {
    "gen-synth": (cmd_gen_synth, "Generate a synthetic corpus with planted structure.", DEFAULT_CONFIG),
    "preprocess": (cmd_preprocess, "Link raw detections into tracks and split them at shot cuts.", DEFAULT_CONFIG),
    "pretrain": (cmd_pretrain, "Self-supervised pretraining; writes a checkpoint.", DEFAULT_CONFIG),
    "finetune": (cmd_finetune, "Grid-searched fine-tuning of the transformer on end tasks.", DEFAULT_CONFIG),
    "eval": (cmd_eval, "AVA-style late fusion or the pretraining/pooling ablation.", DEFAULT_CONFIG),
    "gradcheck": (cmd_gradcheck, "Finite-difference gradient check of the full model.", TINY_CONFIG),
    "baseline": (cmd_baseline, "Grid-searched fine-tuning of the pooling baselines.", DEFAULT_CONFIG),
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=str, help="key=value config file (defaults to the shipped desk or tiny config)")
    common.add_argument("--seed", type=int, help="Run seed; defaults to the config's seed")
    common.add_argument("--out", type=str, required=True, help="Directory all outputs are written to")
    common.add_argument("--log-level", type=str, default="info", help="debug, info, warning or error")

    parser = argparse.ArgumentParser(prog="objtx", description="Object-centric transformer for long-form video.")
    sub = parser.add_subparsers(dest="command", required=True)
    parsers = {name: sub.add_parser(name, parents=[common], help=help_text) for name, (_, help_text, _) in COMMANDS.items()}

    parsers["gen-synth"].add_argument(
        "--merged-tracks", action="store_true", help="Keep instances crossing a cut as one track (fails validation)"
    )
    for name in ("preprocess", "pretrain", "finetune", "eval", "baseline"):
        parsers[name].add_argument("--corpus", type=str, required=True, help="Corpus file (line-delimited JSON)")
    for name in ("pretrain", "finetune", "eval", "baseline"):
        parsers[name].add_argument("--checkpoint", type=str, help="Start from these parameters")
    for name in ("finetune", "eval", "baseline"):
        parsers[name].add_argument("--task", type=str, action="append", help="End task; repeat for several")
    parsers["preprocess"].add_argument("--iou-threshold", type=float, default=0.5)
    parsers["preprocess"].add_argument("--shot-threshold", type=float, default=0.3)
    parsers["pretrain"].add_argument("--progress", action="store_true", help="Show a progress bar")
    parsers["baseline"].add_argument("--pool", choices=[p.value for p in PoolMode], action="append")
    parsers["eval"].add_argument("--experiment", choices=["ava", "ablation"], default="ava")
    parsers["eval"].add_argument("--runs", type=int, default=3, help="Seeds averaged by the ablation")
    parsers["gradcheck"].add_argument("--step", type=float, default=1e-5, help="Finite-difference step")
    parsers["gradcheck"].add_argument("--tol", type=float, default=1e-4, help="Maximum relative error")
    return parser


def run_cli(argv: Optional[Sequence[str]] = None) -> int:
    """
    Parse `argv`, run the subcommand and return its exit code.

    0 on success, 2 on usage errors (including argparse failures), 1 on any other
    failure. Every subcommand writes report.json under --out.
    """
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_OK if e.code == 0 else EXIT_USAGE
    try:
        set_log_level(args.log_level)
    except ValueError as e:
        print(colored(f"objtx: {e}", "red"), file=sys.stderr)
        return EXIT_USAGE
    handler, _, default_config = COMMANDS[args.command]
    try:
        run = Run(args, default_config)
        report = handler(run)
        run.write_report(report)
    except UsageError as e:
        print(colored(f"objtx {args.command}: {e}", "red"), file=sys.stderr)
        return EXIT_USAGE
    except ObjtxError as e:
        print(colored(f"objtx {args.command}: {e}", "red"), file=sys.stderr)
        return EXIT_FAILURE
    except OSError as e:
        print(colored(f"objtx {args.command}: {e}", "red"), file=sys.stderr)
        return EXIT_FAILURE
    if args.command == "gradcheck" and not report["passed"]:
        print(colored(f"gradcheck failed for {', '.join(report['failed'])}", "red"), file=sys.stderr)
        return EXIT_FAILURE
    logger.info(f"{args.command} done; report at {run.path(REPORT_FILE)}")
    return EXIT_OK


def main() -> None:
    sys.exit(run_cli())
