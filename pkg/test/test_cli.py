import json
import os

import pytest

from objtx.cli import EXIT_FAILURE, EXIT_OK, EXIT_USAGE, run_cli
from objtx.config.config import CHECKPOINT_FILE, CORPUS_FILE, METRICS_FILE, REPORT_FILE, TINY_CONFIG
from objtx.io.checkpoint import load_checkpoint
from objtx.io.corpus import load_corpus
from objtx.utils.logger import read_metrics


def read_report(out_dir):
    with open(os.path.join(out_dir, REPORT_FILE), encoding="utf-8") as f:
        return json.load(f)


def objtx(command, out_dir, *args):
    return run_cli([command, "--config", TINY_CONFIG, "--out", str(out_dir), "--log-level", "warning", *args])


@pytest.fixture(scope="module")
def corpus_path(tmp_path_factory):
    out = tmp_path_factory.mktemp("synth")
    assert objtx("gen-synth", out) == EXIT_OK
    return str(out / CORPUS_FILE)


@pytest.fixture(scope="module")
def checkpoint_path(tmp_path_factory, corpus_path):
    out = tmp_path_factory.mktemp("pretrain")
    assert objtx("pretrain", out, "--corpus", corpus_path) == EXIT_OK
    return str(out / CHECKPOINT_FILE)


class TestGenSynth:
    def test_writes_corpus_and_report(self, corpus_path):
        out = os.path.dirname(corpus_path)
        report = read_report(out)
        assert report["videos"] == 14
        assert report["seed"] == 0
        assert len(load_corpus(corpus_path).videos) == 14
        assert os.path.isfile(os.path.join(out, "objtx.log"))

    def test_seed_flag(self, tmp_path, corpus_path):
        assert objtx("gen-synth", tmp_path, "--seed", "0") == EXIT_OK
        with open(corpus_path, "rb") as a, open(tmp_path / CORPUS_FILE, "rb") as b:
            assert a.read() == b.read()
        assert objtx("gen-synth", tmp_path / "other", "--seed", "1") == EXIT_OK
        with open(corpus_path, "rb") as a, open(tmp_path / "other" / CORPUS_FILE, "rb") as b:
            assert a.read() != b.read()


class TestPreprocess:
    def test_relinks_raw_detections(self, tmp_path, corpus_path):
        assert objtx("preprocess", tmp_path, "--corpus", corpus_path) == EXIT_OK
        report = read_report(tmp_path)
        original = load_corpus(corpus_path)
        assert report["videos"] == len(original.videos)
        assert report["tracks"] == sum(len(v.tracks) for v in original.videos)
        assert len(load_corpus(str(tmp_path / CORPUS_FILE)).videos) == len(original.videos)


class TestPretrain:
    def test_report_metrics_and_checkpoint(self, checkpoint_path):
        out = os.path.dirname(checkpoint_path)
        report = read_report(out)
        assert report["objective"] == "mask+compat"
        assert report["iterations"] == 4
        assert set(report["final"]) == {"lr", "loss", "mask_loss", "compat_loss"}
        steps = [r["step"] for r in read_metrics(os.path.join(out, METRICS_FILE)) if r["metric"] == "loss"]
        assert steps == [0, 1, 2, 3]
        _, model_config, gen_config, train_config = load_checkpoint(checkpoint_path)
        assert model_config.hidden == 8
        assert gen_config is not None and gen_config.n_movies == 7
        assert train_config is not None and train_config.iterations == 4

    def test_same_seed_same_checkpoint(self, tmp_path, corpus_path, checkpoint_path):
        assert objtx("pretrain", tmp_path, "--corpus", corpus_path) == EXIT_OK
        with open(checkpoint_path, "rb") as a, open(tmp_path / CHECKPOINT_FILE, "rb") as b:
            assert a.read() == b.read()


class TestFinetune:
    def test_transformer_report(self, tmp_path, corpus_path, checkpoint_path):
        args = ["--corpus", corpus_path, "--checkpoint", checkpoint_path, "--task", "scene"]
        assert objtx("finetune", tmp_path, *args) == EXIT_OK
        report = read_report(tmp_path)
        assert report["split_sizes"] == {"train": 10, "val": 2, "test": 2}
        result = report["tasks"]["scene"]["transformer"]
        assert 0.0 <= result["test_score"] <= 1.0
        assert result["chosen"]["epochs"] in (0, 1)

    def test_baseline_report(self, tmp_path, corpus_path):
        args = ["--corpus", corpus_path, "--task", "intensity", "--pool", "avg", "--pool", "max"]
        assert objtx("baseline", tmp_path, *args) == EXIT_OK
        assert sorted(read_report(tmp_path)["tasks"]["intensity"]) == ["avg-pool", "max-pool"]

    def test_unknown_task(self, tmp_path, corpus_path):
        assert objtx("finetune", tmp_path, "--corpus", corpus_path, "--task", "nope") == EXIT_USAGE


class TestEval:
    def test_ava_needs_checkpoint(self, tmp_path, corpus_path):
        assert objtx("eval", tmp_path, "--corpus", corpus_path, "--experiment", "ava") == EXIT_USAGE

    def test_ava_report(self, tmp_path, corpus_path, checkpoint_path):
        args = ["--corpus", corpus_path, "--checkpoint", checkpoint_path, "--experiment", "ava"]
        assert objtx("eval", tmp_path, *args) == EXIT_OK
        report = read_report(tmp_path)
        assert report["experiment"] == "ava"
        assert set(report["mean"]) == set(report["per_class"])
        assert all(0.0 <= v <= 1.0 for v in report["mean"].values())


class TestExitCodes:
    def test_missing_out(self):
        assert run_cli(["gen-synth", "--config", TINY_CONFIG]) == EXIT_USAGE

    def test_unknown_command(self, tmp_path):
        assert run_cli(["train", "--out", str(tmp_path)]) == EXIT_USAGE

    def test_missing_corpus_flag(self, tmp_path):
        assert objtx("pretrain", tmp_path) == EXIT_USAGE

    def test_bad_log_level(self, tmp_path):
        assert run_cli(["gen-synth", "--config", TINY_CONFIG, "--out", str(tmp_path), "--log-level", "loud"]) == EXIT_USAGE

    def test_missing_corpus_file(self, tmp_path):
        assert objtx("pretrain", tmp_path, "--corpus", str(tmp_path / "none.jsonl")) == EXIT_FAILURE

    def test_bad_config(self, tmp_path):
        config = tmp_path / "bad.env"
        config.write_text("hidden=8\nwidth=3\n")
        assert run_cli(["gen-synth", "--config", str(config), "--out", str(tmp_path / "out")]) == EXIT_FAILURE

    def test_feature_dimension_mismatch(self, tmp_path, corpus_path):
        with open(TINY_CONFIG, encoding="utf-8") as f:
            text = f.read().replace("D_z=6", "D_z=12")
        config = tmp_path / "wide.env"
        config.write_text(text)
        args = ["pretrain", "--config", str(config), "--out", str(tmp_path / "out"), "--corpus", corpus_path]
        assert run_cli(args) == EXIT_FAILURE

    def test_corrupt_checkpoint(self, tmp_path, corpus_path, checkpoint_path):
        with open(checkpoint_path, "rb") as f:
            data = bytearray(f.read())
        data[-1] ^= 0xFF
        broken = tmp_path / "broken.ckpt"
        broken.write_bytes(bytes(data))
        args = ["--corpus", corpus_path, "--checkpoint", str(broken), "--task", "scene"]
        assert objtx("finetune", tmp_path / "out", *args) == EXIT_FAILURE


@pytest.mark.slow
def test_gradcheck_passes(tmp_path):
    assert objtx("gradcheck", tmp_path) == EXIT_OK
    report = read_report(tmp_path)
    assert report["passed"]
    assert report["failed"] == []
