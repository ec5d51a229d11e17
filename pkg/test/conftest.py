import numpy as np
import pytest

from objtx.config.config import TINY_CONFIG
from objtx.core.numerics.tensor import precision
from objtx.core.synth.generator import generate_corpus
from objtx.core.transformer.params import ModelParams
from objtx.io.config_file import load_config_file
from objtx.utils import rng as rng_streams
from objtx.utils.logger import set_log_level

set_log_level("warning")


@pytest.fixture(scope="session")
def tiny_configs():
    return load_config_file(TINY_CONFIG)


@pytest.fixture
def model_config(tiny_configs):
    return tiny_configs[0].model_copy()


@pytest.fixture
def gen_config(tiny_configs):
    return tiny_configs[1].model_copy()


@pytest.fixture
def train_config(tiny_configs):
    return tiny_configs[2].model_copy()


@pytest.fixture
def eval_config(model_config):
    """The tiny model without dropout, for exact comparisons."""
    return model_config.model_copy(update={"dropout": 0.0})


@pytest.fixture(scope="session")
def tiny_synth(tiny_configs):
    return generate_corpus(tiny_configs[1])


@pytest.fixture
def params(model_config):
    return ModelParams.initialize(model_config, rng_streams.stream(0, rng_streams.INIT))


@pytest.fixture
def eval_params(eval_config):
    return ModelParams.initialize(eval_config, rng_streams.stream(0, rng_streams.INIT))


@pytest.fixture
def rng():
    return np.random.default_rng(0)


@pytest.fixture
def float64():
    with precision("float64"):
        yield
