import pytest
import torch

from core.config import build_config
from utils.synth_generator import SynthConfig, synth_generate
from utils.vocab import Vocab


@pytest.fixture(autouse=True)
def float64_default():
    previous = torch.get_default_dtype()
    torch.set_default_dtype(torch.float64)
    yield
    torch.set_default_dtype(previous)


@pytest.fixture
def desk_config():
    return build_config("desk", environ={})


@pytest.fixture
def micro_config():
    return build_config("micro", environ={})


@pytest.fixture
def vocab():
    return Vocab.default(64)


@pytest.fixture
def make_clip():
    def _make(family="which-chunk", seed=0, **overrides):
        return synth_generate(SynthConfig(family=family, **overrides), seed)
    return _make
