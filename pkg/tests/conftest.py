import numpy as np
import pytest

from preasp.data import examples_from_tokens
from preasp.synthdata import GenParams, generate_corpus


@pytest.fixture(scope="session")
def small_tokens():
    return generate_corpus(GenParams(seed=11, n_speakers=4), 60)


@pytest.fixture(scope="session")
def small_examples(small_tokens):
    return examples_from_tokens(small_tokens)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
