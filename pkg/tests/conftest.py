import numpy as np
import pytest

from dualsr.data import synthesize_corpus


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def corpus_dir(tmp_path_factory):
    """Eight 64px synthetic images shared by the training-level tests."""
    root = tmp_path_factory.mktemp("corpus")
    synthesize_corpus(root, 8, 64, np.random.default_rng(5))
    return str(root)
