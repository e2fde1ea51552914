import numpy as np
import pytest

from cel.corpus import build_manifest
from cel.augment import synth_bank


@pytest.fixture(scope="session")
def tiny_manifest():
    """4 speakers x 2 utterances x 4 s; enough for two crops per utterance."""
    return build_manifest(4, 2, 4.0, seed=900)


@pytest.fixture(scope="session")
def tiny_bank():
    return synth_bank(seed=77, n_each=1, noise_duration_s=2.5, rir_count=2)


@pytest.fixture()
def rng():
    return np.random.default_rng(1234)
