import numpy as np
import pytest

from amii.model import AmiiConfig, Batch, init_params


@pytest.fixture
def tiny_config():
    return AmiiConfig(window=4, cell=4, heads=2, decoder_hidden=5)


@pytest.fixture
def tiny_params(tiny_config):
    return init_params(tiny_config, seed=11)


def random_batch(config, n=2, seed=0):
    rng = np.random.default_rng(seed)
    t = config.window
    return Batch(
        a_speech=rng.normal(size=(n, t, config.speech_dim)),
        a_face=rng.normal(size=(n, t, config.face_dim)),
        u_speech=rng.normal(size=(n, t, config.speech_dim)),
        u_face=rng.normal(size=(n, t, config.face_dim)),
        y_a=rng.normal(size=(n, config.face_dim)),
        y_u=rng.normal(size=(n, config.face_dim)),
    )


@pytest.fixture
def make_batch():
    return random_batch
