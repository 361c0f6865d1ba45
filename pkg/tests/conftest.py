import numpy as np
import pytest

from multiid.embeddings import Embedding


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def emb(values, backend="face-a"):
    return Embedding(np.asarray(values, dtype=np.float64), backend)


@pytest.fixture
def make_embedding():
    return emb
