import numpy as np
import pytest

from promptseg.backends import SyntheticDualEncoder
from promptseg.embedding import EmbeddingBatch, normalize_rows


def random_batch(rng: np.random.Generator, b: int, d: int) -> EmbeddingBatch:
    return EmbeddingBatch(
        normalize_rows(rng.standard_normal((b, d))),
        normalize_rows(rng.standard_normal((b, d))),
    )


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def synthetic_backend():
    return SyntheticDualEncoder()
