"""Shared fixtures: small deterministic embedding sets and maps."""

import numpy as np
import pytest

from isoalign.core.models import EmbeddingSet, Modality
from isoalign.store.embeddings import normalize
from isoalign.synth.planted import PlantedParams, make_planted, random_semi_orthogonal


@pytest.fixture(autouse=True)
def _clean_env(monkeypatch):
    """Keep ALIGN_* variables from the developer's shell out of the tests."""
    for name in ("ALIGN_NUM_THREADS", "ALIGN_LOG_LEVEL", "ALIGN_BOUND_TOL", "ALIGN_RANK_RTOL"):
        monkeypatch.delenv(name, raising=False)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def unit_set(rows, labels=None, modality=Modality.IMAGE, model_id="m"):
    """Normalized EmbeddingSet from raw rows."""
    es = EmbeddingSet(data=np.asarray(rows, dtype=float), labels=labels,
                      modality=modality, model_id=model_id)
    return normalize(es)


@pytest.fixture
def images(rng):
    """Twelve unit rows in R^4, three classes of four."""
    return unit_set(rng.standard_normal((12, 4)), labels=np.arange(12) % 3)


@pytest.fixture
def rotation():
    """A 4x4 orthogonal matrix."""
    return random_semi_orthogonal(4, 4, seed=7)


@pytest.fixture
def planted_small():
    """Noise-free planted scenario, d=4 -> d_tilde=6."""
    return make_planted(PlantedParams(d=4, d_tilde=6, n_img=40, n_txt=12, K=4, seed=3))
