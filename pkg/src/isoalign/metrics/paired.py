"""Paired-instance metrics: row i of one set against row i of the other."""

from __future__ import annotations

import numpy as np

from isoalign.core.exceptions import (
    DegenerateRowError,
    DimensionMismatchError,
    PairingError,
    ValidationError,
)
from isoalign.core.models import EmbeddingSet, MetricsReport, row_norms

UNIT_EPSILON = 1e-12


def unit_rows(data: np.ndarray, epsilon: float = UNIT_EPSILON) -> np.ndarray:
    """Rows scaled to unit norm; near-zero rows raise DegenerateRowError."""
    norms = row_norms(data)
    bad = np.flatnonzero(norms <= epsilon)
    if bad.size:
        raise DegenerateRowError("cannot take cosine of near-zero rows", rows=bad)
    return data / norms[:, None]


def _check_paired(a: EmbeddingSet, b: EmbeddingSet) -> None:
    if a.n != b.n:
        raise PairingError(f"paired metric needs equal sizes, got {a.n} and {b.n}")
    if a.d != b.d:
        raise DimensionMismatchError(f"paired metric needs equal dimensions, got {a.d} and {b.d}")
    if a.n == 0:
        raise ValidationError("paired metric of empty sets is undefined")


def paired_cosine(a: EmbeddingSet, b: EmbeddingSet) -> MetricsReport:
    _check_paired(a, b)
    cos = np.einsum("ij,ij->i", unit_rows(a.data), unit_rows(b.data))
    return MetricsReport(
        mean_cosine=float(cos.mean()), std_cosine=float(cos.std()), n_queries=a.n
    )


def paired_l2(a: EmbeddingSet, b: EmbeddingSet) -> MetricsReport:
    """Mean Euclidean distance on the raw rows (no renormalization)."""
    _check_paired(a, b)
    dist = np.linalg.norm(a.data - b.data, axis=1)
    return MetricsReport(mean_l2=float(dist.mean()), n_queries=a.n)
