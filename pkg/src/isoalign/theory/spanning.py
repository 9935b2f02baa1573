"""
Sym(d)-spanning diagnostics.

A set of unit vectors S is Sym(d)-spanning when the outer products x x^T span the
d(d+1)/2-dimensional space of symmetric matrices. Each x x^T is vectorized with
off-diagonal entries scaled by sqrt(2), so the Frobenius inner product of two symmetric
matrices equals the dot product of their vectors and x^T M x = <vec(x x^T), vec(M)>.

kappa_S = sup_M ||M||_2 / max_{x in S} |x^T M x| is finite exactly when S spans. We report
a sampled lower estimate and a certified upper bound sqrt(n) / sigma_min(Phi), which
follows from ||M||_2 <= ||M||_F = ||vec M|| <= ||Phi vec M|| / sigma_min(Phi).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Dict, Optional

import numpy as np
from scipy import linalg

from isoalign.core.exceptions import ValidationError
from isoalign.core.models import EmbeddingSet

DEFAULT_RANK_RTOL = 1e-10
# how many of the weakest directions of Phi join the random probes
_DEFECT_DIRECTIONS = 8


@dataclass(frozen=True)
class SpanningReport:
    rank: int
    dimension: int
    spanning: bool
    kappa_lower: float
    kappa_upper: float
    sigma_min: float
    n_rows: int

    def to_dict(self) -> Dict[str, Any]:
        return {
            "rank": self.rank,
            "dimension": self.dimension,
            "spanning": self.spanning,
            "kappa_lower": self.kappa_lower,
            "kappa_upper": self.kappa_upper,
            "sigma_min": self.sigma_min,
            "n_rows": self.n_rows,
        }


def sym_dimension(d: int) -> int:
    return d * (d + 1) // 2


def sym_vectorize(rows: np.ndarray) -> np.ndarray:
    """Phi with one row vec(x x^T) per input row, shape (n, d(d+1)/2)."""
    rows = np.asarray(rows, dtype=np.float64)
    d = rows.shape[1]
    iu, ju = np.triu_indices(d)
    scale = np.where(iu == ju, 1.0, np.sqrt(2.0))
    return rows[:, iu] * rows[:, ju] * scale


def sym_matrix_vector(M: np.ndarray) -> np.ndarray:
    d = M.shape[0]
    iu, ju = np.triu_indices(d)
    scale = np.where(iu == ju, 1.0, np.sqrt(2.0))
    return M[iu, ju] * scale


def sym_unvectorize(vec: np.ndarray, d: int) -> np.ndarray:
    iu, ju = np.triu_indices(d)
    scale = np.where(iu == ju, 1.0, 1.0 / np.sqrt(2.0))
    M = np.zeros((d, d))
    M[iu, ju] = vec * scale
    M[ju, iu] = vec * scale
    return M


def kappa_ratio(M: np.ndarray, rows: np.ndarray) -> float:
    """||M||_2 / max_x |x^T M x| for one symmetric M; inf when M is invisible to the rows."""
    quad = np.abs(np.einsum("ij,jk,ik->i", rows, M, rows)).max()
    spectral = float(np.abs(linalg.eigvalsh(M)).max())
    if quad == 0.0:
        return float("inf") if spectral > 0 else 0.0
    return spectral / float(quad)


def sym_spanning(
    rows: EmbeddingSet | np.ndarray,
    n_samples: int = 1000,
    seed: int = 0,
    rank_rtol: float = DEFAULT_RANK_RTOL,
) -> SpanningReport:
    """Rank of the vectorized outer products and the resulting kappa_S estimates."""
    data = rows.data if isinstance(rows, EmbeddingSet) else np.asarray(rows, dtype=np.float64)
    if data.ndim != 2 or data.shape[0] == 0:
        raise ValidationError("spanning check needs a non-empty set of rows")
    n, d = data.shape
    m = sym_dimension(d)

    Phi = sym_vectorize(data)
    _, s, Vt = linalg.svd(Phi, full_matrices=True)
    s_full = np.zeros(m)
    s_full[: min(n, m)] = s[: min(n, m)]
    sigma_max = float(s_full.max())
    rank = int(np.sum(s_full > rank_rtol * sigma_max)) if sigma_max > 0 else 0
    spanning = rank == m
    sigma_min = float(s_full[-1])

    if not spanning:
        return SpanningReport(
            rank=rank, dimension=m, spanning=False, kappa_lower=float("inf"),
            kappa_upper=float("inf"), sigma_min=sigma_min, n_rows=n,
        )

    kappa_upper = float(np.sqrt(n) / sigma_min)
    rng = np.random.default_rng(seed)
    best = 0.0
    for _ in range(n_samples):
        A = rng.standard_normal((d, d))
        best = max(best, kappa_ratio((A + A.T) / 2.0, data))
    # the smallest singular directions of Phi are the matrices the rows see least
    for vec in Vt[-min(_DEFECT_DIRECTIONS, m):]:
        best = max(best, kappa_ratio(sym_unvectorize(vec, d), data))
    return SpanningReport(
        rank=rank, dimension=m, spanning=True, kappa_lower=best,
        kappa_upper=kappa_upper, sigma_min=sigma_min, n_rows=n,
    )


def smallest_spanning_prefix(rows: np.ndarray, rank_rtol: float = DEFAULT_RANK_RTOL) -> Optional[int]:
    """The smallest n such that rows[:n] is Sym(d)-spanning, or None if the full set is not."""
    Phi = sym_vectorize(rows)
    m = Phi.shape[1]
    if Phi.shape[0] < m:
        return None
    for n in range(m, Phi.shape[0] + 1):
        s = linalg.svdvals(Phi[:n])
        if s[-1] > rank_rtol * s[0]:
            return n
    return None
