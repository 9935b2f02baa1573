"""
Identifiability bounds, checked on finite samples.

Conventions: embeddings are rows, anchor matrices hold anchors as columns, and maps act
on rows through ``Z @ Q.T``. Every check returns a BoundReport whose ``satisfied`` is
``observed_max <= bound_value + tolerance``; a check never raises on a violated bound,
it only raises when its preconditions are not met.
"""

from __future__ import annotations

import math
from typing import Optional, Sequence, Tuple

import numpy as np
from scipy import linalg

from isoalign.align.procrustes import SINGULAR_TOL, fit_from_anchors, polar_orthogonal
from isoalign.core.exceptions import (
    DimensionMismatchError,
    IllConditionedError,
    PairingError,
    ValidationError,
)
from isoalign.core.models import (
    AlignmentMap,
    AnchorSet,
    BoundReport,
    EmbeddingSet,
    KernelMatrix,
    MapKind,
)

from .spanning import sym_spanning

DEFAULT_TOLERANCE = 1e-9


def _rows(x: EmbeddingSet | np.ndarray) -> np.ndarray:
    return x.data if isinstance(x, EmbeddingSet) else np.asarray(x, dtype=np.float64)


def kernel_discrepancy(
    fA: EmbeddingSet | np.ndarray,
    gA: EmbeddingSet | np.ndarray,
    fB: EmbeddingSet | np.ndarray,
    gB: EmbeddingSet | np.ndarray,
) -> float:
    """max_{i,j} |<fA_i, gA_j> - <fB_i, gB_j>|, the epsilon of approximate kernel equality."""
    fA, gA, fB, gB = _rows(fA), _rows(gA), _rows(fB), _rows(gB)
    if fA.shape[0] != fB.shape[0] or gA.shape[0] != gB.shape[0]:
        raise PairingError("kernel discrepancy needs matched image and text counts across models")
    if fA.shape[1] != gA.shape[1] or fB.shape[1] != gB.shape[1]:
        raise DimensionMismatchError("images and texts of one model must share a dimension")
    if fA.shape[0] == 0 or gA.shape[0] == 0:
        raise ValidationError("kernel discrepancy of empty sets is undefined")
    return float(np.abs(fA @ gA.T - fB @ gB.T).max())


def _require_semi_orthogonal(amap: AlignmentMap) -> np.ndarray:
    if amap.kind is not MapKind.ORTHOGONAL:
        raise ValidationError("this bound needs a semi-orthogonal map (Q^T Q = I)")
    return amap.Q


def _anchor_quantities(
    F: np.ndarray,
    F_tilde: Optional[np.ndarray],
    Q: np.ndarray,
    gA: np.ndarray,
    gB: np.ndarray,
    epsilon: Optional[float],
    delta_f: Optional[float],
) -> Tuple[float, float]:
    """Kernel discrepancy on (anchor images x texts) and max anchor image deviation."""
    if epsilon is None or delta_f is None:
        if F_tilde is None:
            raise ValidationError("F_tilde is needed to measure epsilon or delta_f")
        if F_tilde.shape != (Q.shape[0], F.shape[1]):
            raise DimensionMismatchError(
                f"F_tilde must be {Q.shape[0]}x{F.shape[1]}, got {F_tilde.shape}"
            )
    if epsilon is None:
        epsilon = float(np.abs(gA @ F - gB @ F_tilde).max())
    if delta_f is None:
        delta_f = float(np.linalg.norm(F_tilde - Q @ F, axis=0).max())
    if epsilon < 0 or delta_f < 0:
        raise ValidationError("epsilon and delta_f must be >= 0")
    return float(epsilon), float(delta_f)


def _full_column_rank(F: np.ndarray, name: str) -> float:
    if F.shape[1] > F.shape[0]:
        raise IllConditionedError(f"{name} has more columns than rows", 0.0)
    s = linalg.svdvals(F)
    sigma_min = float(s[-1]) if s.size == F.shape[1] else 0.0
    if sigma_min <= SINGULAR_TOL:
        raise IllConditionedError(f"{name} does not have full column rank", sigma_min)
    return sigma_min


def check_linear_bound(
    anchors: AnchorSet,
    fA: EmbeddingSet | np.ndarray,
    fB: EmbeddingSet | np.ndarray,
    gA_anchor_kernels: Optional[KernelMatrix] = None,
    gB_anchor_kernels: Optional[KernelMatrix] = None,
    tolerance: float = DEFAULT_TOLERANCE,
) -> BoundReport:
    """
    Linear identifiability from text anchors: with A = G_tilde^{-T} G^T,
    ||f_tilde(x) - A f(x)|| <= sqrt(d_tilde) * epsilon / sigma_min(G_tilde) for every test x.

    epsilon is the largest anchor-kernel discrepancy |<f(x), g(y_i)> - <f_tilde(x), g_tilde(y_i)>|
    over the test images; pass precomputed (n x d_tilde) kernels to override it.
    """
    fA, fB = _rows(fA), _rows(fB)
    if fA.shape[0] != fB.shape[0]:
        raise PairingError(f"{fA.shape[0]} source vs {fB.shape[0]} target test images")
    amap = fit_from_anchors(anchors)
    sigma_min = float(amap.stats["sigma_min_Gtilde"])

    if gA_anchor_kernels is not None and gB_anchor_kernels is not None:
        if gA_anchor_kernels.shape != gB_anchor_kernels.shape:
            raise DimensionMismatchError("anchor kernels of the two models differ in shape")
        epsilon = float(np.abs(gA_anchor_kernels.values - gB_anchor_kernels.values).max())
    else:
        epsilon = float(np.abs(fA @ anchors.G - fB @ anchors.G_tilde).max())

    bound = math.sqrt(anchors.d_tilde) * epsilon / sigma_min
    observed = float(np.linalg.norm(fB - fA @ amap.Q.T, axis=1).max())
    return BoundReport.judge(
        "linear_identifiability",
        bound,
        observed,
        tolerance,
        epsilon=epsilon,
        sigma_min_Gtilde=sigma_min,
        extras={"n_test": int(fA.shape[0])},
    )


def check_text_bound(
    F: np.ndarray,
    amap: AlignmentMap,
    gA: EmbeddingSet | np.ndarray,
    gB: EmbeddingSet | np.ndarray,
    epsilon_prime: Optional[float] = None,
    delta_f: Optional[float] = None,
    F_tilde: Optional[np.ndarray] = None,
    tolerance: float = DEFAULT_TOLERANCE,
) -> BoundReport:
    """
    Text transfer of an image-identified isometry: with d image anchors F (d x d),
    ||Q^T g_tilde(y) - g(y)|| <= sqrt(d) (epsilon' + delta_f) / sigma_min(F) for every text y.
    When d == d_tilde the same bound also covers ||g_tilde(y) - Q g(y)||.

    epsilon' and delta_f are measured on the anchors when F_tilde is given.
    """
    F = np.asarray(F, dtype=np.float64)
    gA, gB = _rows(gA), _rows(gB)
    Q = _require_semi_orthogonal(amap)
    d = amap.d
    if F.shape[0] != d:
        raise DimensionMismatchError(f"anchor images must live in d={d}, got {F.shape[0]}")
    if F.shape[1] < d:
        raise IllConditionedError(f"{F.shape[1]} image anchors cannot pin down d={d} directions", 0.0)
    sigma_min = _full_column_rank(F, "F")
    if gA.shape[0] != gB.shape[0]:
        raise PairingError("text sets of the two models differ in size")
    eps, delta = _anchor_quantities(
        F, None if F_tilde is None else np.asarray(F_tilde, dtype=np.float64),
        Q, gA, gB, epsilon_prime, delta_f,
    )

    bound = math.sqrt(d) * (eps + delta) / sigma_min
    pulled_back = np.linalg.norm(gB @ Q - gA, axis=1).max()
    observed = float(pulled_back)
    extras = {"observed_pullback": float(pulled_back)}
    if amap.d == amap.d_tilde:
        pushed = float(np.linalg.norm(gB - gA @ Q.T, axis=1).max())
        extras["observed_pushforward"] = pushed
        observed = max(observed, pushed)
    return BoundReport.judge(
        "text_transfer",
        bound,
        observed,
        tolerance,
        epsilon_prime=eps,
        delta_f=delta,
        sigma_min_F=sigma_min,
        extras=extras,
    )


def subspace_projection_bound(
    F: np.ndarray,
    amap: AlignmentMap,
    gA: EmbeddingSet | np.ndarray,
    gB: EmbeddingSet | np.ndarray,
    epsilon: Optional[float] = None,
    delta_f: Optional[float] = None,
    F_tilde: Optional[np.ndarray] = None,
    tolerance: float = DEFAULT_TOLERANCE,
) -> BoundReport:
    """
    When the images span only an r-dimensional subspace U (spanned by the r anchor
    columns of F), only the U-component of text is identified:
    ||Proj_U (g(y) - Q^T g_tilde(y))|| <= rho = sqrt(r) (epsilon + delta_f) / sigma_min(F).

    The unprojected residual is reported in extras; it may be large because the
    component of g(y) orthogonal to U is invisible to the images.
    """
    F = np.asarray(F, dtype=np.float64)
    gA, gB = _rows(gA), _rows(gB)
    Q = _require_semi_orthogonal(amap)
    if F.shape[0] != amap.d:
        raise DimensionMismatchError(f"anchor images must live in d={amap.d}, got {F.shape[0]}")
    sigma_min = _full_column_rank(F, "U basis")
    if gA.shape[0] != gB.shape[0]:
        raise PairingError("text sets of the two models differ in size")
    eps, delta = _anchor_quantities(
        F, None if F_tilde is None else np.asarray(F_tilde, dtype=np.float64),
        Q, gA, gB, epsilon, delta_f,
    )

    r = F.shape[1]
    basis, _ = linalg.qr(F, mode="economic")
    h = gA - gB @ Q
    projected = float(np.linalg.norm(h @ basis, axis=1).max())
    rho = math.sqrt(r) * (eps + delta) / sigma_min
    return BoundReport.judge(
        "subspace_projection",
        rho,
        projected,
        tolerance,
        epsilon=eps,
        delta_f=delta,
        sigma_min_F=sigma_min,
        rho=rho,
        extras={"r": r, "unprojected_max": float(np.linalg.norm(h, axis=1).max())},
    )


def check_orthogonality_bound(
    amap: AlignmentMap,
    fA: EmbeddingSet | np.ndarray,
    fB: EmbeddingSet | np.ndarray,
    spanning_idx: Optional[Sequence[int]] = None,
    tolerance: float = DEFAULT_TOLERANCE,
    rank_rtol: float = 1e-10,
) -> BoundReport:
    """
    Approximate orthogonal identifiability: with Delta = max ||f_tilde(x) - A f(x)|| over the
    images and S a Sym(d)-spanning subset of them, the polar factor Q of A satisfies
    ||f_tilde(x) - Q f(x)|| <= Delta + kappa_S (2 + Delta) Delta.

    kappa_S is replaced by its certified upper bound, which keeps the check sound.
    """
    fA, fB = _rows(fA), _rows(fB)
    if fA.shape[0] != fB.shape[0]:
        raise PairingError("image sets of the two models differ in size")
    if fA.shape[1] != amap.d or fB.shape[1] != amap.d_tilde:
        raise DimensionMismatchError("image sets do not match the map's dimensions")
    S = fA if spanning_idx is None else fA[np.asarray(spanning_idx, dtype=np.int64)]
    span = sym_spanning(S, n_samples=0, rank_rtol=rank_rtol)
    if not span.spanning:
        raise ValidationError(
            f"anchor images are not Sym(d)-spanning (rank {span.rank} of {span.dimension})"
        )

    A = amap.Q
    delta = float(np.linalg.norm(fB - fA @ A.T, axis=1).max())
    Q = polar_orthogonal(amap).Q
    kappa = span.kappa_upper
    ata_bound = kappa * (2.0 + delta) * delta
    bound = delta + ata_bound
    observed = float(np.linalg.norm(fB - fA @ Q.T, axis=1).max())
    ata_defect = float(linalg.norm(A.T @ A - np.eye(amap.d), 2))
    return BoundReport.judge(
        "approximate_orthogonality",
        bound,
        observed,
        tolerance,
        delta_f=delta,
        extras={
            "kappa_upper": kappa,
            "ata_defect": ata_defect,
            "ata_bound": ata_bound,
            "ata_satisfied": bool(ata_defect <= ata_bound + tolerance),
        },
    )


def check_subspace_identity(
    F: np.ndarray,
    amap: AlignmentMap,
    gA: EmbeddingSet | np.ndarray,
    gB: EmbeddingSet | np.ndarray,
    tolerance: float = DEFAULT_TOLERANCE,
) -> BoundReport:
    """Exact low-dimensional regime: Proj_{QU} g_tilde(y) = Q Proj_U g(y) for every text."""
    F = np.asarray(F, dtype=np.float64)
    gA, gB = _rows(gA), _rows(gB)
    Q = _require_semi_orthogonal(amap)
    _full_column_rank(F, "U basis")
    basis, _ = linalg.qr(F, mode="economic")
    target_basis = Q @ basis
    lhs = (gB @ target_basis) @ target_basis.T
    rhs = ((gA @ basis) @ basis.T) @ Q.T
    observed = float(np.linalg.norm(lhs - rhs, axis=1).max())
    return BoundReport.judge("subspace_identity", 0.0, observed, tolerance, extras={"r": F.shape[1]})
