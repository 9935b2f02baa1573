"""
Fitting alignment maps.

Rows are embeddings, so with X (n x d) the source rows and Y (n x d_tilde) the target
rows the fitted map Q (d_tilde x d) acts on a row z as ``Q z``, i.e. ``Z @ Q.T`` on a
matrix of rows. The orthogonal fit is the closed-form Procrustes solution: with the
cross-covariance M = Y^T X = U S V^T, Q = U V^T. When d < d_tilde the thin SVD gives
a d_tilde x d matrix with orthonormal columns, so the rectangular case needs nothing
extra.

Reflections are allowed (Q in O(d)); when M has repeated or zero singular values the
minimizer is not unique and only the action on the data is identified.
"""

from __future__ import annotations

from typing import Dict, Optional, Tuple

import numpy as np
from scipy import linalg

from isoalign.core.console import get_logger
from isoalign.core.exceptions import (
    DimensionMismatchError,
    IllConditionedError,
    PairingError,
    SVDFailureError,
    ValidationError,
)
from isoalign.core.models import AlignmentMap, AnchorSet, EmbeddingSet, FitModality, MapKind

logger = get_logger(__name__)

METHODS = ("orthogonal", "orthogonal-centered", "linear", "linear-centered")
SINGULAR_TOL = 1e-10


def _paired_arrays(
    source: EmbeddingSet, target: EmbeddingSet, centered: bool
) -> Tuple[np.ndarray, np.ndarray, Optional[np.ndarray], Optional[np.ndarray]]:
    if source.n != target.n:
        raise PairingError(f"source has {source.n} rows, target has {target.n}")
    if source.n < 1:
        raise ValidationError("a fit needs at least one pair")
    for es in (source, target):
        if not es.normalized:
            logger.warning(
                "fitting on unnormalized rows of %s (%s)",
                es.model_id or "<unnamed>",
                es.modality.value,
            )
    X, Y = source.data, target.data
    if not centered:
        return X, Y, None, None
    mu_s = X.mean(axis=0)
    mu_t = Y.mean(axis=0)
    return X - mu_s, Y - mu_t, mu_s, mu_t


def _svd(M: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    try:
        return linalg.svd(M, full_matrices=False, lapack_driver="gesdd")
    except linalg.LinAlgError:
        # gesdd occasionally fails to converge where the slower gesvd succeeds
        try:
            return linalg.svd(M, full_matrices=False, lapack_driver="gesvd")
        except linalg.LinAlgError as e:
            raise SVDFailureError(f"SVD of a {M.shape[0]}x{M.shape[1]} matrix failed") from e


def procrustes_rotation(X: np.ndarray, Y: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """
    Semi-orthogonal Q (d_tilde x d) minimizing ||Y - X Q^T||_F, plus the singular values
    of the cross-covariance.
    """
    M = Y.T @ X
    U, s, Vt = _svd(M)
    return U @ Vt, s


def fit_orthogonal(
    source: EmbeddingSet,
    target: EmbeddingSet,
    centered: bool = False,
    fit_modality: FitModality = FitModality.IMAGE,
) -> AlignmentMap:
    """
    Fit the orthogonal Procrustes map from ``source`` rows to ``target`` rows.

    With ``centered`` the column means are removed before the fit and stored on the map,
    which then acts as z -> Q (z - mu_source) + mu_target.
    """
    if source.d > target.d:
        raise DimensionMismatchError(
            f"orthogonal fit needs d <= d_tilde, got d={source.d}, d_tilde={target.d}"
        )
    X, Y, mu_s, mu_t = _paired_arrays(source, target, centered)
    Q, s = procrustes_rotation(X, Y)
    stats = _fit_stats(X, Y, Q, s, prefix="M")
    logger.debug("orthogonal fit %s -> %s: %s", source.model_id, target.model_id, stats)
    return AlignmentMap(
        Q=Q,
        mu_source=mu_s,
        mu_target=mu_t,
        kind=MapKind.ORTHOGONAL,
        fit_modality=fit_modality,
        source_model=source.model_id,
        target_model=target.model_id,
        stats=stats,
    )


def fit_linear(
    source: EmbeddingSet,
    target: EmbeddingSet,
    centered: bool = False,
    ridge: float = 0.0,
    fit_modality: FitModality = FitModality.IMAGE,
    rank_rtol: float = SINGULAR_TOL,
) -> AlignmentMap:
    """
    Closed-form least squares map: argmin ||Y - X Q^T||_F^2 + ridge ||Q||_F^2.

    Without ridge the source rows must have full column rank; otherwise the minimizer
    is not unique and IllConditionedError reports the smallest singular value.
    """
    if not ridge >= 0:
        raise ValidationError(f"ridge must be >= 0, got {ridge}")
    X, Y, mu_s, mu_t = _paired_arrays(source, target, centered)
    d = X.shape[1]

    # fewer rows than columns leaves d - n zero singular values
    sx = np.zeros(d)
    svals = linalg.svdvals(X)
    sx[: svals.size] = svals
    sigma_max, sigma_min = float(sx[0]), float(sx[-1])

    if ridge == 0.0:
        if sigma_max == 0.0 or sigma_min <= rank_rtol * sigma_max:
            raise IllConditionedError(
                f"source rows ({X.shape[0]}x{d}) are rank deficient and ridge is 0", sigma_min
            )
        Qt, _, _, _ = linalg.lstsq(X, Y)
    else:
        gram = X.T @ X + ridge * np.eye(d)
        Qt = linalg.solve(gram, X.T @ Y, assume_a="pos")
    Q = Qt.T

    stats = _fit_stats(X, Y, Q, sx, prefix="X")
    stats["ridge"] = float(ridge)
    logger.debug("linear fit %s -> %s: %s", source.model_id, target.model_id, stats)
    return AlignmentMap(
        Q=Q,
        mu_source=mu_s,
        mu_target=mu_t,
        kind=MapKind.LINEAR,
        fit_modality=fit_modality,
        source_model=source.model_id,
        target_model=target.model_id,
        stats=stats,
    )


def fit_from_anchors(anchors: AnchorSet, source_model: str = "", target_model: str = "") -> AlignmentMap:
    """A = G_tilde^{-T} G^T, the map pinned down by matching multimodal kernels on anchors."""
    G, Gt = anchors.G, anchors.G_tilde
    if Gt.shape[0] != Gt.shape[1]:
        raise DimensionMismatchError(
            f"G_tilde must be square, got {Gt.shape[0]}x{Gt.shape[1]}"
        )
    s = linalg.svdvals(Gt)
    sigma_min = float(s[-1])
    if sigma_min <= SINGULAR_TOL:
        raise IllConditionedError("target text anchors G_tilde are singular", sigma_min)
    A = linalg.solve(Gt.T, G.T)
    return AlignmentMap(
        Q=A,
        kind=MapKind.LINEAR,
        fit_modality=FitModality.ANCHORS,
        source_model=source_model,
        target_model=target_model,
        stats={"sigma_min_Gtilde": sigma_min, "sigma_max_Gtilde": float(s[0])},
    )


def polar_orthogonal(amap: AlignmentMap) -> AlignmentMap:
    """Replace Q by its orthogonal polar factor, the nearest matrix with orthonormal columns."""
    if amap.d > amap.d_tilde:
        raise DimensionMismatchError("polar factor with orthonormal columns needs d <= d_tilde")
    s = linalg.svdvals(amap.Q)
    sigma_min = float(s[-1])
    if sigma_min <= SINGULAR_TOL:
        raise IllConditionedError("map is rank deficient; its polar factor is not unique", sigma_min)
    U, _ = linalg.polar(amap.Q, side="right")
    stats = dict(amap.stats)
    stats["polar_sigma_min"] = sigma_min
    stats["polar_sigma_max"] = float(s[0])
    return AlignmentMap(
        Q=U,
        mu_source=amap.mu_source,
        mu_target=amap.mu_target,
        kind=MapKind.ORTHOGONAL,
        fit_modality=amap.fit_modality,
        source_model=amap.source_model,
        target_model=amap.target_model,
        stats=stats,
    )


def identity_map(d: int, model_id: str = "") -> AlignmentMap:
    """The "before alignment" baseline: source coordinates read as target coordinates."""
    return AlignmentMap(
        Q=np.eye(d),
        kind=MapKind.ORTHOGONAL,
        fit_modality=FitModality.SYNTHETIC,
        source_model=model_id,
        target_model=model_id,
    )


def fit(
    source: EmbeddingSet,
    target: EmbeddingSet,
    method: str = "orthogonal",
    ridge: float = 0.0,
    fit_modality: FitModality = FitModality.IMAGE,
) -> AlignmentMap:
    """Dispatch on a method name from METHODS."""
    if method not in METHODS:
        raise ValidationError(f"unknown method {method!r}; choose one of {', '.join(METHODS)}")
    centered = method.endswith("-centered")
    if method.startswith("orthogonal"):
        return fit_orthogonal(source, target, centered=centered, fit_modality=fit_modality)
    return fit_linear(source, target, centered=centered, ridge=ridge, fit_modality=fit_modality)


def _fit_stats(X: np.ndarray, Y: np.ndarray, Q: np.ndarray, s: np.ndarray, prefix: str) -> Dict:
    residual = float(np.linalg.norm(Y - X @ Q.T, "fro"))
    return {
        "residual": residual,
        f"sigma_min_{prefix}": float(s.min()) if s.size else 0.0,
        f"sigma_max_{prefix}": float(s.max()) if s.size else 0.0,
        "n_pairs": int(X.shape[0]),
    }
