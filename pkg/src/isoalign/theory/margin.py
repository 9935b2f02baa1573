"""
Signal/noise margin of class-prompt retrieval after an image-identified alignment.

Each source prompt splits as g = u + w with u in the identified image subspace U and
w orthogonal to it; each target prompt splits as g_tilde = Q u' + w_tilde with w_tilde
orthogonal to Q U. Retrieval of the right prompt is guaranteed when the class margin
gamma exceeds twice the worst residual interaction eta.
"""

from __future__ import annotations

import numpy as np

from isoalign.core.exceptions import DimensionMismatchError, ValidationError
from isoalign.core.models import ORTHOGONALITY_TOL, AlignmentMap, MarginReport

from .bounds import _require_semi_orthogonal


def _margin_gamma(u: np.ndarray) -> float:
    gram = u @ u.T
    signal = np.diag(gram).copy()
    np.fill_diagonal(gram, -np.inf)
    return float(np.min(signal - gram.max(axis=1)))


def margin_noise(
    U_basis: np.ndarray,
    amap: AlignmentMap,
    gA: np.ndarray,
    gB: np.ndarray,
) -> MarginReport:
    """
    gamma = min_c (||u_c||^2 - max_{k != c} <u_c, u_k>), eta = max_{c,k} |<Q w_c, w_tilde_k>|.

    ``gA`` (K x d) and ``gB`` (K x d_tilde) hold the class prompts of the two models in the
    same class order; ``U_basis`` (d x r) is an orthonormal basis of the image subspace.
    """
    U = np.asarray(U_basis, dtype=np.float64)
    gA = np.asarray(gA, dtype=np.float64)
    gB = np.asarray(gB, dtype=np.float64)
    Q = _require_semi_orthogonal(amap)
    if U.ndim != 2 or U.shape[0] != amap.d:
        raise DimensionMismatchError(f"basis must have {amap.d} rows")
    if np.abs(U.T @ U - np.eye(U.shape[1])).max() > ORTHOGONALITY_TOL:
        raise ValidationError("U basis columns are not orthonormal")
    if gA.shape[0] != gB.shape[0]:
        raise DimensionMismatchError("both models need one prompt per class")
    if gA.shape[0] < 2:
        raise ValidationError("a retrieval margin needs at least two classes")
    if gA.shape[1] != amap.d or gB.shape[1] != amap.d_tilde:
        raise DimensionMismatchError("prompt widths do not match the map")

    u = (gA @ U) @ U.T
    w = gA - u
    QU = Q @ U
    w_tilde = gB - (gB @ QU) @ QU.T

    gamma = _margin_gamma(u)
    eta = float(np.abs((w @ Q.T) @ w_tilde.T).max())
    scores = (gA @ Q.T) @ gB.T
    correct = bool(np.array_equal(np.argmax(scores, axis=1), np.arange(gA.shape[0])))
    return MarginReport(gamma=gamma, eta=eta, guaranteed=bool(gamma > 2.0 * eta),
                        retrieval_correct=correct)
