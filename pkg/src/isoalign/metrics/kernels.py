"""
Multimodal kernels (image x text inner-product tables) and how well two of them agree.

CKA here is the linear, feature-space form applied to a kernel table treated as a
feature matrix Z (rows = images, columns = texts): columns are centered and
CKA = ||Z1^T Z2||_F^2 / (||Z1^T Z1||_F ||Z2^T Z2||_F). Centering makes it blind to a
constant shift, and the ratio is blind to positive scaling.
"""

from __future__ import annotations

from typing import Any, Dict

import numpy as np

from isoalign.core.exceptions import DimensionMismatchError, NumericalError, ValidationError
from isoalign.core.models import EmbeddingSet, KernelMatrix


def _label(es: EmbeddingSet) -> str:
    return f"{es.model_id or '?'}:{es.modality.value}"


def multimodal_kernel(a: EmbeddingSet, b: EmbeddingSet) -> KernelMatrix:
    """values[i, j] = <a_i, b_j> on the rows as given."""
    if a.d != b.d:
        raise DimensionMismatchError(f"kernel needs equal dimensions, got {a.d} and {b.d}")
    return KernelMatrix(
        values=a.data @ b.data.T,
        row_source=_label(a),
        col_source=_label(b),
        bounded=a.normalized and b.normalized,
    )


def _check_shapes(k1: KernelMatrix, k2: KernelMatrix) -> None:
    if k1.shape != k2.shape:
        raise DimensionMismatchError(f"kernel shapes differ: {k1.shape} vs {k2.shape}")
    if k1.values.size == 0:
        raise ValidationError("kernels are empty")


def cka(k1: KernelMatrix, k2: KernelMatrix) -> float:
    _check_shapes(k1, k2)
    Z1 = k1.values - k1.values.mean(axis=0)
    Z2 = k2.values - k2.values.mean(axis=0)
    num = np.linalg.norm(Z1.T @ Z2, "fro") ** 2
    den = np.linalg.norm(Z1.T @ Z1, "fro") * np.linalg.norm(Z2.T @ Z2, "fro")
    if den == 0.0:
        raise NumericalError("CKA is undefined: a kernel has no variance after column centering")
    return float(np.clip(num / den, 0.0, 1.0))


def kernel_agreement(kA: KernelMatrix, kB: KernelMatrix) -> Dict[str, Any]:
    """How closely one model's multimodal kernel reproduces another's on the same inputs."""
    _check_shapes(kA, kB)
    diff = kA.values - kB.values
    a, b = kA.values.ravel(), kB.values.ravel()
    pearson = None
    if a.size > 1 and a.std() > 0 and b.std() > 0:
        pearson = float(np.corrcoef(a, b)[0, 1])
    try:
        cka_value = cka(kA, kB)
    except NumericalError:
        cka_value = None
    return {
        "mean_abs_diff": float(np.abs(diff).mean()),
        "max_abs_diff": float(np.abs(diff).max()),
        "mean_shift": float(diff.mean()),
        "pearson": pearson,
        "cka": cka_value,
    }


def modality_gap(images: EmbeddingSet, texts: EmbeddingSet) -> float:
    """Distance between the image centroid and the text centroid of one model."""
    if images.d != texts.d:
        raise DimensionMismatchError(f"gap needs equal dimensions, got {images.d} and {texts.d}")
    if images.n == 0 or texts.n == 0:
        raise ValidationError("modality gap of an empty set is undefined")
    return float(np.linalg.norm(images.data.mean(axis=0) - texts.data.mean(axis=0)))
