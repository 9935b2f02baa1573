"""
Pointwise mutual information of discrete joints and its behaviour under curation.

A curation reweights a base joint p* by separable acceptance weights:
p_a(x, y) = u(x) v(y) p*(x, y) / Z. For any positive joint and weights the PMI obeys

    K_a(x, y) - K*(x, y) + log E*[v | x] + log E*[u | y] - log Z = 0,

so when E*[v | x] and E*[u | y] do not depend on x and y, the PMI of every curation is
the base PMI shifted by one constant. All logs are natural.
"""

from __future__ import annotations

from typing import Tuple

import numpy as np

from isoalign.core.exceptions import DimensionMismatchError, ValidationError
from isoalign.core.models import DiscreteJoint, KernelMatrix


def pmi_matrix(joint: DiscreteJoint, use_curation: bool = False) -> KernelMatrix:
    """K(x, y) = log p(x, y) - log p_X(x) - log p_Y(y), optionally after curation."""
    table = joint.curated() if use_curation else joint
    p = table.p
    K = np.log(p) - np.log(table.marginal_x)[:, None] - np.log(table.marginal_y)[None, :]
    return KernelMatrix(values=K, row_source="x", col_source="y")


def _conditional_means(joint: DiscreteJoint) -> Tuple[np.ndarray, np.ndarray]:
    """(E*[v(Y) | X = x] over x, E*[u(X) | Y = y] over y)."""
    if not joint.has_weights:
        raise ValidationError("curation weights u and v are required")
    p = joint.p
    ev_given_x = (p @ joint.v) / joint.marginal_x
    eu_given_y = (joint.u @ p) / joint.marginal_y
    return ev_given_x, eu_given_y


def curation_bias_residual(joint: DiscreteJoint) -> Tuple[float, float]:
    """
    (max_x |E*[v|x] - E*[v]|, max_y |E*[u|y] - E*[u]|): how far text acceptance depends on
    the image and image acceptance on the text. Both are zero when curation adds no
    cross-modal bias.
    """
    ev_given_x, eu_given_y = _conditional_means(joint)
    ev = float(joint.marginal_y @ joint.v)
    eu = float(joint.marginal_x @ joint.u)
    return float(np.abs(ev_given_x - ev).max()), float(np.abs(eu_given_y - eu).max())


def check_constant_shift(k1: KernelMatrix, k2: KernelMatrix) -> Tuple[float, float]:
    """(delta, max_residual) with delta = mean(k1 - k2) and residual max |k1 - k2 - delta|."""
    if k1.shape != k2.shape:
        raise DimensionMismatchError(f"kernel shapes differ: {k1.shape} vs {k2.shape}")
    diff = k1.values - k2.values
    delta = float(diff.mean())
    return delta, float(np.abs(diff - delta).max())


def curation_lemma_residual(joint: DiscreteJoint) -> float:
    """Max entrywise deviation from zero of the ratio-curation identity above."""
    ev_given_x, eu_given_y = _conditional_means(joint)
    K_star = pmi_matrix(joint).values
    K_a = pmi_matrix(joint, use_curation=True).values
    lhs = (
        K_a
        - K_star
        + np.log(ev_given_x)[:, None]
        + np.log(eu_given_y)[None, :]
        - np.log(joint.normalizer())
    )
    return float(np.abs(lhs).max())


def expectation_identity_residual(joint: DiscreteJoint) -> float:
    """|sum p exp(-K) - 1|; the PMI reweights the joint back to the product of marginals."""
    K = pmi_matrix(joint).values
    return float(abs(np.sum(joint.p * np.exp(-K)) - 1.0))
