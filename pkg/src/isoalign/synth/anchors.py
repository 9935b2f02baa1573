"""
Anchor worlds: planted scenarios with designated anchor prompts and images, and
worlds whose images only occupy an r-dimensional subspace.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Tuple

import numpy as np
from scipy import linalg

from isoalign.core.exceptions import InfeasibleScenarioError, ValidationError
from isoalign.core.models import AnchorSet, EmbeddingSet, Modality

from .planted import (
    SOURCE_MODEL,
    TARGET_MODEL,
    PlantedParams,
    PlantedScenario,
    make_planted,
    random_semi_orthogonal,
)


def anchor_indices(rows: np.ndarray, count: int) -> np.ndarray:
    """Indices of ``count`` well-conditioned rows, chosen by column-pivoted QR (ascending)."""
    rows = np.asarray(rows, dtype=np.float64)
    if count > min(rows.shape):
        raise ValidationError(f"cannot pick {count} independent rows from a {rows.shape} set")
    _, _, pivots = linalg.qr(rows.T, mode="economic", pivoting=True)
    return np.sort(pivots[:count])


def make_exact_anchor_world(d: int, d_tilde: int, seed: int = 0) -> Tuple[AnchorSet, PlantedScenario]:
    """
    A noise-free planted scenario plus anchors taken from its own rows: d text anchors
    (G, G_tilde) and d image anchors (F). The multimodal kernels agree exactly, so
    fit_from_anchors returns Q_true.

    Square anchor matrices need d == d_tilde: with d < d_tilde the target anchors
    Q_true G have rank d and cannot be inverted.
    """
    if d > d_tilde:
        raise ValidationError(f"d={d} exceeds d_tilde={d_tilde}")
    if d < d_tilde:
        raise InfeasibleScenarioError(
            f"exact anchors need d == d_tilde; target anchors would have rank {d} < {d_tilde}"
        )
    sym = d * (d + 1) // 2
    params = PlantedParams(
        d=d,
        d_tilde=d_tilde,
        n_img=sym + 2 * d,
        n_txt=4 * d,
        K=d,
        seed=seed,
    )
    scenario = make_planted(params)
    text_idx = anchor_indices(scenario.gA.data, d)
    image_idx = anchor_indices(scenario.fA.data, d)
    anchors = AnchorSet(
        G=scenario.gA.data[text_idx].T,
        G_tilde=scenario.gB.data[text_idx].T,
        F=scenario.fA.data[image_idx].T,
    )
    return anchors, scenario


@dataclass(frozen=True)
class SubspaceWorld:
    """Images confined to span(U_basis); texts leave it, and their off-subspace part is
    carried to model B by an isometry unrelated to Q_true."""

    U_basis: np.ndarray = field(repr=False)
    Q_true: np.ndarray = field(repr=False)
    F: np.ndarray = field(repr=False)
    F_tilde: np.ndarray = field(repr=False)
    fA: EmbeddingSet = field(repr=False)
    gA: EmbeddingSet = field(repr=False)
    fB: EmbeddingSet = field(repr=False)
    gB: EmbeddingSet = field(repr=False)
    seed: int = 0

    @property
    def r(self) -> int:
        return int(self.U_basis.shape[1])


def _unit(rows: np.ndarray) -> np.ndarray:
    return rows / np.linalg.norm(rows, axis=1, keepdims=True)


def make_subspace_world(
    d: int,
    d_tilde: int,
    r: int,
    n_img: int = 64,
    n_txt: int = 32,
    noise_sigma: float = 0.0,
    seed: int = 0,
) -> SubspaceWorld:
    if not 1 <= r <= d <= d_tilde:
        raise ValidationError(f"need 1 <= r <= d <= d_tilde, got r={r}, d={d}, d_tilde={d_tilde}")
    if n_img < r or n_txt < 1:
        raise ValidationError(f"need n_img >= r={r} and n_txt >= 1")
    rng = np.random.default_rng(seed)
    Q = random_semi_orthogonal(d, d_tilde, seed=int(rng.integers(2**32)))
    frame, _ = linalg.qr(rng.standard_normal((d, d)))
    U, C = frame[:, :r], frame[:, r:]

    f = _unit(rng.standard_normal((n_img, r))) @ U.T
    g = _unit(rng.standard_normal((n_txt, d)))
    u = (g @ U) @ U.T
    w = g - u
    if d > r:
        O, _ = linalg.qr(rng.standard_normal((d - r, d - r)))
        w_moved = ((w @ C) @ O.T) @ C.T
    else:
        w_moved = w
    g_tilde = (u + w_moved) @ Q.T

    f_tilde = f @ Q.T
    if noise_sigma > 0:
        f_tilde = _unit(f_tilde + noise_sigma * rng.standard_normal(f_tilde.shape))

    idx = anchor_indices(f, r)

    def emb(data: np.ndarray, model: str, modality: Modality) -> EmbeddingSet:
        return EmbeddingSet(data=data, model_id=model, modality=modality,
                            dataset_id="subspace", normalized=True)

    return SubspaceWorld(
        U_basis=U,
        Q_true=Q,
        F=f[idx].T,
        F_tilde=f_tilde[idx].T,
        fA=emb(f, SOURCE_MODEL, Modality.IMAGE),
        gA=emb(g, SOURCE_MODEL, Modality.TEXT),
        fB=emb(f_tilde, TARGET_MODEL, Modality.IMAGE),
        gB=emb(g_tilde, TARGET_MODEL, Modality.TEXT),
        seed=seed,
    )
