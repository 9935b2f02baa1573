"""
Nearest-neighbour decisions by cosine similarity.

Every decision goes through ``np.argmax`` over a similarity row, so ties resolve to
the lowest gallery index (or lowest class id, since prototypes are sorted by id).
"""

from __future__ import annotations

from typing import Dict

import numpy as np

from isoalign.core.exceptions import (
    DimensionMismatchError,
    MissingLabelsError,
    UnknownClassError,
    ValidationError,
)
from isoalign.core.models import ClassPrototypes, EmbeddingSet, MetricsReport

from .paired import unit_rows


def cosine_matrix(queries: np.ndarray, gallery: np.ndarray) -> np.ndarray:
    if queries.shape[1] != gallery.shape[1]:
        raise DimensionMismatchError(
            f"queries have d={queries.shape[1]}, gallery has d={gallery.shape[1]}"
        )
    return unit_rows(queries) @ unit_rows(gallery).T


def nearest_indices(queries: np.ndarray, gallery: np.ndarray, exclude_self: bool = False) -> np.ndarray:
    """Index of the most similar gallery row for each query row."""
    if gallery.shape[0] == 0:
        raise ValidationError("gallery is empty")
    sims = cosine_matrix(queries, gallery)
    if exclude_self:
        if queries.shape[0] != gallery.shape[0]:
            raise DimensionMismatchError("exclude_self needs queries and gallery of equal size")
        if gallery.shape[0] < 2:
            raise ValidationError("exclude_self leaves no candidate in a one-row gallery")
        np.fill_diagonal(sims, -np.inf)
    return np.argmax(sims, axis=1)


def top_k_indices(queries: np.ndarray, gallery: np.ndarray, k: int) -> np.ndarray:
    """The k most similar gallery rows per query, best first, ties by lower index."""
    sims = cosine_matrix(queries, gallery)
    order = np.argsort(-sims, axis=1, kind="stable")
    return order[:, :k]


def _per_class(labels: np.ndarray, hits: np.ndarray) -> Dict[int, float]:
    return {int(c): float(hits[labels == c].mean()) for c in np.unique(labels)}


def class_retrieval_top1(
    queries: EmbeddingSet, gallery: EmbeddingSet, exclude_self: bool = False
) -> MetricsReport:
    """A query hits when its nearest gallery row carries the same class label."""
    if queries.labels is None or gallery.labels is None:
        raise MissingLabelsError("class retrieval needs labels on queries and gallery")
    if queries.n == 0:
        raise ValidationError("no queries")
    nn = nearest_indices(queries.data, gallery.data, exclude_self=exclude_self)
    hits = gallery.labels[nn] == queries.labels
    return MetricsReport(
        top1_accuracy=float(hits.mean()),
        per_class_accuracy=_per_class(queries.labels, hits),
        n_queries=queries.n,
    )


def zero_shot_predictions(images: np.ndarray, prototypes: ClassPrototypes) -> np.ndarray:
    order = np.argsort(prototypes.class_ids, kind="stable")
    class_ids = prototypes.class_ids[order]
    idx = nearest_indices(images, prototypes.data[order])
    return class_ids[idx]


def zero_shot(images: EmbeddingSet, prototypes: ClassPrototypes) -> MetricsReport:
    """Predict the class whose prototype is most cosine-similar to each image."""
    if images.labels is None:
        raise MissingLabelsError("zero-shot accuracy needs image labels")
    if images.n == 0:
        raise ValidationError("no images")
    missing = sorted(set(np.unique(images.labels).tolist()) - set(prototypes.class_ids.tolist()))
    if missing:
        raise UnknownClassError(f"no prototype for classes {missing}")
    predicted = zero_shot_predictions(images.data, prototypes)
    hits = predicted == images.labels
    return MetricsReport(
        top1_accuracy=float(hits.mean()),
        per_class_accuracy=_per_class(images.labels, hits),
        n_queries=images.n,
    )
