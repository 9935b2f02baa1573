"""
Embedding set persistence and preparation.

Files are EMB1 binaries (see ``codec``) with an optional ``<path>.json`` sidecar
holding model_id, modality, dataset_id, class_names and the normalized flag.
Paired sets (the same inputs through two models) are matched purely by row index.
"""

from __future__ import annotations

import math
from pathlib import Path
from typing import Any, Dict, Optional, Tuple

import numpy as np

from isoalign.core.console import get_logger
from isoalign.core.exceptions import (
    DegenerateRowError,
    FormatError,
    MissingLabelsError,
    PairingError,
    StructuralError,
    UnknownClassError,
    ValidationError,
)
from isoalign.core.models import (
    UNIT_NORM_TOL,
    ClassPrototypes,
    EmbeddingSet,
    Modality,
    SplitKind,
    SplitSpec,
    StorageDType,
    row_norms,
)

from . import codec

logger = get_logger(__name__)

DEFAULT_EPSILON = 1e-12
PROTOTYPE_EPSILON = 1e-12


def _class_names_from_sidecar(raw: Any) -> Optional[Dict[int, str]]:
    if raw is None:
        return None
    if not isinstance(raw, dict):
        raise StructuralError("sidecar class_names must be an object")
    names: Dict[int, str] = {}
    for key, value in raw.items():
        try:
            names[int(key)] = str(value)
        except (TypeError, ValueError) as e:
            raise StructuralError(f"sidecar class id {key!r} is not an integer") from e
    return names


def _modality_from_sidecar(raw: Any) -> Modality:
    if raw is None:
        return Modality.IMAGE
    try:
        return Modality(raw)
    except ValueError as e:
        raise StructuralError(f"sidecar modality {raw!r} is not 'image' or 'text'") from e


def load_embeddings(path: str | Path) -> EmbeddingSet:
    """
    Read an EMB1 file plus its sidecar.

    The stored values are widened to float64; nothing is normalized here. A sidecar
    ``normalized: true`` is kept only if every row passes the unit-norm check.
    """
    path = Path(path)
    payload = codec.decode_embeddings(path.read_bytes())
    meta = codec.read_sidecar(path)

    normalized = bool(meta.get("normalized", False))
    if normalized:
        dev = np.abs(row_norms(payload.data) - 1.0).max()
        if dev > UNIT_NORM_TOL:
            logger.warning(
                "%s: sidecar says normalized but max |norm - 1| = %.2e; loading as unnormalized",
                path.name,
                dev,
            )
            normalized = False

    return EmbeddingSet(
        data=payload.data,
        labels=payload.labels,
        class_names=_class_names_from_sidecar(meta.get("class_names")),
        model_id=str(meta.get("model_id", "")),
        modality=_modality_from_sidecar(meta.get("modality")),
        dataset_id=str(meta.get("dataset_id", "")),
        normalized=normalized,
        storage_dtype=payload.storage_dtype,
    )


def save_embeddings(
    es: EmbeddingSet,
    path: str | Path,
    dtype: Optional[StorageDType] = None,
    extra: Optional[Dict[str, Any]] = None,
) -> None:
    """Write ``es`` as EMB1 in ``dtype`` (default: the set's storage dtype) plus a sidecar."""
    if es.n == 0:
        raise ValidationError("cannot save an empty embedding set")
    if es.labels is not None and es.labels.size and es.labels.max() >= 2**32:
        raise ValidationError("labels must fit in an unsigned 32-bit integer")
    dtype = dtype or es.storage_dtype
    path = Path(path)

    codec.write_atomic(path, codec.encode_embeddings(es.data, es.labels, dtype))

    meta: Dict[str, Any] = {
        "model_id": es.model_id,
        "modality": es.modality.value,
        "dataset_id": es.dataset_id,
        "normalized": es.normalized,
    }
    if es.class_names is not None:
        meta["class_names"] = {str(k): v for k, v in sorted(es.class_names.items())}
    if extra:
        meta.update(extra)
    codec.write_sidecar(path, meta)
    logger.debug("wrote %s (%dx%d, %s)", path.name, es.n, es.d, dtype.value)


def normalize(es: EmbeddingSet, epsilon: float = DEFAULT_EPSILON) -> EmbeddingSet:
    """Divide every row by its Euclidean norm; rows with norm <= epsilon are an error."""
    if not epsilon > 0:
        raise ValidationError(f"epsilon must be > 0, got {epsilon}")
    norms = row_norms(es.data)
    bad = np.flatnonzero(norms <= epsilon)
    if bad.size:
        raise DegenerateRowError(f"{bad.size} rows have norm <= {epsilon:g}", rows=bad)
    return es.with_data(es.data / norms[:, None], normalized=True)


def class_prototypes(es: EmbeddingSet, source: str = "") -> ClassPrototypes:
    """Average each class's rows, then normalize the mean (one row per class, ascending id)."""
    if es.labels is None:
        raise MissingLabelsError("class prototypes need labels")
    if es.n == 0:
        raise ValidationError("class prototypes need at least one row")
    if not es.normalized:
        logger.warning(
            "averaging prototypes over unnormalized rows of %s; normalize first for unit prompts",
            es.model_id or "<unnamed>",
        )

    class_ids = np.unique(es.labels)
    rows = []
    degenerate = []
    for c in class_ids:
        members = es.data[es.labels == c]
        if members.shape[0] == 1 and es.normalized:
            rows.append(members[0].copy())
            continue
        mean = members.mean(axis=0)
        norm = float(np.linalg.norm(mean))
        if norm <= PROTOTYPE_EPSILON:
            degenerate.append(int(c))
            continue
        rows.append(mean / norm)
    if degenerate:
        raise DegenerateRowError("class means with near-zero norm for classes", rows=degenerate)

    return ClassPrototypes(
        data=np.vstack(rows),
        class_ids=class_ids,
        source=source or es.model_id,
    )


def split_indices(
    n: int, labels: Optional[np.ndarray], spec: SplitSpec
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Row indices of the (seen, unseen) partition, each in ascending order.

    by_fraction shuffles with ``default_rng(seed)`` and cuts at ceil(fraction * n);
    by_classes puts every row of a listed class in the seen part.
    """
    if spec.kind is SplitKind.BY_FRACTION:
        perm = np.random.default_rng(spec.seed).permutation(n)
        # rounding keeps 0.3 * 10 from landing on 3.0000000000000004
        cut = math.ceil(round(float(spec.train_fraction) * n, 9))
        return np.sort(perm[:cut]), np.sort(perm[cut:])

    if labels is None:
        raise MissingLabelsError("by_classes split needs labels")
    present = set(np.unique(labels).tolist())
    missing = sorted(set(spec.classes) - present)
    if missing:
        raise UnknownClassError(f"classes {missing} do not occur in the labels")
    mask = np.isin(labels, np.asarray(spec.classes, dtype=np.int64))
    return np.flatnonzero(mask), np.flatnonzero(~mask)


def split(es: EmbeddingSet, spec: SplitSpec) -> Tuple[EmbeddingSet, EmbeddingSet]:
    seen, unseen = split_indices(es.n, es.labels, spec)
    return es.take(seen), es.take(unseen)


def check_pairing(a: EmbeddingSet, b: EmbeddingSet) -> None:
    """Raise PairingError unless ``a`` and ``b`` can be matched row by row."""
    if a.n != b.n:
        raise PairingError(f"paired sets differ in size: {a.n} vs {b.n} rows")
    if a.labels is not None and b.labels is not None and not np.array_equal(a.labels, b.labels):
        first = int(np.flatnonzero(a.labels != b.labels)[0])
        raise PairingError(f"paired sets disagree on labels, first at row {first}")


def column_mean(es: EmbeddingSet) -> np.ndarray:
    if es.n == 0:
        raise ValidationError("mean of an empty set is undefined")
    return es.data.mean(axis=0)


def import_csv(
    path: str | Path,
    has_labels: bool = True,
    model_id: str = "",
    modality: Modality | str = Modality.IMAGE,
    dataset_id: str = "",
) -> EmbeddingSet:
    """Read a header-less CSV: optional integer label column, then coordinates."""
    path = Path(path)
    try:
        table = np.loadtxt(path, delimiter=",", dtype=np.float64, ndmin=2)
    except ValueError as e:
        raise FormatError(f"{path.name} is not a numeric CSV: {e}") from e
    if table.size == 0:
        raise ValidationError(f"{path.name} holds no rows")

    labels = None
    if has_labels:
        if table.shape[1] < 2:
            raise StructuralError("a labeled CSV needs a label column and at least one coordinate")
        raw = table[:, 0]
        if not np.all(np.isfinite(raw)) or not np.array_equal(raw, np.round(raw)):
            raise ValidationError("label column must hold integers")
        labels = raw.astype(np.int64)
        table = table[:, 1:]

    return EmbeddingSet(
        data=table,
        labels=labels,
        model_id=model_id,
        modality=Modality(modality),
        dataset_id=dataset_id,
    )


def save_prototypes(
    protos: ClassPrototypes,
    path: str | Path,
    model_id: str = "",
    class_names: Optional[Dict[int, str]] = None,
) -> None:
    """Prototypes are stored as a normalized text EMB1 whose labels are the class ids."""
    es = EmbeddingSet(
        data=protos.data,
        labels=protos.class_ids,
        class_names=class_names,
        model_id=model_id,
        modality=Modality.TEXT,
        normalized=True,
        storage_dtype=StorageDType.F64,
    )
    save_embeddings(es, path, extra={"source": protos.source})


def load_prototypes(path: str | Path) -> ClassPrototypes:
    es = load_embeddings(path)
    if es.labels is None:
        raise MissingLabelsError(f"{Path(path).name} has no class ids")
    meta = codec.read_sidecar(Path(path))
    return ClassPrototypes(
        data=es.data,
        class_ids=es.labels,
        source=str(meta.get("source", es.model_id)),
    )
