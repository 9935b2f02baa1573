"""
Base data models shared across isoalign.

What is this ?
- The value types every module passes around: embedding sets, prototypes, alignment maps,
  anchor matrices, kernel tables, discrete joints and the numeric reports built from them.
- All of them are immutable after construction: arrays are copied to float64 and marked
  read-only, and invariants are checked in ``__post_init__`` so a constructed value is a
  valid value.
- Compute precision is float64 everywhere; the stored dtype of an embedding file is only
  remembered so that load -> save reproduces the file.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Any, Dict, Optional, Sequence

import numpy as np

from .exceptions import DimensionMismatchError, StructuralError, ValidationError

UNIT_NORM_TOL = 1e-9
ORTHOGONALITY_TOL = 1e-8


class Modality(Enum):
    IMAGE = "image"
    TEXT = "text"


class StorageDType(Enum):
    # on-disk element type of an EMB1 payload
    F32 = "f32"
    F64 = "f64"

    @property
    def code(self) -> int:
        return 0 if self is StorageDType.F32 else 1

    @property
    def numpy_dtype(self) -> np.dtype:
        return np.dtype("<f4") if self is StorageDType.F32 else np.dtype("<f8")

    @classmethod
    def from_code(cls, code: int) -> "StorageDType":
        return {0: cls.F32, 1: cls.F64}[code]


class SplitKind(Enum):
    BY_FRACTION = "by_fraction"
    BY_CLASSES = "by_classes"


class MapKind(Enum):
    ORTHOGONAL = "orthogonal"
    LINEAR = "linear"

    @property
    def code(self) -> int:
        return 0 if self is MapKind.ORTHOGONAL else 1


class FitModality(Enum):
    # what the map was estimated from
    IMAGE = "image"
    TEXT = "text"
    ANCHORS = "anchors"
    SYNTHETIC = "synthetic"


def _frozen_matrix(values: Any, name: str) -> np.ndarray:
    arr = np.array(values, dtype=np.float64, copy=True)
    if arr.ndim != 2:
        raise DimensionMismatchError(f"{name} must be 2-D, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValidationError(f"{name} contains non-finite entries")
    arr.setflags(write=False)
    return arr


def _frozen_vector(values: Any, name: str) -> np.ndarray:
    arr = np.array(values, dtype=np.float64, copy=True)
    if arr.ndim != 1:
        raise DimensionMismatchError(f"{name} must be 1-D, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValidationError(f"{name} contains non-finite entries")
    arr.setflags(write=False)
    return arr


def _frozen_labels(values: Any, n: int) -> np.ndarray:
    arr = np.asarray(values)
    if arr.ndim != 1:
        raise StructuralError(f"labels must be 1-D, got shape {arr.shape}")
    if arr.size and not np.issubdtype(arr.dtype, np.integer):
        as_int = arr.astype(np.int64)
        if not np.array_equal(as_int, arr):
            raise ValidationError("labels must be integers")
        arr = as_int
    arr = arr.astype(np.int64, copy=True)
    if arr.shape[0] != n:
        raise StructuralError(f"labels has {arr.shape[0]} entries but data has {n} rows")
    if arr.size and arr.min() < 0:
        raise ValidationError("labels must be non-negative")
    arr.setflags(write=False)
    return arr


def row_norms(data: np.ndarray) -> np.ndarray:
    return np.linalg.norm(data, axis=1)


@dataclass(frozen=True)
class EmbeddingSet:
    """Rows of embeddings for one (model, modality, dataset) triple."""

    data: np.ndarray
    labels: Optional[np.ndarray] = None
    class_names: Optional[Dict[int, str]] = None
    model_id: str = ""
    modality: Modality = Modality.IMAGE
    dataset_id: str = ""
    normalized: bool = False
    storage_dtype: StorageDType = StorageDType.F64

    def __post_init__(self) -> None:
        data = _frozen_matrix(self.data, "data")
        if data.shape[1] < 1:
            raise ValidationError("embedding dimension d must be >= 1")
        object.__setattr__(self, "data", data)
        if self.labels is not None:
            object.__setattr__(self, "labels", _frozen_labels(self.labels, data.shape[0]))
        if self.class_names is not None:
            names = {int(k): str(v) for k, v in self.class_names.items()}
            if self.labels is not None:
                missing = sorted(set(np.unique(self.labels).tolist()) - set(names))
                if missing:
                    raise StructuralError(f"class_names has no entry for labels {missing}")
            object.__setattr__(self, "class_names", names)
        if not isinstance(self.modality, Modality):
            object.__setattr__(self, "modality", Modality(self.modality))
        if not isinstance(self.storage_dtype, StorageDType):
            object.__setattr__(self, "storage_dtype", StorageDType(self.storage_dtype))
        if self.normalized and data.shape[0]:
            dev = np.abs(row_norms(data) - 1.0)
            if dev.max() > UNIT_NORM_TOL:
                bad = np.flatnonzero(dev > UNIT_NORM_TOL)
                raise ValidationError(
                    f"set marked normalized but rows {bad[:10].tolist()} are not unit-norm"
                )

    @property
    def n(self) -> int:
        return int(self.data.shape[0])

    @property
    def d(self) -> int:
        return int(self.data.shape[1])

    @property
    def has_labels(self) -> bool:
        return self.labels is not None

    def take(self, indices: Sequence[int] | np.ndarray) -> "EmbeddingSet":
        """Return the rows at ``indices`` (in that order) with metadata carried over."""
        idx = np.asarray(indices, dtype=np.int64)
        labels = None if self.labels is None else self.labels[idx]
        return replace(self, data=self.data[idx], labels=labels)

    def with_data(self, data: np.ndarray, **changes: Any) -> "EmbeddingSet":
        return replace(self, data=data, **changes)

    def describe(self) -> Dict[str, Any]:
        return {
            "model_id": self.model_id,
            "modality": self.modality.value,
            "dataset_id": self.dataset_id,
            "n": self.n,
            "d": self.d,
            "normalized": self.normalized,
            "labeled": self.has_labels,
        }

    def __repr__(self) -> str:
        return (
            f"EmbeddingSet(model_id={self.model_id!r}, modality={self.modality.value!r}, "
            f"n={self.n}, d={self.d}, normalized={self.normalized})"
        )


@dataclass(frozen=True)
class ClassPrototypes:
    """One unit-norm row per class, ordered by ascending class id."""

    data: np.ndarray
    class_ids: np.ndarray
    source: str = ""

    def __post_init__(self) -> None:
        data = _frozen_matrix(self.data, "prototypes")
        ids = np.array(self.class_ids, dtype=np.int64, copy=True)
        if ids.ndim != 1 or ids.shape[0] != data.shape[0]:
            raise StructuralError(
                f"class_ids has {ids.shape} entries for {data.shape[0]} prototype rows"
            )
        if np.unique(ids).shape[0] != ids.shape[0]:
            raise ValidationError("prototype class ids must be distinct")
        if data.shape[0] and np.abs(row_norms(data) - 1.0).max() > UNIT_NORM_TOL:
            raise ValidationError("prototype rows must be unit-norm")
        ids.setflags(write=False)
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "class_ids", ids)

    @property
    def k(self) -> int:
        return int(self.data.shape[0])

    @property
    def d(self) -> int:
        return int(self.data.shape[1])


@dataclass(frozen=True)
class SplitSpec:
    """How to partition a set into a fitting part and a held-out part."""

    kind: SplitKind
    train_fraction: Optional[float] = None
    classes: Optional[Sequence[int]] = None
    seed: int = 0

    def __post_init__(self) -> None:
        if not isinstance(self.kind, SplitKind):
            object.__setattr__(self, "kind", SplitKind(self.kind))
        if not 0 <= int(self.seed) < 2**64:
            raise ValidationError("seed must be an unsigned 64-bit integer")
        if self.kind is SplitKind.BY_FRACTION:
            if self.train_fraction is None or not 0.0 < float(self.train_fraction) <= 1.0:
                raise ValidationError(
                    f"by_fraction needs 0 < fraction <= 1, got {self.train_fraction}"
                )
        else:
            if not self.classes:
                raise ValidationError("by_classes needs a non-empty class list")
            object.__setattr__(self, "classes", tuple(int(c) for c in self.classes))

    @classmethod
    def by_fraction(cls, fraction: float, seed: int = 0) -> "SplitSpec":
        return cls(kind=SplitKind.BY_FRACTION, train_fraction=fraction, seed=seed)

    @classmethod
    def by_classes(cls, classes: Sequence[int], seed: int = 0) -> "SplitSpec":
        return cls(kind=SplitKind.BY_CLASSES, classes=classes, seed=seed)


@dataclass(frozen=True)
class AlignmentMap:
    """
    An affine map z -> Q (z - mu_source) + mu_target from a d-dim source space into a
    d_tilde-dim target space. Orthogonal maps have orthonormal columns (Q^T Q = I_d).
    """

    Q: np.ndarray
    mu_source: Optional[np.ndarray] = None
    mu_target: Optional[np.ndarray] = None
    kind: MapKind = MapKind.ORTHOGONAL
    fit_modality: FitModality = FitModality.IMAGE
    source_model: str = ""
    target_model: str = ""
    stats: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        Q = _frozen_matrix(self.Q, "Q")
        object.__setattr__(self, "Q", Q)
        if not isinstance(self.kind, MapKind):
            object.__setattr__(self, "kind", MapKind(self.kind))
        if not isinstance(self.fit_modality, FitModality):
            object.__setattr__(self, "fit_modality", FitModality(self.fit_modality))
        if (self.mu_source is None) != (self.mu_target is None):
            raise ValidationError("mu_source and mu_target must both be present or both absent")
        if self.mu_source is not None:
            mu_s = _frozen_vector(self.mu_source, "mu_source")
            mu_t = _frozen_vector(self.mu_target, "mu_target")
            if mu_s.shape[0] != self.d or mu_t.shape[0] != self.d_tilde:
                raise DimensionMismatchError(
                    f"means have lengths ({mu_s.shape[0]}, {mu_t.shape[0]}) "
                    f"for a {self.d_tilde}x{self.d} map"
                )
            object.__setattr__(self, "mu_source", mu_s)
            object.__setattr__(self, "mu_target", mu_t)
        if self.kind is MapKind.ORTHOGONAL:
            if self.d > self.d_tilde:
                raise DimensionMismatchError(
                    f"orthogonal map needs d <= d_tilde, got d={self.d}, d_tilde={self.d_tilde}"
                )
            dev = self.orthogonality_defect()
            if dev > ORTHOGONALITY_TOL:
                raise ValidationError(f"orthogonal map has ||Q^T Q - I||_F = {dev:.3e}")
        object.__setattr__(self, "stats", dict(self.stats))

    @property
    def d(self) -> int:
        return int(self.Q.shape[1])

    @property
    def d_tilde(self) -> int:
        return int(self.Q.shape[0])

    @property
    def has_means(self) -> bool:
        return self.mu_source is not None

    def orthogonality_defect(self) -> float:
        return float(np.linalg.norm(self.Q.T @ self.Q - np.eye(self.d), "fro"))

    def describe(self) -> Dict[str, Any]:
        return {
            "kind": self.kind.value,
            "fit_modality": self.fit_modality.value,
            "source_model": self.source_model,
            "target_model": self.target_model,
            "d": self.d,
            "d_tilde": self.d_tilde,
            "centered": self.has_means,
            "stats": dict(self.stats),
        }

    def __repr__(self) -> str:
        return (
            f"AlignmentMap(kind={self.kind.value!r}, {self.source_model!r}->{self.target_model!r}, "
            f"shape={self.Q.shape}, centered={self.has_means})"
        )


@dataclass(frozen=True)
class AnchorSet:
    """
    Anchor matrices with anchors stored as columns:
    G (d x m) source text anchors, G_tilde (d_tilde x m) target text anchors,
    F (d x r) source image anchors.
    """

    G: np.ndarray
    G_tilde: np.ndarray
    F: np.ndarray

    def __post_init__(self) -> None:
        G = _frozen_matrix(self.G, "G")
        G_tilde = _frozen_matrix(self.G_tilde, "G_tilde")
        F = _frozen_matrix(self.F, "F")
        if G.shape[1] != G_tilde.shape[1]:
            raise DimensionMismatchError(
                f"G and G_tilde need equal column counts, got {G.shape[1]} and {G_tilde.shape[1]}"
            )
        if F.shape[0] != G.shape[0]:
            raise DimensionMismatchError("F and G must live in the same source dimension")
        if F.shape[1] > F.shape[0]:
            raise DimensionMismatchError(f"F has {F.shape[1]} anchors for dimension {F.shape[0]}")
        for name, mat in (("G", G), ("G_tilde", G_tilde), ("F", F)):
            if mat.shape[1] and np.abs(np.linalg.norm(mat, axis=0) - 1.0).max() > UNIT_NORM_TOL:
                raise ValidationError(f"{name} columns must be unit-norm")
        object.__setattr__(self, "G", G)
        object.__setattr__(self, "G_tilde", G_tilde)
        object.__setattr__(self, "F", F)

    @property
    def d(self) -> int:
        return int(self.G.shape[0])

    @property
    def d_tilde(self) -> int:
        return int(self.G_tilde.shape[0])


@dataclass(frozen=True)
class KernelMatrix:
    """A table of scores between two row collections (inner products or PMI values)."""

    values: np.ndarray
    row_source: str = ""
    col_source: str = ""
    bounded: bool = False

    def __post_init__(self) -> None:
        values = _frozen_matrix(self.values, "kernel")
        if self.bounded and values.size and np.abs(values).max() > 1.0 + UNIT_NORM_TOL:
            raise ValidationError("inner-product kernel of unit rows has entries outside [-1, 1]")
        object.__setattr__(self, "values", values)

    @property
    def shape(self) -> tuple:
        return tuple(self.values.shape)


@dataclass(frozen=True)
class MetricsReport:
    """One metric family's numbers; fields that do not apply stay None."""

    mean_cosine: Optional[float] = None
    std_cosine: Optional[float] = None
    mean_l2: Optional[float] = None
    top1_accuracy: Optional[float] = None
    per_class_accuracy: Dict[int, float] = field(default_factory=dict)
    n_queries: int = 0

    def __post_init__(self) -> None:
        if self.top1_accuracy is not None:
            if self.n_queries <= 0:
                raise ValidationError("an accuracy needs n_queries > 0")
            if not 0.0 <= self.top1_accuracy <= 1.0:
                raise ValidationError(f"accuracy {self.top1_accuracy} outside [0, 1]")
        for acc in self.per_class_accuracy.values():
            if not 0.0 <= acc <= 1.0:
                raise ValidationError(f"per-class accuracy {acc} outside [0, 1]")

    def to_dict(self) -> Dict[str, Any]:
        return {
            "mean_cosine": self.mean_cosine,
            "std_cosine": self.std_cosine,
            "mean_l2": self.mean_l2,
            "top1_accuracy": self.top1_accuracy,
            "per_class_accuracy": {str(k): v for k, v in sorted(self.per_class_accuracy.items())},
            "n_queries": self.n_queries,
        }


@dataclass(frozen=True)
class BoundReport:
    """Outcome of one theorem check; quantities that a theorem does not use stay None."""

    theorem: str
    bound_value: float
    observed_max: float
    satisfied: bool
    epsilon: Optional[float] = None
    epsilon_prime: Optional[float] = None
    delta_f: Optional[float] = None
    sigma_min_Gtilde: Optional[float] = None
    sigma_min_F: Optional[float] = None
    rho: Optional[float] = None
    tolerance: float = 1e-9
    extras: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        expected = bool(self.observed_max <= self.bound_value + self.tolerance)
        if bool(self.satisfied) != expected:
            raise ValidationError("satisfied must equal observed_max <= bound_value + tolerance")

    @classmethod
    def judge(cls, theorem: str, bound_value: float, observed_max: float, tolerance: float = 1e-9,
              **fields: Any) -> "BoundReport":
        satisfied = bool(observed_max <= bound_value + tolerance)
        return cls(theorem=theorem, bound_value=float(bound_value),
                   observed_max=float(observed_max), satisfied=satisfied,
                   tolerance=tolerance, **fields)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "theorem": self.theorem,
            "epsilon": self.epsilon,
            "epsilon_prime": self.epsilon_prime,
            "delta_f": self.delta_f,
            "sigma_min_Gtilde": self.sigma_min_Gtilde,
            "sigma_min_F": self.sigma_min_F,
            "rho": self.rho,
            "bound_value": self.bound_value,
            "observed_max": self.observed_max,
            "satisfied": self.satisfied,
            "tolerance": self.tolerance,
            "extras": dict(sorted(self.extras.items())),
        }


@dataclass(frozen=True)
class MarginReport:
    gamma: float
    eta: float
    guaranteed: bool
    retrieval_correct: bool

    def to_dict(self) -> Dict[str, Any]:
        return {
            "gamma": self.gamma,
            "eta": self.eta,
            "guaranteed": self.guaranteed,
            "retrieval_correct": self.retrieval_correct,
        }


@dataclass(frozen=True)
class DiscreteJoint:
    """
    A strictly positive joint probability table p over X x Y, optionally with
    separable curation weights u (over X) and v (over Y).
    """

    p: np.ndarray
    u: Optional[np.ndarray] = None
    v: Optional[np.ndarray] = None

    def __post_init__(self) -> None:
        p = _frozen_matrix(self.p, "p")
        if p.size == 0:
            raise ValidationError("joint table is empty")
        if np.any(p <= 0):
            raise ValidationError("joint table must be strictly positive")
        if abs(float(p.sum()) - 1.0) > 1e-12:
            raise ValidationError(f"joint table sums to {float(p.sum())!r}, expected 1")
        object.__setattr__(self, "p", p)
        for name, weights, size in (("u", self.u, p.shape[0]), ("v", self.v, p.shape[1])):
            if weights is None:
                continue
            w = _frozen_vector(weights, name)
            if w.shape[0] != size:
                raise DimensionMismatchError(f"{name} has length {w.shape[0]}, expected {size}")
            if np.any(w <= 0):
                raise ValidationError(f"curation weights {name} must be positive")
            object.__setattr__(self, name, w)

    @property
    def has_weights(self) -> bool:
        return self.u is not None and self.v is not None

    @property
    def marginal_x(self) -> np.ndarray:
        return self.p.sum(axis=1)

    @property
    def marginal_y(self) -> np.ndarray:
        return self.p.sum(axis=0)

    def normalizer(self) -> float:
        """Z = E*[u(X) v(Y)] under the base table."""
        u = np.ones(self.p.shape[0]) if self.u is None else self.u
        v = np.ones(self.p.shape[1]) if self.v is None else self.v
        return float(np.sum(self.p * np.outer(u, v)))

    def curated(self) -> "DiscreteJoint":
        """The curated table p_a proportional to u(x) v(y) p(x, y), without weights attached."""
        u = np.ones(self.p.shape[0]) if self.u is None else self.u
        v = np.ones(self.p.shape[1]) if self.v is None else self.v
        weighted = self.p * np.outer(u, v)
        return DiscreteJoint(p=weighted / weighted.sum())

    @classmethod
    def from_weights(cls, table: np.ndarray, u: Optional[np.ndarray] = None,
                     v: Optional[np.ndarray] = None) -> "DiscreteJoint":
        table = np.asarray(table, dtype=np.float64)
        return cls(p=table / table.sum(), u=u, v=v)
