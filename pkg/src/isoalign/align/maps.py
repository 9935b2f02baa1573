"""Applying, composing, inverting and persisting alignment maps."""

from __future__ import annotations

from dataclasses import replace
from pathlib import Path
from typing import Optional

import numpy as np
from scipy import linalg

from isoalign.core.console import get_logger
from isoalign.core.exceptions import (
    ContractError,
    DimensionMismatchError,
    FormatError,
    NotInvertibleError,
)
from isoalign.core.models import AlignmentMap, EmbeddingSet, FitModality, MapKind
from isoalign.store import codec
from isoalign.store.embeddings import normalize

from .procrustes import SINGULAR_TOL

logger = get_logger(__name__)


def _resolve_means(
    amap: AlignmentMap,
    override_mu_source: Optional[np.ndarray],
    override_mu_target: Optional[np.ndarray],
) -> tuple:
    mu_s = override_mu_source if override_mu_source is not None else amap.mu_source
    mu_t = override_mu_target if override_mu_target is not None else amap.mu_target
    mu_s = np.zeros(amap.d) if mu_s is None else np.asarray(mu_s, dtype=np.float64)
    mu_t = np.zeros(amap.d_tilde) if mu_t is None else np.asarray(mu_t, dtype=np.float64)
    if mu_s.shape != (amap.d,) or mu_t.shape != (amap.d_tilde,):
        raise DimensionMismatchError(
            f"mean overrides need lengths ({amap.d}, {amap.d_tilde}), "
            f"got ({mu_s.shape}, {mu_t.shape})"
        )
    return mu_s, mu_t


def apply_rows(
    amap: AlignmentMap,
    rows: np.ndarray,
    override_mu_source: Optional[np.ndarray] = None,
    override_mu_target: Optional[np.ndarray] = None,
) -> np.ndarray:
    """Map a raw (n x d) array of rows: z -> Q (z - mu_s) + mu_t."""
    rows = np.asarray(rows, dtype=np.float64)
    if rows.ndim != 2 or rows.shape[1] != amap.d:
        raise DimensionMismatchError(f"rows of width {rows.shape[-1]} for a map with d={amap.d}")
    mu_s, mu_t = _resolve_means(amap, override_mu_source, override_mu_target)
    return (rows - mu_s) @ amap.Q.T + mu_t


def apply(
    amap: AlignmentMap,
    es: EmbeddingSet,
    override_mu_source: Optional[np.ndarray] = None,
    override_mu_target: Optional[np.ndarray] = None,
    renormalize: bool = False,
) -> EmbeddingSet:
    """
    Transform every row of ``es``.

    Means come from the overrides when given, else from the map, else zero. The
    result carries the target model id; it is marked normalized only if ``renormalize``.
    """
    if es.d != amap.d:
        raise DimensionMismatchError(f"set has d={es.d} but the map expects d={amap.d}")
    out = apply_rows(amap, es.data, override_mu_source, override_mu_target)
    mapped = es.with_data(out, model_id=amap.target_model or es.model_id, normalized=False)
    if renormalize:
        mapped = normalize(mapped)
    return mapped


def with_means(
    amap: AlignmentMap, mu_source: Optional[np.ndarray], mu_target: Optional[np.ndarray]
) -> AlignmentMap:
    """Keep Q, swap the stored means (cross-dataset re-centering)."""
    return replace(amap, mu_source=mu_source, mu_target=mu_target)


def compose(first: AlignmentMap, second: AlignmentMap) -> AlignmentMap:
    """
    The map "first, then second". A missing pair of means counts as zero, so the
    result carries means whenever either input does.
    """
    if second.d != first.d_tilde:
        raise DimensionMismatchError(
            f"cannot compose: first maps into {first.d_tilde} dims, second expects {second.d}"
        )
    Q = second.Q @ first.Q
    mu_s = mu_t = None
    if first.has_means or second.has_means:
        mu_s1, mu_t1 = _resolve_means(first, None, None)
        mu_s2, mu_t2 = _resolve_means(second, None, None)
        mu_s = mu_s1
        mu_t = second.Q @ (mu_t1 - mu_s2) + mu_t2
    both_orthogonal = first.kind is MapKind.ORTHOGONAL and second.kind is MapKind.ORTHOGONAL
    return AlignmentMap(
        Q=Q,
        mu_source=mu_s,
        mu_target=mu_t,
        kind=MapKind.ORTHOGONAL if both_orthogonal else MapKind.LINEAR,
        fit_modality=first.fit_modality if first.fit_modality is second.fit_modality
        else FitModality.SYNTHETIC,
        source_model=first.source_model,
        target_model=second.target_model,
        stats={"composed": True},
    )


def invert(amap: AlignmentMap) -> AlignmentMap:
    """Inverse of a square map; means swap roles."""
    if amap.d != amap.d_tilde:
        raise NotInvertibleError(
            f"a {amap.d_tilde}x{amap.d} map has no two-sided inverse; "
            "compose with its transpose for a left inverse"
        )
    if amap.kind is MapKind.ORTHOGONAL:
        Q_inv = amap.Q.T.copy()
    else:
        s = linalg.svdvals(amap.Q)
        if s[-1] <= SINGULAR_TOL * max(s[0], 1.0):
            raise NotInvertibleError(f"linear map is singular (sigma_min={s[-1]:.3e})")
        Q_inv = linalg.inv(amap.Q)
    return AlignmentMap(
        Q=Q_inv,
        mu_source=amap.mu_target,
        mu_target=amap.mu_source,
        kind=amap.kind,
        fit_modality=amap.fit_modality,
        source_model=amap.target_model,
        target_model=amap.source_model,
        stats={"inverted": True},
    )


def save_map(amap: AlignmentMap, path: str | Path) -> None:
    path = Path(path)
    codec.write_atomic(path, codec.encode_map(amap.Q, amap.mu_source, amap.mu_target, amap.kind))
    codec.write_sidecar(
        path,
        {
            "fit_modality": amap.fit_modality.value,
            "source_model": amap.source_model,
            "target_model": amap.target_model,
            "stats": amap.stats,
        },
    )
    logger.debug("wrote map %s (%dx%d)", path.name, amap.d_tilde, amap.d)


def load_map(path: str | Path) -> AlignmentMap:
    path = Path(path)
    payload = codec.decode_map(path.read_bytes())
    meta = codec.read_sidecar(path)
    try:
        return AlignmentMap(
            Q=payload.Q,
            mu_source=payload.mu_source,
            mu_target=payload.mu_target,
            kind=payload.kind,
            fit_modality=FitModality(meta.get("fit_modality", FitModality.SYNTHETIC.value)),
            source_model=str(meta.get("source_model", "")),
            target_model=str(meta.get("target_model", "")),
            stats=dict(meta.get("stats") or {}),
        )
    except (ContractError, TypeError, ValueError) as e:
        # a payload that decodes but breaks the map invariants is still a bad file
        raise FormatError(f"{path.name}: {e}") from e
