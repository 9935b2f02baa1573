"""EMB1 / MAP1 binary codecs.

Header layout (binary, all little-endian, 20 bytes for both formats):
- 4 bytes: magic (b'EMB1' or b'MAP1')
- u32: version (1)
- u32: n rows (EMB1) or d_tilde (MAP1)
- u32: d
- u8: dtype code (EMB1: 0 = f32, 1 = f64) or map kind (MAP1: 0 = orthogonal, 1 = linear)
- u8: flags (bit 0: labels present for EMB1, means present for MAP1)
- u16: reserved, must be 0

EMB1 body: n*d row-major values in the header dtype, then n u32 labels if flagged.
MAP1 body: d_tilde*d row-major f64 values of Q, then mu_source (d f64) and
mu_target (d_tilde f64) if flagged.

Decoding never trusts the header: every size is checked against the buffer and
any violation raises FormatError carrying the offset of the offending byte.
"""

from __future__ import annotations

import json
import os
import struct
import tempfile
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from isoalign.core.exceptions import FormatError, StructuralError, UnsupportedVersionError
from isoalign.core.models import MapKind, StorageDType

EMB_MAGIC = b"EMB1"
MAP_MAGIC = b"MAP1"
VERSION = 1
HEADER = struct.Struct("<4sIIIBBH")
HEADER_SIZE = HEADER.size  # 20

FLAG_LABELS = 0x01
FLAG_MEANS = 0x01

# header field offsets, used in error reports
_OFF_VERSION = 4
_OFF_ROWS = 8
_OFF_COLS = 12
_OFF_CODE = 16
_OFF_FLAGS = 17
_OFF_RESERVED = 18

_U32 = np.dtype("<u4")
_F64 = np.dtype("<f8")


@dataclass(frozen=True)
class EmbeddingPayload:
    data: np.ndarray  # float64 copy of the stored values
    labels: Optional[np.ndarray]
    storage_dtype: StorageDType


@dataclass(frozen=True)
class MapPayload:
    Q: np.ndarray
    mu_source: Optional[np.ndarray]
    mu_target: Optional[np.ndarray]
    kind: MapKind


def _check_header(buf: bytes, magic: bytes) -> tuple:
    if len(buf) < HEADER_SIZE:
        if buf[: len(magic)] != magic[: len(buf)]:
            raise FormatError(f"bad magic, expected {magic!r}", offset=0)
        raise FormatError(f"truncated header: {len(buf)} of {HEADER_SIZE} bytes", offset=len(buf))
    fields = HEADER.unpack_from(buf, 0)
    if fields[0] != magic:
        raise FormatError(f"bad magic {fields[0]!r}, expected {magic!r}", offset=0)
    if fields[1] != VERSION:
        raise UnsupportedVersionError(f"unsupported version {fields[1]}", offset=_OFF_VERSION)
    if fields[6] != 0:
        raise FormatError(f"reserved field is {fields[6]}, expected 0", offset=_OFF_RESERVED)
    return fields


def _finite_or_raise(values: np.ndarray, start: int, itemsize: int, what: str) -> None:
    bad = np.flatnonzero(~np.isfinite(values))
    if bad.size:
        raise FormatError(f"non-finite value in {what}", offset=start + int(bad[0]) * itemsize)


def encode_embeddings(data: np.ndarray, labels: Optional[np.ndarray], dtype: StorageDType) -> bytes:
    n, d = data.shape
    flags = FLAG_LABELS if labels is not None else 0
    header = HEADER.pack(EMB_MAGIC, VERSION, n, d, dtype.code, flags, 0)
    body = np.ascontiguousarray(data, dtype=dtype.numpy_dtype).tobytes()
    if labels is not None:
        body += np.ascontiguousarray(labels, dtype=_U32).tobytes()
    return header + body


def decode_embeddings(buf: bytes) -> EmbeddingPayload:
    _, _, n, d, code, flags, _ = _check_header(buf, EMB_MAGIC)
    if n < 1:
        raise FormatError("row count must be >= 1", offset=_OFF_ROWS)
    if d < 1:
        raise FormatError("dimension must be >= 1", offset=_OFF_COLS)
    if code not in (0, 1):
        raise FormatError(f"unknown dtype code {code}", offset=_OFF_CODE)
    if flags & ~FLAG_LABELS:
        raise FormatError(f"unknown flag bits 0x{flags:02x}", offset=_OFF_FLAGS)

    storage = StorageDType.from_code(code)
    itemsize = storage.numpy_dtype.itemsize
    data_end = HEADER_SIZE + n * d * itemsize
    if len(buf) < data_end:
        raise FormatError(
            f"truncated payload: header declares {n}x{d} values", offset=len(buf)
        )
    values = np.frombuffer(buf, dtype=storage.numpy_dtype, count=n * d, offset=HEADER_SIZE)
    _finite_or_raise(values, HEADER_SIZE, itemsize, "data")
    data = values.astype(np.float64).reshape(n, d)

    remaining = len(buf) - data_end
    labels = None
    if flags & FLAG_LABELS:
        if remaining != 4 * n:
            if remaining > 0 and remaining % 4 == 0:
                raise StructuralError(
                    f"label block holds {remaining // 4} labels but data has {n} rows"
                )
            raise FormatError("label block truncated or misaligned", offset=len(buf))
        labels = np.frombuffer(buf, dtype=_U32, count=n, offset=data_end).astype(np.int64)
    elif remaining:
        raise FormatError(f"{remaining} trailing bytes after payload", offset=data_end)
    return EmbeddingPayload(data=data, labels=labels, storage_dtype=storage)


def encode_map(
    Q: np.ndarray,
    mu_source: Optional[np.ndarray],
    mu_target: Optional[np.ndarray],
    kind: MapKind,
) -> bytes:
    d_tilde, d = Q.shape
    flags = FLAG_MEANS if mu_source is not None else 0
    header = HEADER.pack(MAP_MAGIC, VERSION, d_tilde, d, kind.code, flags, 0)
    body = np.ascontiguousarray(Q, dtype=_F64).tobytes()
    if mu_source is not None:
        body += np.ascontiguousarray(mu_source, dtype=_F64).tobytes()
        body += np.ascontiguousarray(mu_target, dtype=_F64).tobytes()
    return header + body


def decode_map(buf: bytes) -> MapPayload:
    _, _, d_tilde, d, code, flags, _ = _check_header(buf, MAP_MAGIC)
    if d_tilde < 1:
        raise FormatError("d_tilde must be >= 1", offset=_OFF_ROWS)
    if d < 1:
        raise FormatError("d must be >= 1", offset=_OFF_COLS)
    if code not in (0, 1):
        raise FormatError(f"unknown map kind {code}", offset=_OFF_CODE)
    if flags & ~FLAG_MEANS:
        raise FormatError(f"unknown flag bits 0x{flags:02x}", offset=_OFF_FLAGS)

    has_means = bool(flags & FLAG_MEANS)
    count = d_tilde * d + ((d + d_tilde) if has_means else 0)
    expected = HEADER_SIZE + 8 * count
    if len(buf) < expected:
        raise FormatError(
            f"truncated payload: expected {expected} bytes, got {len(buf)}", offset=len(buf)
        )
    if len(buf) > expected:
        raise FormatError(f"{len(buf) - expected} trailing bytes after payload", offset=expected)

    values = np.frombuffer(buf, dtype=_F64, count=count, offset=HEADER_SIZE)
    _finite_or_raise(values, HEADER_SIZE, 8, "map payload")
    values = values.astype(np.float64)
    Q = values[: d_tilde * d].reshape(d_tilde, d)
    mu_source = mu_target = None
    if has_means:
        mu_source = values[d_tilde * d : d_tilde * d + d]
        mu_target = values[d_tilde * d + d :]
    kind = MapKind.ORTHOGONAL if code == 0 else MapKind.LINEAR
    return MapPayload(Q=Q, mu_source=mu_source, mu_target=mu_target, kind=kind)


def write_atomic(path: Path, payload: bytes) -> None:
    """Write bytes through a temporary sibling file so readers never see a partial file."""
    path = Path(path)
    fd, tmp_name = tempfile.mkstemp(dir=str(path.parent),
                                    prefix=f".{path.name}.", suffix=".tmp")
    tmp_path = Path(tmp_name)
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(payload)
        os.replace(tmp_path, path)
    finally:
        try:
            tmp_path.unlink()
        except FileNotFoundError:
            pass


def sidecar_path(path: Path) -> Path:
    return Path(str(path) + ".json")


def read_sidecar(path: Path) -> dict:
    """Return the parsed ``<path>.json`` sidecar, or {} when there is none."""
    side = sidecar_path(path)
    if not side.exists():
        return {}
    try:
        meta = json.loads(side.read_text(encoding="utf-8"))
    except (json.JSONDecodeError, UnicodeDecodeError) as e:
        raise FormatError(f"sidecar {side.name} is not valid JSON: {e}") from e
    if not isinstance(meta, dict):
        raise FormatError(f"sidecar {side.name} must hold a JSON object")
    return meta


def write_sidecar(path: Path, meta: dict) -> None:
    text = json.dumps(meta, sort_keys=True, indent=2) + "\n"
    write_atomic(sidecar_path(path), text.encode("utf-8"))
