"""Unit tests for the EMB1 / MAP1 binary codec."""

import struct
from pathlib import Path

import numpy as np
import pytest

from isoalign.core.exceptions import FormatError, StructuralError, UnsupportedVersionError
from isoalign.core.models import MapKind, StorageDType
from isoalign.store import codec


def _emb(n=2, d=3, labels=True, dtype=StorageDType.F64):
    data = np.arange(n * d, dtype=float).reshape(n, d) / 10.0
    lab = np.arange(n) if labels else None
    return codec.encode_embeddings(data, lab, dtype)


def _patch(buf: bytes, offset: int, fmt: str, value) -> bytes:
    out = bytearray(buf)
    struct.pack_into(fmt, out, offset, value)
    return bytes(out)


# ==============================================================================
# Header Layout
# ==============================================================================

class TestHeader:
    def test_header_is_twenty_bytes(self):
        """Magic, version, two counts, code, flags, reserved."""
        assert codec.HEADER_SIZE == 20

    def test_embedding_layout(self):
        """Fields sit at their fixed little-endian offsets."""
        buf = _emb(n=2, d=3, labels=True, dtype=StorageDType.F32)
        magic, version, n, d, code, flags, reserved = codec.HEADER.unpack_from(buf, 0)
        assert magic == b"EMB1"
        assert (version, n, d, code, flags, reserved) == (1, 2, 3, 0, 1, 0)
        assert len(buf) == 20 + 2 * 3 * 4 + 2 * 4

    def test_labels_written_as_u32(self):
        """The label block follows the data as little-endian u32."""
        buf = codec.encode_embeddings(np.ones((2, 1)), np.array([7, 9]), StorageDType.F64)
        assert struct.unpack_from("<2I", buf, 20 + 16) == (7, 9)


# ==============================================================================
# Decoding
# ==============================================================================

class TestDecodeEmbeddings:
    def test_decode_recovers_values(self):
        """Decoding widens to float64 and keeps labels."""
        payload = codec.decode_embeddings(_emb(dtype=StorageDType.F32))
        assert payload.data.dtype == np.float64
        assert payload.storage_dtype is StorageDType.F32
        assert np.allclose(payload.data, np.arange(6).reshape(2, 3) / 10.0, atol=1e-7)
        assert payload.labels.tolist() == [0, 1]

    def test_bad_magic(self):
        """Wrong magic is reported at offset 0."""
        buf = b"XXXX" + _emb()[4:]
        with pytest.raises(FormatError) as exc:
            codec.decode_embeddings(buf)
        assert exc.value.offset == 0

    def test_map_magic_is_not_an_embedding(self):
        """A MAP1 file is refused by the embedding decoder."""
        buf = codec.encode_map(np.eye(2), None, None, MapKind.ORTHOGONAL)
        with pytest.raises(FormatError):
            codec.decode_embeddings(buf)

    def test_truncated_header(self):
        """A short header points at the end of the buffer."""
        with pytest.raises(FormatError) as exc:
            codec.decode_embeddings(_emb()[:10])
        assert exc.value.offset == 10

    def test_unsupported_version(self):
        """Version 2 is rejected with its own error type."""
        buf = _patch(_emb(), 4, "<I", 2)
        with pytest.raises(UnsupportedVersionError) as exc:
            codec.decode_embeddings(buf)
        assert exc.value.offset == 4

    def test_reserved_must_be_zero(self):
        """Non-zero reserved bytes are a format error."""
        with pytest.raises(FormatError) as exc:
            codec.decode_embeddings(_patch(_emb(), 18, "<H", 1))
        assert exc.value.offset == 18

    @pytest.mark.parametrize("offset,fmt,value", [(8, "<I", 0), (12, "<I", 0), (16, "<B", 2), (17, "<B", 0x02)])
    def test_bad_header_fields(self, offset, fmt, value):
        """Zero counts, unknown dtype codes and unknown flags name their offset."""
        with pytest.raises(FormatError) as exc:
            codec.decode_embeddings(_patch(_emb(), offset, fmt, value))
        assert exc.value.offset == offset

    def test_truncated_payload(self):
        """Missing data bytes are reported at the buffer end."""
        buf = _emb(labels=False)[:-5]
        with pytest.raises(FormatError) as exc:
            codec.decode_embeddings(buf)
        assert exc.value.offset == len(buf)

    def test_non_finite_value_offset(self):
        """The offset names the first non-finite element."""
        data = np.ones((2, 2))
        data[1, 0] = np.inf
        buf = codec.HEADER.pack(b"EMB1", 1, 2, 2, 1, 0, 0) + data.astype("<f8").tobytes()
        with pytest.raises(FormatError) as exc:
            codec.decode_embeddings(buf)
        assert exc.value.offset == 20 + 2 * 8

    def test_trailing_bytes_without_labels(self):
        """Extra bytes after an unlabeled payload are refused."""
        buf = _emb(labels=False) + b"\x00"
        with pytest.raises(FormatError) as exc:
            codec.decode_embeddings(buf)
        assert exc.value.offset == 20 + 6 * 8

    def test_label_count_disagrees(self):
        """A whole number of labels that does not match n is structural."""
        buf = _emb(labels=True) + b"\x00" * 4
        with pytest.raises(StructuralError):
            codec.decode_embeddings(buf)

    def test_label_block_misaligned(self):
        """A partial label is a format error."""
        with pytest.raises(FormatError):
            codec.decode_embeddings(_emb(labels=True)[:-1])


# ==============================================================================
# Maps
# ==============================================================================

class TestMapCodec:
    def test_map_with_means(self):
        """Q and both means survive encode/decode."""
        Q = np.eye(3)[:, :2]
        buf = codec.encode_map(Q, np.array([1.0, 2.0]), np.array([3.0, 4.0, 5.0]), MapKind.LINEAR)
        assert buf[:4] == b"MAP1"
        payload = codec.decode_map(buf)
        assert payload.Q.shape == (3, 2)
        assert payload.mu_target.tolist() == [3.0, 4.0, 5.0]
        assert payload.kind is MapKind.LINEAR

    def test_map_without_means(self):
        """The means flag is clear when there are no means."""
        buf = codec.encode_map(np.eye(2), None, None, MapKind.ORTHOGONAL)
        assert buf[17] == 0
        assert codec.decode_map(buf).mu_source is None

    def test_map_trailing_bytes(self):
        """Trailing bytes are reported where the payload should have ended."""
        buf = codec.encode_map(np.eye(2), None, None, MapKind.ORTHOGONAL)
        with pytest.raises(FormatError) as exc:
            codec.decode_map(buf + b"\x00" * 8)
        assert exc.value.offset == len(buf)

    def test_map_bad_kind(self):
        """Unknown map kind codes are refused."""
        buf = _patch(codec.encode_map(np.eye(2), None, None, MapKind.ORTHOGONAL), 16, "<B", 5)
        with pytest.raises(FormatError):
            codec.decode_map(buf)


# ==============================================================================
# Files
# ==============================================================================

class TestFiles:
    def test_write_atomic_leaves_no_temp(self, tmp_path: Path):
        """Only the target file remains after a write."""
        target = tmp_path / "out.bin"
        codec.write_atomic(target, b"abc")
        codec.write_atomic(target, b"defg")
        assert target.read_bytes() == b"defg"
        assert [p.name for p in tmp_path.iterdir()] == ["out.bin"]

    def test_write_atomic_failure_keeps_old_file(self, tmp_path: Path, mocker):
        """A failed replace leaves the previous content and no temp file."""
        target = tmp_path / "out.bin"
        target.write_bytes(b"old")
        mocker.patch("isoalign.store.codec.os.replace", side_effect=OSError("disk full"))
        with pytest.raises(OSError):
            codec.write_atomic(target, b"new")
        assert target.read_bytes() == b"old"
        assert [p.name for p in tmp_path.iterdir()] == ["out.bin"]

    def test_sidecar_roundtrip_and_absence(self, tmp_path: Path):
        """Missing sidecars read as {}; written ones come back as dicts."""
        path = tmp_path / "x.emb"
        assert codec.read_sidecar(path) == {}
        codec.write_sidecar(path, {"model_id": "m"})
        assert codec.sidecar_path(path).name == "x.emb.json"
        assert codec.read_sidecar(path) == {"model_id": "m"}

    def test_sidecar_invalid_json(self, tmp_path: Path):
        """A corrupt sidecar is a format error."""
        path = tmp_path / "x.emb"
        codec.sidecar_path(path).write_text("{not json")
        with pytest.raises(FormatError):
            codec.read_sidecar(path)
        codec.sidecar_path(path).write_text("[1, 2]")
        with pytest.raises(FormatError):
            codec.read_sidecar(path)
