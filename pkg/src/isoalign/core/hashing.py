""" Utility for fingerprinting input artifacts in reports. """

import hashlib
from pathlib import Path

import numpy as np

CHUNK_SIZE = 65536  # 64KB


def calculate_sha256(file_path: Path) -> str:
    sha256 = hashlib.sha256()
    with open(file_path, "rb") as f:
        while True:
            data = f.read(CHUNK_SIZE)
            if not data:
                break
            sha256.update(data)
    return sha256.hexdigest()


def calculate_sha256_array(arr: np.ndarray) -> str:
    # shape and dtype are part of the digest so reshaped copies differ
    sha256 = hashlib.sha256()
    contiguous = np.ascontiguousarray(arr)
    sha256.update(str(contiguous.shape).encode("ascii"))
    sha256.update(contiguous.dtype.str.encode("ascii"))
    sha256.update(contiguous.tobytes())
    return sha256.hexdigest()


def fingerprint_inputs(paths: dict) -> dict:
    """Map a {role: path} dict to {role: {"path", "sha256"}} skipping unset roles."""
    out = {}
    for role, path in sorted(paths.items()):
        if path is None:
            continue
        p = Path(path)
        out[role] = {"path": p.name, "sha256": calculate_sha256(p)}
    return out
