"""Binary container formats for channel datasets, checkpoints and matrices.

Both containers share the same conventions: fixed magic bytes, a one-byte
format version, a little-endian struct header, a JSON metadata echo, and a
little-endian float64 row-major payload.  Floats round-trip bit-exactly.
"""

from __future__ import annotations

import json
import os
import struct
import tempfile

import numpy as np

DATASET_MAGIC = b"SMDS"
MATRIX_MAGIC = b"SMMX"
FORMAT_VERSION = 1

_DATASET_HEADER = struct.Struct("<IIQQQQ")  # n_dim, sparsity, n_samples, n_train, n_val, n_test
_MATRIX_HEADER = struct.Struct("<B d II")  # normalized, alpha, m, k


class CorruptedFileError(Exception):
    """Magic bytes, header fields, or payload length do not match the format."""


class UnsupportedVersionError(Exception):
    """File was written with a format version this build cannot read."""


def write_atomic(path: str | os.PathLike, payload: bytes) -> None:
    """Write bytes to `path` via a temp file + rename so readers never see
    a partially written file."""
    path = os.fspath(path)
    directory = os.path.dirname(path) or "."
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp_", suffix=".part")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _read_exact(fh, n: int, what: str) -> bytes:
    buf = fh.read(n)
    if len(buf) != n:
        raise CorruptedFileError(f"truncated file while reading {what}")
    return buf


def _check_magic_version(fh, magic: bytes) -> None:
    got = _read_exact(fh, len(magic), "magic bytes")
    if got != magic:
        raise CorruptedFileError(f"bad magic bytes {got!r}, expected {magic!r}")
    (version,) = struct.unpack("<B", _read_exact(fh, 1, "format version"))
    if version != FORMAT_VERSION:
        raise UnsupportedVersionError(
            f"format version {version} not supported (expected {FORMAT_VERSION})"
        )


def _meta_bytes(meta: dict) -> bytes:
    blob = json.dumps(meta, sort_keys=True).encode("utf-8")
    return struct.pack("<I", len(blob)) + blob


def _read_meta(fh) -> dict:
    (length,) = struct.unpack("<I", _read_exact(fh, 4, "metadata length"))
    blob = _read_exact(fh, length, "metadata")
    try:
        return json.loads(blob.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CorruptedFileError("metadata block is not valid JSON") from exc


def _payload_bytes(array: np.ndarray) -> bytes:
    return np.ascontiguousarray(array, dtype="<f8").tobytes()


def _read_payload(fh, shape: tuple[int, ...]) -> np.ndarray:
    count = int(np.prod(shape)) if shape else 1
    raw = _read_exact(fh, 8 * count, "float payload")
    flat = np.frombuffer(raw, dtype="<f8")
    return flat.reshape(shape).astype(np.float64)


def save_dataset_file(
    path: str | os.PathLike,
    samples: np.ndarray,
    sparsity: int,
    counts: tuple[int, int, int],
    meta: dict,
) -> None:
    """Serialize a (n_samples, n_dim, 2) float array plus split counts."""
    samples = np.asarray(samples, dtype=np.float64)
    if samples.ndim != 3 or samples.shape[2] != 2:
        raise ValueError(f"samples must have shape (n, dim, 2), got {samples.shape}")
    n_samples, n_dim, _ = samples.shape
    n_train, n_val, n_test = counts
    if n_train + n_val + n_test != n_samples:
        raise ValueError("split counts do not sum to the number of samples")
    header = _DATASET_HEADER.pack(n_dim, sparsity, n_samples, n_train, n_val, n_test)
    blob = (
        DATASET_MAGIC
        + struct.pack("<B", FORMAT_VERSION)
        + header
        + _meta_bytes(meta)
        + _payload_bytes(samples)
    )
    write_atomic(path, blob)


def load_dataset_file(path: str | os.PathLike):
    """Inverse of :func:`save_dataset_file`.

    Returns (samples, sparsity, (n_train, n_val, n_test), meta).
    """
    with open(path, "rb") as fh:
        _check_magic_version(fh, DATASET_MAGIC)
        raw = _read_exact(fh, _DATASET_HEADER.size, "dataset header")
        n_dim, sparsity, n_samples, n_train, n_val, n_test = _DATASET_HEADER.unpack(raw)
        if n_train + n_val + n_test != n_samples:
            raise CorruptedFileError("split counts do not sum to sample count")
        meta = _read_meta(fh)
        samples = _read_payload(fh, (n_samples, n_dim, 2))
        if fh.read(1):
            raise CorruptedFileError("trailing bytes after payload")
    return samples, sparsity, (n_train, n_val, n_test), meta


def save_matrix_file(
    path: str | os.PathLike,
    data: np.ndarray,
    kind: str,
    normalized: bool,
    alpha: float,
    meta: dict,
) -> None:
    """Serialize an (m, k) real matrix with its provenance tag.

    Used both for trained checkpoints (alpha meaningful, unnormalized phi)
    and exported/baseline measurement matrices (alpha = NaN).
    """
    data = np.asarray(data, dtype=np.float64)
    if data.ndim != 2:
        raise ValueError(f"matrix payload must be 2-D, got shape {data.shape}")
    kind_blob = kind.encode("utf-8")
    m, k = data.shape
    blob = (
        MATRIX_MAGIC
        + struct.pack("<B", FORMAT_VERSION)
        + struct.pack("<H", len(kind_blob))
        + kind_blob
        + _MATRIX_HEADER.pack(int(normalized), float(alpha), m, k)
        + _meta_bytes(meta)
        + _payload_bytes(data)
    )
    write_atomic(path, blob)


def load_matrix_file(path: str | os.PathLike):
    """Inverse of :func:`save_matrix_file`.

    Returns (data, kind, normalized, alpha, meta).
    """
    with open(path, "rb") as fh:
        _check_magic_version(fh, MATRIX_MAGIC)
        (kind_len,) = struct.unpack("<H", _read_exact(fh, 2, "kind length"))
        kind = _read_exact(fh, kind_len, "kind tag").decode("utf-8")
        raw = _read_exact(fh, _MATRIX_HEADER.size, "matrix header")
        normalized, alpha, m, k = _MATRIX_HEADER.unpack(raw)
        meta = _read_meta(fh)
        data = _read_payload(fh, (m, k))
        if fh.read(1):
            raise CorruptedFileError("trailing bytes after payload")
    return data, kind, bool(normalized), float(alpha), meta
