"""Random measurement-matrix families used as comparison baselines.

All constructors are deterministic under their seed and return
column-normalized matrices.  The matrix is real valued throughout; the
"partial Fourier" family is realized as randomly chosen rows of the real
trigonometric basis (interleaved cosine/sine rows of the K-point DFT,
orthonormal by construction).
"""

from __future__ import annotations

import numpy as np

from .recon import MeasurementMatrix

__all__ = [
    "gaussian_matrix",
    "bernoulli_matrix",
    "selection_matrix",
    "partial_fourier_matrix",
    "real_trig_basis",
]


def _column_normalize(data: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(data, axis=0)
    if np.any(norms == 0.0):
        raise ValueError("zero column cannot be normalized")
    return data / norms


def gaussian_matrix(m: int, k: int, seed: int, split_input: bool = False) -> MeasurementMatrix:
    """i.i.d. zero-mean Gaussian entries, column-normalized."""
    if not m < k:
        raise ValueError("need m < k")
    rng = np.random.default_rng(seed)
    data = rng.standard_normal((m, k))
    return MeasurementMatrix(
        _column_normalize(data), kind="gaussian", normalized=True, split_input=split_input
    )


def bernoulli_matrix(m: int, k: int, seed: int, split_input: bool = False) -> MeasurementMatrix:
    """Symmetric +-1 entries; columns normalize to +-1/sqrt(m)."""
    if not m < k:
        raise ValueError("need m < k")
    rng = np.random.default_rng(seed)
    data = rng.integers(0, 2, size=(m, k)).astype(np.float64) * 2.0 - 1.0
    return MeasurementMatrix(
        _column_normalize(data), kind="bernoulli", normalized=True, split_input=split_input
    )


def selection_matrix(m: int, k: int, seed: int, split_input: bool = False) -> MeasurementMatrix:
    """Equiprobable 0/1 entries; zero columns are resampled before
    normalization, so every column holds one positive constant."""
    if not m < k:
        raise ValueError("need m < k")
    rng = np.random.default_rng(seed)
    data = rng.integers(0, 2, size=(m, k)).astype(np.float64)
    zero = ~data.any(axis=0)
    while zero.any():
        data[:, zero] = rng.integers(0, 2, size=(m, int(zero.sum()))).astype(np.float64)
        zero = ~data.any(axis=0)
    return MeasurementMatrix(
        _column_normalize(data), kind="selection", normalized=True, split_input=split_input
    )


def real_trig_basis(k: int) -> np.ndarray:
    """Orthonormal k x k basis of sampled cosines and sines.

    Row layout: the constant row, then interleaved cos/sin rows at DFT
    frequencies 1, 2, ..., and for even k the alternating-sign row.  Rows
    satisfy B B' = I to machine precision.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    n = np.arange(k)
    rows = [np.full(k, 1.0 / np.sqrt(k))]
    for j in range(1, (k - 1) // 2 + 1):
        arg = 2.0 * np.pi * j * n / k
        rows.append(np.sqrt(2.0 / k) * np.cos(arg))
        rows.append(np.sqrt(2.0 / k) * np.sin(arg))
    if k % 2 == 0 and k > 1:
        rows.append(np.where(n % 2 == 0, 1.0, -1.0) / np.sqrt(k))
    return np.stack(rows)


def partial_fourier_matrix(
    m: int, k: int, seed: int, split_input: bool = False
) -> MeasurementMatrix:
    """m distinct rows of the real trigonometric basis, column-normalized.

    Row subsets whose columns all vanish somewhere (possible only for
    special k/row combinations) are redrawn.
    """
    if not m <= k:
        raise ValueError("need m <= k")
    basis = real_trig_basis(k)
    rng = np.random.default_rng(seed)
    data = basis[np.sort(rng.choice(k, size=m, replace=False))]
    while np.any(np.linalg.norm(data, axis=0) == 0.0):
        data = basis[np.sort(rng.choice(k, size=m, replace=False))]
    return MeasurementMatrix(
        _column_normalize(data),
        kind="partial_fourier",
        normalized=True,
        split_input=split_input,
    )
