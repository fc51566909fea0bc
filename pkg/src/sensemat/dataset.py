"""Sparse beamspace channel dataset generation and persistence.

A spatial multipath channel over an N-element uniform linear array is

    h_s = sqrt(N / N_p) * sum_l beta_l * a(phi_l),
    a(phi) = (1 / sqrt(N)) * [1, e^{-j 2 pi phi}, ..., e^{-j 2 pi phi (N-1)}]^T,

with one line-of-sight path whose gain variance exceeds each non-LOS gain
variance by the Ricean K-factor.  Transforming with the unitary DFT-steering
basis U gives the beamspace channel h_b = U h_s, which is compressible; we
keep the S largest-magnitude complex entries, stack real and imaginary parts
column-wise into an (N, 2) array and scale it to unit Frobenius norm.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, asdict

import numpy as np

from . import fileio

__all__ = [
    "ChannelGenConfig",
    "SplitRanges",
    "Dataset",
    "steering_vector",
    "gen_spatial_channel",
    "dft_basis",
    "to_beamspace",
    "sparsify_top_s",
    "real_stack_normalize",
    "build_dataset",
    "save_dataset",
    "load_dataset",
    "import_text_dataset",
]


@dataclass(frozen=True)
class ChannelGenConfig:
    """Parameters of the synthetic channel generator."""

    n_antennas: int
    n_paths: int
    rice_k_db: float
    n_channels: int
    sparsity: int
    split_ratios: tuple[float, float, float] = (0.96, 0.02, 0.02)
    seed: int = 0

    def __post_init__(self):
        if self.n_antennas < 1:
            raise ValueError("n_antennas must be >= 1")
        if not 1 <= self.n_paths <= self.n_antennas:
            raise ValueError("n_paths must be in [1, n_antennas]")
        if not 1 <= self.sparsity <= self.n_antennas:
            raise ValueError("sparsity must be in [1, n_antennas]")
        if self.n_channels < 1:
            raise ValueError("n_channels must be >= 1")
        ratios = tuple(float(r) for r in self.split_ratios)
        if len(ratios) != 3 or any(not 0.0 <= r <= 1.0 for r in ratios):
            raise ValueError("split_ratios must be three fractions in [0, 1]")
        if abs(sum(ratios) - 1.0) > 1e-12:
            raise ValueError("split_ratios must sum to 1 within 1e-12")
        object.__setattr__(self, "split_ratios", ratios)


@dataclass(frozen=True)
class SplitRanges:
    train: range
    val: range
    test: range


@dataclass(frozen=True)
class Dataset:
    """Immutable container of real-form channel samples.

    samples has shape (n_channels, N, 2); column 0 holds Re(h_b) and
    column 1 holds Im(h_b).  Split ranges are disjoint, contiguous and
    cover all sample indices.
    """

    samples: np.ndarray
    split: SplitRanges
    meta: ChannelGenConfig

    def __post_init__(self):
        n = self.samples.shape[0]
        s = self.split
        covered = len(s.train) + len(s.val) + len(s.test)
        if covered != n or s.train.start != 0 or s.val.start != s.train.stop \
                or s.test.start != s.val.stop or s.test.stop != n:
            raise ValueError("split ranges must be contiguous and cover all samples")
        self.samples.setflags(write=False)

    def vectors(self, part: str) -> np.ndarray:
        """Return the real/imag columns of one split as a (2*n, N) array.

        Each channel sample contributes two independent training vectors,
        its real column followed by its imaginary column.
        """
        idx = getattr(self.split, part)
        block = self.samples[idx.start:idx.stop]  # (n, N, 2)
        n = block.shape[0]
        return block.transpose(0, 2, 1).reshape(2 * n, -1)


def steering_vector(phi: float, n: int) -> np.ndarray:
    """Array response a(phi) of an n-element half-wavelength ULA."""
    k = np.arange(n)
    return np.exp(-2j * np.pi * phi * k) / np.sqrt(n)


def path_gains(n_paths: int, rice_k_db: float, rng: np.random.Generator) -> np.ndarray:
    """Complex Gaussian path gains; the line-of-sight gain (index 0) has
    second moment 10^(rice_k_db/10) relative to each non-LOS gain."""
    scale = np.ones(n_paths)
    scale[0] = np.sqrt(10.0 ** (rice_k_db / 10.0))
    gains = (rng.standard_normal(n_paths) + 1j * rng.standard_normal(n_paths))
    return gains * (scale / np.sqrt(2.0))


def gen_spatial_channel(cfg: ChannelGenConfig, rng: np.random.Generator) -> np.ndarray:
    """Draw one spatial-domain multipath channel realization.

    Spatial directions are uniform on (-1/2, 1/2), i.e. physical angles
    uniform on [-pi/2, pi/2] for half-wavelength antenna spacing.
    """
    n, n_p = cfg.n_antennas, cfg.n_paths
    gains = path_gains(n_p, cfg.rice_k_db, rng)
    directions = rng.uniform(-0.5, 0.5, size=n_p)
    h = np.zeros(n, dtype=complex)
    for beta, phi in zip(gains, directions):
        h += beta * steering_vector(phi, n)
    return np.sqrt(n / n_p) * h


def dft_basis(n: int) -> np.ndarray:
    """Unitary beamspace basis: conjugated steering vectors at the n grid
    directions phi_m = (m - (n+1)/2) / n, m = 1..n."""
    if n < 1:
        raise ValueError("basis size must be >= 1")
    m = np.arange(1, n + 1)
    phi = (m - (n + 1) / 2.0) / n
    k = np.arange(n)
    return np.exp(2j * np.pi * np.outer(phi, k)) / np.sqrt(n)


def to_beamspace(h_s: np.ndarray, basis: np.ndarray) -> np.ndarray:
    """Angular-domain representation U @ h_s."""
    h_s = np.asarray(h_s)
    if basis.shape[1] != h_s.shape[0]:
        raise ValueError(
            f"basis is {basis.shape} but channel has length {h_s.shape[0]}"
        )
    return basis @ h_s


def sparsify_top_s(h_b: np.ndarray, s: int) -> np.ndarray:
    """Keep the s largest-magnitude entries, zero the rest.

    Ties are broken in favor of the lower index.
    """
    h_b = np.asarray(h_b)
    if not 1 <= s <= h_b.shape[0]:
        raise ValueError("s must be in [1, len(h_b)]")
    order = np.argsort(-np.abs(h_b), kind="stable")
    out = np.zeros_like(h_b)
    keep = order[:s]
    out[keep] = h_b[keep]
    return out


def real_stack_normalize(h_b: np.ndarray) -> np.ndarray:
    """Stack [Re(h_b), Im(h_b)] column-wise and scale to unit Frobenius norm."""
    h_b = np.asarray(h_b, dtype=complex)
    stacked = np.stack([h_b.real, h_b.imag], axis=1)
    norm = np.linalg.norm(stacked)
    if norm == 0.0:
        raise ValueError("cannot normalize an all-zero channel")
    return stacked / norm


def _sample_rng(seed: int, index: int) -> np.random.Generator:
    # Per-sample substream keyed on (seed, index): results do not depend on
    # how samples are distributed over workers.
    return np.random.default_rng(np.random.SeedSequence((seed, index)))


def split_counts(n: int, ratios: tuple[float, float, float]) -> tuple[int, int, int]:
    n_train = int(round(ratios[0] * n))
    n_val = int(round(ratios[1] * n))
    n_train = min(n_train, n)
    n_val = min(n_val, n - n_train)
    return n_train, n_val, n - n_train - n_val


def _split_ranges(n: int, ratios) -> SplitRanges:
    n_train, n_val, n_test = split_counts(n, ratios)
    return SplitRanges(
        train=range(0, n_train),
        val=range(n_train, n_train + n_val),
        test=range(n_train + n_val, n),
    )


def build_dataset(cfg: ChannelGenConfig, threads: int = 1) -> Dataset:
    """Generate, transform and normalize cfg.n_channels channel samples."""
    basis = dft_basis(cfg.n_antennas)

    def one(i: int) -> np.ndarray:
        h_s = gen_spatial_channel(cfg, _sample_rng(cfg.seed, i))
        h_b = sparsify_top_s(to_beamspace(h_s, basis), cfg.sparsity)
        return real_stack_normalize(h_b)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            rows = list(pool.map(one, range(cfg.n_channels)))
    else:
        rows = [one(i) for i in range(cfg.n_channels)]
    samples = np.stack(rows)
    return Dataset(samples, _split_ranges(cfg.n_channels, cfg.split_ratios), cfg)


def save_dataset(d: Dataset, path) -> None:
    counts = (len(d.split.train), len(d.split.val), len(d.split.test))
    fileio.save_dataset_file(
        path, d.samples, d.meta.sparsity, counts, asdict(d.meta)
    )


def load_dataset(path) -> Dataset:
    samples, _, counts, meta = fileio.load_dataset_file(path)
    meta["split_ratios"] = tuple(meta["split_ratios"])
    cfg = ChannelGenConfig(**meta)
    n_train, n_val, n_test = counts
    split = SplitRanges(
        train=range(0, n_train),
        val=range(n_train, n_train + n_val),
        test=range(n_train + n_val, n_train + n_val + n_test),
    )
    return Dataset(samples, split, cfg)


def import_text_dataset(
    path,
    split_ratios: tuple[float, float, float] = (0.96, 0.02, 0.02),
    sparsity: int | None = None,
    seed: int = 0,
) -> Dataset:
    """Read an externally generated dataset from plain text.

    One sample per line: 2N space-separated decimals, the N real parts
    followed by the N imaginary parts.  Samples are re-normalized to unit
    Frobenius norm.  The returned meta is a best-effort echo (the true
    generator parameters of imported data are unknown).
    """
    raw = np.loadtxt(path, dtype=np.float64, ndmin=2)
    if raw.shape[1] % 2 != 0:
        raise ValueError("each line must hold 2N values (Re block then Im block)")
    n = raw.shape[1] // 2
    samples = np.stack([raw[:, :n], raw[:, n:]], axis=2)
    norms = np.linalg.norm(samples, axis=(1, 2), keepdims=True)
    if np.any(norms == 0.0):
        raise ValueError("imported dataset contains an all-zero sample")
    samples = samples / norms
    cfg = ChannelGenConfig(
        n_antennas=n,
        n_paths=1,
        rice_k_db=0.0,
        n_channels=samples.shape[0],
        sparsity=n if sparsity is None else sparsity,
        split_ratios=split_ratios,
        seed=seed,
    )
    return Dataset(samples, _split_ranges(samples.shape[0], cfg.split_ratios), cfg)
