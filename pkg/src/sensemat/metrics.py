"""Evaluation metrics, measurement noise, and the evaluation driver.

Scoring is at vector granularity: each real-form channel sample
contributes its real and imaginary columns as two scored vectors,
matching the granularity the autoencoders are trained at.
"""

from __future__ import annotations

import csv
import io
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, asdict

import numpy as np

from .dataset import Dataset
from .recon import (
    MeasurementMatrix,
    SolverOptions,
    bp_exact_batch,
    bp_exact_nonneg_batch,
    compress,
    reconstruct_channel,
)

__all__ = [
    "ReportRow",
    "ExperimentReport",
    "nmse",
    "accurate_pct",
    "effective_rate",
    "add_measurement_noise",
    "evaluate",
]

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1
ACCURACY_THRESHOLD = 1e-8  # on the normalized squared l2 error
DEFAULT_RATE_R0 = 10.0
DEFAULT_RATE_BLOCK = 100


@dataclass(frozen=True)
class ReportRow:
    matrix_kind: str
    k: int  # matrix columns; disambiguates N- from 2N-column baselines
    m: int
    solver: str
    snr_db: float | None
    nmse: float
    accurate_pct: float
    effective_rate: float
    n_samples: int


@dataclass
class ExperimentReport:
    rows: list[ReportRow]
    schema_version: int = SCHEMA_VERSION

    def sorted_rows(self) -> list[ReportRow]:
        return sorted(
            self.rows,
            key=lambda r: (
                r.matrix_kind,
                r.k,
                r.m,
                r.solver,
                -np.inf if r.snr_db is None else r.snr_db,
            ),
        )

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["schema_version", self.schema_version])
        fields = list(ReportRow.__dataclass_fields__)
        writer.writerow(fields)
        for row in self.sorted_rows():
            record = asdict(row)
            record["snr_db"] = "" if row.snr_db is None else row.snr_db
            writer.writerow([record[f] for f in fields])
        return buf.getvalue()

    def to_json(self) -> str:
        nested: dict[str, list] = {}
        for row in self.sorted_rows():
            nested.setdefault(row.matrix_kind, []).append(asdict(row))
        return json.dumps(
            {"schema_version": self.schema_version, "by_matrix": nested},
            indent=2,
            sort_keys=True,
        )

    @classmethod
    def from_json(cls, text: str) -> "ExperimentReport":
        obj = json.loads(text)
        if obj.get("schema_version") != SCHEMA_VERSION:
            raise ValueError(
                f"unsupported report schema {obj.get('schema_version')!r}"
            )
        rows = [
            ReportRow(**record)
            for records in obj["by_matrix"].values()
            for record in records
        ]
        return cls(rows=rows)


def _normalized_sq_errors(truths, estimates) -> np.ndarray:
    truths = [np.asarray(t, dtype=np.float64).ravel() for t in truths]
    estimates = [np.asarray(e, dtype=np.float64).ravel() for e in estimates]
    if len(truths) == 0 or len(truths) != len(estimates):
        raise ValueError("need equally many (and at least one) truths and estimates")
    out = np.empty(len(truths))
    for i, (t, e) in enumerate(zip(truths, estimates)):
        if t.shape != e.shape:
            raise ValueError("truth/estimate shape mismatch")
        denom = float(t @ t)
        if denom == 0.0:
            raise ValueError("zero-norm truth vector")
        out[i] = float((t - e) @ (t - e)) / denom
    return out


def nmse(truths, estimates) -> float:
    """Mean over samples of ||x - x_hat||^2 / ||x||^2."""
    return float(np.mean(_normalized_sq_errors(truths, estimates)))


def accurate_pct(truths, estimates, threshold: float = ACCURACY_THRESHOLD) -> float:
    """Percentage of samples whose normalized squared error is <= threshold."""
    errors = _normalized_sq_errors(truths, estimates)
    return 100.0 * float(np.mean(errors <= threshold))


def effective_rate(r0: float, m: int, b: int, p_r: float) -> float:
    """Rate-overhead tradeoff r0 * (1 - m/b) * p_r."""
    if not 0 <= m <= b:
        raise ValueError("need 0 <= m <= b")
    if not 0.0 <= p_r <= 1.0:
        raise ValueError("p_r must be in [0, 1]")
    return r0 * (1.0 - m / b) * p_r


def add_measurement_noise(
    y: np.ndarray, snr_db: float, rng: np.random.Generator
) -> np.ndarray:
    """Additive white Gaussian noise calibrated against the measurement power.

    The per-component noise variance is ||y||_F^2 / y.size * 10^(-snr/10),
    so the realized signal-to-noise power ratio equals the requested SNR
    regardless of the matrix scaling.
    """
    y = np.asarray(y, dtype=np.float64)
    if not np.all(np.isfinite(y)):
        raise ValueError("measurements must be finite")
    sigma = np.sqrt(float(np.sum(y**2)) / y.size * 10.0 ** (-snr_db / 10.0))
    return y + rng.normal(0.0, sigma, size=y.shape)


def evaluate(
    matrix: MeasurementMatrix,
    data: Dataset,
    solver: str,
    opts: SolverOptions | None = None,
    snr_db: float | None = None,
    noise_seed: int = 0,
    n_samples: int | None = None,
    rate_r0: float = DEFAULT_RATE_R0,
    rate_block: int = DEFAULT_RATE_BLOCK,
    threads: int = 1,
) -> ReportRow:
    """Score one (matrix, solver, SNR) cell on the test split.

    Each test sample is measured (optionally with seeded noise),
    reconstructed column by column, and scored at vector granularity.  A
    solver exception counts the sample's vectors as failed reconstructions
    (estimate zero) instead of dropping them.
    """
    test = data.samples[data.split.test.start: data.split.test.stop]
    if n_samples is not None:
        test = test[:n_samples]
    if test.shape[0] == 0:
        raise ValueError("test split is empty")
    indices = range(test.shape[0])

    def measure(i: int) -> np.ndarray:
        y = compress(matrix, test[i])
        if snr_db is not None:
            rng = np.random.default_rng(np.random.SeedSequence((noise_seed, i)))
            y = add_measurement_noise(y, snr_db, rng)
        return y

    if solver == "bp_exact":
        # one batched solve over all measurement columns; columnwise
        # independent, so results match per-sample solves
        ys = np.concatenate([measure(i) for i in indices], axis=1)
        solve = bp_exact_nonneg_batch if matrix.split_input else bp_exact_batch
        x_cols, _, _ = solve(matrix.data, ys, opts)
        estimates = [x_cols[:, 2 * i: 2 * i + 2] for i in indices]
    else:
        def one(i: int) -> np.ndarray:
            y = measure(i)
            try:
                return reconstruct_channel(matrix, y, solver, opts)
            except Exception:
                log.warning(
                    "solver %s failed on test sample %d; counting as inaccurate",
                    solver, i, exc_info=True,
                )
                return np.zeros_like(test[i])

        if threads > 1:
            with ThreadPoolExecutor(max_workers=threads) as pool:
                estimates = list(pool.map(one, indices))
        else:
            estimates = [one(i) for i in indices]

    truths = [test[i][:, j] for i in indices for j in (0, 1)]
    est_vectors = [estimates[i][:, j] for i in indices for j in (0, 1)]
    err_nmse = nmse(truths, est_vectors)
    pct = accurate_pct(truths, est_vectors)
    rate = effective_rate(rate_r0, matrix.m, rate_block, pct / 100.0)
    return ReportRow(
        matrix_kind=matrix.kind,
        k=matrix.k,
        m=matrix.m,
        solver=solver,
        snr_db=snr_db,
        nmse=err_nmse,
        accurate_pct=pct,
        effective_rate=rate,
        n_samples=len(truths),
    )
