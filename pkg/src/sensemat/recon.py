"""Classical sparse reconstruction solvers used to evaluate matrices.

Three solver families operate on real measurements y = phi @ x:

* ``bp_subgradient`` — projected subgradient descent on
  min ||x||_1 s.t. phi x = y, with diminishing steps alpha0/t and the
  closed-form affine projection Proj(z) = z + pinv(phi) (y - phi z).
* ``bp_exact`` / ``bp_exact_nonneg`` — the same l1 problem solved to
  optimality through its nonnegative split form
  min 1'x~ s.t. [phi, -phi] x~ = y, x~ >= 0 (or a general doubly wide
  matrix), via an alternating-direction operator-splitting scheme.
* ``gpsr`` — gradient projection for the l1-regularized least squares
  objective 0.5 ||y - phi x||^2 + tau ||x||_1 on the split nonnegative
  quadratic program, with Armijo backtracking.

All pseudo-inverse work happens through a Cholesky factorization of the
M x M matrix phi @ phi.T; nothing larger than M x M is ever inverted.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from . import fileio

__all__ = [
    "MATRIX_KINDS",
    "MeasurementMatrix",
    "SolverOptions",
    "ReconResult",
    "RankDeficiencyError",
    "pseudo_inverse_apply",
    "project_affine",
    "bp_subgradient",
    "bp_exact",
    "bp_exact_nonneg",
    "bp_exact_batch",
    "bp_exact_nonneg_batch",
    "gpsr",
    "gpsr_nonneg",
    "compress",
    "reconstruct_channel",
    "save_matrix",
    "load_matrix",
]

MATRIX_KINDS = (
    "learned_sae",
    "learned_gae",
    "learned_saec",
    "learned_gaec",
    "gaussian",
    "bernoulli",
    "partial_fourier",
    "selection",
)

CONDITION_LIMIT = 1e12  # on phi @ phi.T; beyond this we treat phi as rank deficient

# GPSR constants (canonical defaults of the gradient-projection method)
GPSR_SUFFICIENT_DECREASE = 1e-4
GPSR_STEP_SHRINK = 0.5
GPSR_STEP_MIN = 1e-30
GPSR_STEP_MAX = 1e30
GPSR_MAX_BACKTRACKS = 60

SUBGRAD_WINDOW = 50  # floor of the l1-improvement check window


class RankDeficiencyError(ValueError):
    """phi @ phi.T is singular or has condition number above 1e12."""


@dataclass
class MeasurementMatrix:
    """Real M x K measurement matrix with provenance.

    K is N for plain matrices and 2N for matrices consuming the
    nonnegative split of a channel vector (``split_input``; implied for the
    cat-learned kinds).  Compressive use has M < K; M = K is allowed for
    square sanity configurations.
    """

    data: np.ndarray
    kind: str
    normalized: bool = False
    split_input: bool = False

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        if self.data.ndim != 2:
            raise ValueError("matrix must be 2-D")
        m, k = self.data.shape
        if m > k:
            raise ValueError(f"measurement matrix must have M <= K, got {m}x{k}")
        if self.kind not in MATRIX_KINDS:
            raise ValueError(f"unknown matrix kind {self.kind!r}")
        if self.kind in ("learned_saec", "learned_gaec"):
            self.split_input = True
        if self.split_input and k % 2 != 0:
            raise ValueError("split-input matrix needs an even column count")
        if self.normalized:
            norms = np.linalg.norm(self.data, axis=0)
            if np.any(np.abs(norms - 1.0) > 1e-12):
                raise ValueError("normalized matrix must have unit l2 columns")

    @property
    def m(self) -> int:
        return self.data.shape[0]

    @property
    def k(self) -> int:
        return self.data.shape[1]

    @property
    def n_channel(self) -> int:
        """Length of the channel vectors this matrix measures."""
        return self.k // 2 if self.split_input else self.k


@dataclass
class SolverOptions:
    tol: float = 1e-10
    max_iters: int = 50_000
    tau: float | None = None  # None: gpsr uses 0.01 * ||phi.T y||_inf
    alpha0: float = 1.0

    def __post_init__(self):
        if self.tol <= 0:
            raise ValueError("tol must be positive")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if self.tau is not None and self.tau < 0:
            raise ValueError("tau must be nonnegative")
        if self.alpha0 <= 0:
            raise ValueError("alpha0 must be positive")


@dataclass
class ReconResult:
    x_hat: np.ndarray
    iterations: int
    converged: bool
    objective: float
    objective_trace: list[float] | None = None


class _RowSpaceOps:
    """Pseudo-inverse and affine projection backed by a Cholesky
    factorization of the M x M matrix phi @ phi.T.

    The pseudo-inverse phi.T (phi phi.T)^-1 is materialized once as an
    N x M array through triangular solves of the factorization (nothing
    larger than M x M is ever inverted), making repeated applications
    inside solver loops a single mat-vec.
    """

    def __init__(self, phi: np.ndarray):
        phi = np.asarray(phi, dtype=np.float64)
        if phi.ndim != 2:
            raise ValueError("phi must be 2-D")
        gram = phi @ phi.T
        eigs = np.linalg.eigvalsh(gram)
        if eigs[0] <= 0.0 or eigs[-1] / eigs[0] > CONDITION_LIMIT:
            raise RankDeficiencyError(
                "phi is rank deficient (cond(phi phi.T) > 1e12)"
            )
        self.phi = phi
        self._pinv = cho_solve(cho_factor(gram), phi).T  # (K, M)

    def pinv_apply(self, v: np.ndarray) -> np.ndarray:
        """phi.T (phi phi.T)^-1 v."""
        return self._pinv @ v

    def project(self, y: np.ndarray, z: np.ndarray) -> np.ndarray:
        """Projection of z onto the affine set {x : phi x = y}."""
        return z + self._pinv @ (y - self.phi @ z)


def pseudo_inverse_apply(phi: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Apply the Moore-Penrose pseudo-inverse of a full-row-rank phi."""
    return _RowSpaceOps(phi).pinv_apply(np.asarray(v, dtype=np.float64))


def project_affine(phi: np.ndarray, y: np.ndarray, z: np.ndarray) -> np.ndarray:
    """Closed-form projection z + pinv(phi) (y - phi z)."""
    return _RowSpaceOps(phi).project(
        np.asarray(y, dtype=np.float64), np.asarray(z, dtype=np.float64)
    )


def bp_subgradient(
    phi: np.ndarray, y: np.ndarray, opts: SolverOptions | None = None
) -> ReconResult:
    """Projected subgradient descent for min ||x||_1 s.t. phi x = y.

    Starts from the minimum-norm feasible point pinv(phi) y and iterates

        x_{t+1} = x_t + pinv(phi)(y - phi x_t)
                  - (alpha0/t) (I - pinv(phi) phi) sign(x_t).

    Every iterate is affine-feasible, so the feasible iterate with the
    smallest l1 value is reported (diminishing steps make the last iterate
    noisy).  Stops when the best l1 value improves by less than tol over an
    improvement window of max(50, it) iterations; the window grows with the
    iteration count because under 1/t steps the gaps between new records
    grow proportionally to t.
    """
    opts = opts or SolverOptions()
    ops = _RowSpaceOps(phi)
    y = np.asarray(y, dtype=np.float64)
    x = ops.pinv_apply(y)
    best_x = x
    best_l1 = float(np.abs(x).sum())
    window_best = best_l1
    next_check = SUBGRAD_WINDOW
    converged = False
    it = 0
    for it in range(1, opts.max_iters + 1):
        g = np.sign(x)
        step = opts.alpha0 / it
        z = x - step * g
        x = ops.project(y, z)
        l1 = float(np.abs(x).sum())
        if l1 < best_l1:
            best_l1 = l1
            best_x = x
        if it >= next_check:
            if window_best - best_l1 < opts.tol:
                converged = True
                break
            window_best = best_l1
            next_check = it + max(SUBGRAD_WINDOW, it)
    return ReconResult(
        x_hat=best_x, iterations=it, converged=converged, objective=best_l1
    )


def _nonneg_l1_admm(a: np.ndarray, y: np.ndarray, opts: SolverOptions):
    """min 1'z s.t. a z = y, z >= 0 by alternating-direction splitting.

    Split the equality-constrained linear objective from the nonnegativity
    indicator; the first block has a closed-form update through the affine
    projection, the second is a clamp.  Penalty parameter fixed at 1.
    """
    x, iters, conv = _nonneg_l1_admm_columns(a, np.asarray(y, float)[:, None], opts)
    return x[:, 0], int(iters[0]), bool(conv[0])


def _nonneg_l1_admm_columns(a: np.ndarray, ys: np.ndarray, opts: SolverOptions):
    """Batched form of :func:`_nonneg_l1_admm` over the columns of ys.

    Every update is columnwise independent, so each column follows the
    same iteration it would take on its own; converged columns are frozen
    and dropped from the working set.  Returns (solutions (K, B),
    iterations (B,), converged (B,)).
    """
    ops = _RowSpaceOps(a)
    ys = np.asarray(ys, dtype=np.float64)
    k, b = a.shape[1], ys.shape[1]
    rho = 1.0
    sqrt_k = np.sqrt(k)
    out = np.empty((k, b))
    iters = np.full(b, opts.max_iters, dtype=int)
    conv = np.zeros(b, dtype=bool)
    active = np.arange(b)
    y_act = ys
    x = ops.pinv_apply(y_act)
    z = np.maximum(x, 0.0)
    u = np.zeros_like(x)
    for it in range(1, opts.max_iters + 1):
        x = ops.project(y_act, z - u - 1.0 / rho)
        z_old = z
        z = np.maximum(x + u, 0.0)
        u = u + x - z
        r_norm = np.linalg.norm(x - z, axis=0)
        s_norm = rho * np.linalg.norm(z - z_old, axis=0)
        eps_pri = sqrt_k * opts.tol + opts.tol * np.maximum(
            np.linalg.norm(x, axis=0), np.linalg.norm(z, axis=0)
        )
        eps_dual = sqrt_k * opts.tol + opts.tol * rho * np.linalg.norm(u, axis=0)
        done = (r_norm <= eps_pri) & (s_norm <= eps_dual)
        if done.any():
            out[:, active[done]] = x[:, done]
            iters[active[done]] = it
            conv[active[done]] = True
            keep = ~done
            if not keep.any():
                return out, iters, conv
            active = active[keep]
            x, z, u, y_act = x[:, keep], z[:, keep], u[:, keep], y_act[:, keep]
    out[:, active] = x
    return out, iters, conv


def bp_exact_batch(phi: np.ndarray, ys: np.ndarray, opts: SolverOptions | None = None):
    """:func:`bp_exact` over the columns of a measurement matrix ys (M, B).

    Returns (x_hat (N, B), iterations (B,), converged (B,)).
    """
    opts = opts or SolverOptions()
    phi = np.asarray(phi, dtype=np.float64)
    a = np.hstack([phi, -phi])
    z, iters, conv = _nonneg_l1_admm_columns(a, ys, opts)
    n = phi.shape[1]
    return z[:n] - z[n:], iters, conv


def bp_exact_nonneg_batch(
    phi_tilde: np.ndarray, ys: np.ndarray, opts: SolverOptions | None = None
):
    """:func:`bp_exact_nonneg` over the columns of ys (M, B)."""
    opts = opts or SolverOptions()
    phi_tilde = np.asarray(phi_tilde, dtype=np.float64)
    if phi_tilde.shape[1] % 2 != 0:
        raise ValueError("split-form matrix must have an even column count")
    z, iters, conv = _nonneg_l1_admm_columns(phi_tilde, ys, opts)
    n = phi_tilde.shape[1] // 2
    return z[:n] - z[n:], iters, conv


def bp_exact(
    phi: np.ndarray, y: np.ndarray, opts: SolverOptions | None = None
) -> ReconResult:
    """Exact basis pursuit via the split nonnegative form with [phi, -phi]."""
    opts = opts or SolverOptions()
    phi = np.asarray(phi, dtype=np.float64)
    a = np.hstack([phi, -phi])
    z, it, converged = _nonneg_l1_admm(a, y, opts)
    n = phi.shape[1]
    x_hat = z[:n] - z[n:]
    return ReconResult(
        x_hat=x_hat,
        iterations=it,
        converged=converged,
        objective=float(np.abs(x_hat).sum()),
    )


def bp_exact_nonneg(
    phi_tilde: np.ndarray, y: np.ndarray, opts: SolverOptions | None = None
) -> ReconResult:
    """min ||x~||_1 s.t. phi~ x~ = y, x~ >= 0 for a doubly wide matrix.

    The recovered channel vector is the slice difference
    x_hat = x~[:N] - x~[N:].
    """
    opts = opts or SolverOptions()
    phi_tilde = np.asarray(phi_tilde, dtype=np.float64)
    if phi_tilde.shape[1] % 2 != 0:
        raise ValueError("split-form matrix must have an even column count")
    z, it, converged = _nonneg_l1_admm(phi_tilde, y, opts)
    n = phi_tilde.shape[1] // 2
    return ReconResult(
        x_hat=z[:n] - z[n:],
        iterations=it,
        converged=converged,
        objective=float(z.sum()),
    )


def _gpsr_stage(
    b: np.ndarray,
    y: np.ndarray,
    tau: float,
    tol: float,
    max_iters: int,
    z0: np.ndarray,
):
    """Gradient projection for min 0.5||y - B z||^2 + tau 1'z s.t. z >= 0.

    Each iteration takes a Barzilai-Borwein trial step (seeded on the first
    iteration by the exact minimizer along the projected gradient, clipped
    to [1e-30, 1e30]) and safeguards it with Armijo backtracking, so the
    objective sequence is monotone nonincreasing.
    """
    z = z0
    resid = y - b @ z
    obj = 0.5 * float(resid @ resid) + tau * float(z.sum())
    grad = -(b.T @ resid) + tau
    trace = [obj]
    converged = False
    bb_step = None
    it = 0
    for it in range(1, max_iters + 1):
        g_bar = np.where((z > 0.0) | (grad < 0.0), grad, 0.0)
        gg = float(g_bar @ g_bar)
        if gg <= 0.0:
            converged = True  # projected gradient vanishes: KKT point
            break
        if bb_step is None:
            bg = b @ g_bar
            denom = float(bg @ bg)
            if denom <= 0.0:
                converged = True
                break
            step = gg / denom
        else:
            step = bb_step
        step = float(np.clip(step, GPSR_STEP_MIN, GPSR_STEP_MAX))
        accepted = False
        for _ in range(GPSR_MAX_BACKTRACKS):
            z_new = np.maximum(z - step * grad, 0.0)
            resid_new = y - b @ z_new
            obj_new = 0.5 * float(resid_new @ resid_new) + tau * float(z_new.sum())
            if obj_new <= obj - GPSR_SUFFICIENT_DECREASE * float(grad @ (z - z_new)):
                accepted = True
                break
            step *= GPSR_STEP_SHRINK
        if not accepted or obj_new > obj:
            break  # cannot make progress at floating-point resolution
        grad_new = -(b.T @ resid_new) + tau
        dz = z_new - z
        dg = grad_new - grad
        curv = float(dz @ dg)
        bb_step = float(dz @ dz) / curv if curv > 0.0 else None
        rel_change = (obj - obj_new) / max(obj, np.finfo(float).tiny)
        z, resid, obj, grad = z_new, resid_new, obj_new, grad_new
        trace.append(obj)
        if rel_change < tol:
            converged = True
            break
    return z, it, converged, trace


GPSR_CONTINUATION_FACTOR = 0.2
GPSR_CONTINUATION_TOL = 1e-8  # stage tolerance before the target tau
GPSR_MAX_STAGES = 24


def _gpsr_core(b: np.ndarray, y: np.ndarray, tau: float, opts: SolverOptions):
    """GPSR with warm-started continuation.

    Small regularization weights make plain gradient projection crawl, so
    when tau sits well below the trivial-solution threshold ||B'y||_inf the
    problem is solved through a geometrically decreasing tau sequence,
    warm-starting every stage from the previous solution.  The returned
    objective trace covers only the final stage (the stated objective), and
    is monotone nonincreasing.
    """
    y = np.asarray(y, dtype=np.float64)
    z = np.maximum(b.T @ y, 0.0)
    tau_max = float(np.abs(b.T @ y).max())
    total_it = 0
    stage_tau = GPSR_CONTINUATION_FACTOR * tau_max
    stages = 0
    while stage_tau > tau and stages < GPSR_MAX_STAGES and total_it < opts.max_iters:
        z, it, _, _ = _gpsr_stage(
            b, y, stage_tau, max(opts.tol, GPSR_CONTINUATION_TOL),
            opts.max_iters - total_it, z,
        )
        total_it += it
        stage_tau *= GPSR_CONTINUATION_FACTOR
        stages += 1
    z, it, converged, trace = _gpsr_stage(
        b, y, tau, opts.tol, max(opts.max_iters - total_it, 1), z
    )
    return z, total_it + it, converged, trace


def _default_tau(phi: np.ndarray, y: np.ndarray) -> float:
    return 0.01 * float(np.abs(phi.T @ y).max())


def gpsr(
    phi: np.ndarray, y: np.ndarray, opts: SolverOptions | None = None
) -> ReconResult:
    """l1-regularized least squares 0.5||y - phi x||^2 + tau||x||_1.

    tau defaults to 0.01 ||phi.T y||_inf when not set in the options.
    """
    opts = opts or SolverOptions()
    phi = np.asarray(phi, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    tau = opts.tau if opts.tau is not None else _default_tau(phi, y)
    b = np.hstack([phi, -phi])
    z, it, converged, trace = _gpsr_core(b, y, tau, opts)
    n = phi.shape[1]
    x_hat = z[:n] - z[n:]
    resid = y - phi @ x_hat
    objective = 0.5 * float(resid @ resid) + tau * float(np.abs(x_hat).sum())
    return ReconResult(
        x_hat=x_hat,
        iterations=it,
        converged=converged,
        objective=objective,
        objective_trace=trace,
    )


def gpsr_nonneg(
    phi_tilde: np.ndarray, y: np.ndarray, opts: SolverOptions | None = None
) -> ReconResult:
    """GPSR over a nonnegative split vector measured by a doubly wide matrix."""
    opts = opts or SolverOptions()
    phi_tilde = np.asarray(phi_tilde, dtype=np.float64)
    if phi_tilde.shape[1] % 2 != 0:
        raise ValueError("split-form matrix must have an even column count")
    y = np.asarray(y, dtype=np.float64)
    tau = opts.tau if opts.tau is not None else _default_tau(phi_tilde, y)
    z, it, converged, trace = _gpsr_core(phi_tilde, y, tau, opts)
    n = phi_tilde.shape[1] // 2
    return ReconResult(
        x_hat=z[:n] - z[n:],
        iterations=it,
        converged=converged,
        objective=trace[-1],
        objective_trace=trace,
    )


def compress(matrix: MeasurementMatrix, sample: np.ndarray) -> np.ndarray:
    """Measure a real-form (N, 2) channel sample column by column.

    Split-input matrices (K = 2N) consume the nonnegative split of each
    column.
    """
    sample = np.asarray(sample, dtype=np.float64)
    if sample.ndim != 2 or sample.shape[1] != 2:
        raise ValueError("sample must have shape (N, 2)")
    if sample.shape[0] != matrix.n_channel:
        raise ValueError(
            f"sample length {sample.shape[0]} does not match matrix ({matrix.m}x{matrix.k})"
        )
    if matrix.split_input:
        cols = np.concatenate(
            [np.maximum(sample, 0.0), np.maximum(-sample, 0.0)], axis=0
        )
        return matrix.data @ cols
    return matrix.data @ sample


_SOLVERS = ("bp_exact", "bp_subgradient", "gpsr")


def reconstruct_channel(
    matrix: MeasurementMatrix,
    measurements: np.ndarray,
    solver: str,
    opts: SolverOptions | None = None,
) -> np.ndarray:
    """Recover an (N, 2) channel estimate from (M, 2) measurements.

    Runs the chosen solver independently on each measurement column; for
    split-input matrices the nonnegative formulation and the final
    slice-and-subtract are applied transparently.  The subgradient solver
    has no nonnegative form and rejects split-input matrices.
    """
    if solver not in _SOLVERS:
        raise ValueError(f"unknown solver {solver!r}; expected one of {_SOLVERS}")
    measurements = np.asarray(measurements, dtype=np.float64)
    if measurements.ndim != 2 or measurements.shape[1] != 2:
        raise ValueError("measurements must have shape (M, 2)")
    if measurements.shape[0] != matrix.m:
        raise ValueError("measurement rows do not match the matrix")
    if matrix.split_input:
        if solver == "bp_exact":
            solve = lambda y: bp_exact_nonneg(matrix.data, y, opts)
        elif solver == "gpsr":
            solve = lambda y: gpsr_nonneg(matrix.data, y, opts)
        else:
            raise ValueError("bp_subgradient does not support split-input matrices")
    else:
        solve = {
            "bp_exact": lambda y: bp_exact(matrix.data, y, opts),
            "bp_subgradient": lambda y: bp_subgradient(matrix.data, y, opts),
            "gpsr": lambda y: gpsr(matrix.data, y, opts),
        }[solver]
    columns = [solve(measurements[:, j]).x_hat for j in range(2)]
    return np.stack(columns, axis=1)


def save_matrix(matrix: MeasurementMatrix, path) -> None:
    fileio.save_matrix_file(
        path,
        matrix.data,
        kind=matrix.kind,
        normalized=matrix.normalized,
        alpha=float("nan"),
        meta={"split_input": matrix.split_input},
    )


def load_matrix(path) -> MeasurementMatrix:
    data, kind, normalized, _, meta = fileio.load_matrix_file(path)
    return MeasurementMatrix(
        data=data,
        kind=kind,
        normalized=normalized,
        split_input=bool(meta.get("split_input", False)),
    )
