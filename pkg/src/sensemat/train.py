"""Reverse-mode gradients through the unrolled decoder and SGD training.

The loss is the mean squared reconstruction error.  Because the matrix is
tied (encoder, bootstrap, and every decoder layer all use the same phi),
its gradient accumulates one contribution per occurrence.  The two
nonsmooth primitives use the standard subgradient selections: sign(.) is
treated as piecewise constant (zero derivative almost everywhere) and
ReLU'(0) = 0.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .recon import MeasurementMatrix
from .unfold import ForwardTrace, UnfoldModel, Variant, _bn_backward, forward
from . import fileio

__all__ = [
    "TrainConfig",
    "Gradients",
    "TrainReport",
    "TrainingDivergedError",
    "mse_loss",
    "backward",
    "sgd_step",
    "init_model",
    "train",
    "export_matrix",
    "save_checkpoint",
    "load_checkpoint",
]

ALPHA_FLOOR = 1e-6


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    batch_size: int = 128
    max_epochs: int = 1000
    patience: int = 25
    alpha_init: float = 1.0
    phi_init_std: float | None = None  # default 1/sqrt(N)
    depth: int = 15
    batch_norm: str = "off"
    grad_clip: float | None = None  # global-norm clip, off by default
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate <= 0 or self.alpha_init <= 0:
            raise ValueError("learning_rate and alpha_init must be positive")
        if self.batch_size < 1 or self.max_epochs < 1 or self.depth < 1:
            raise ValueError("batch_size, max_epochs and depth must be >= 1")
        if not 1 <= self.patience <= self.max_epochs:
            raise ValueError("patience must be in [1, max_epochs]")
        if self.phi_init_std is not None and self.phi_init_std <= 0:
            raise ValueError("phi_init_std must be positive")


@dataclass
class Gradients:
    d_phi: np.ndarray
    d_alpha: float


@dataclass
class TrainReport:
    train_loss: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)
    stopped_epoch: int = 0
    best_epoch: int = 0
    best_val_loss: float = np.inf


class TrainingDivergedError(RuntimeError):
    """Loss or gradients became non-finite; carries the partial report."""

    def __init__(self, message: str, report: TrainReport):
        super().__init__(message)
        self.report = report


def mse_loss(x_batch: np.ndarray, x_hat_batch: np.ndarray) -> float:
    """Mean over samples of the squared l2 reconstruction error."""
    x_batch = np.atleast_2d(np.asarray(x_batch, dtype=np.float64))
    x_hat_batch = np.atleast_2d(np.asarray(x_hat_batch, dtype=np.float64))
    if x_batch.shape != x_hat_batch.shape:
        raise ValueError("inputs and reconstructions must have matching shapes")
    if x_batch.shape[0] == 0:
        raise ValueError("empty batch")
    return float(np.mean(np.sum((x_batch - x_hat_batch) ** 2, axis=1)))


def backward(model: UnfoldModel, x: np.ndarray, trace: ForwardTrace) -> Gradients:
    """Gradients of the mean squared error w.r.t. phi and alpha.

    `trace` must come from ``forward(model, x)``.  For a batch the loss is
    averaged over rows; for a single vector it is the plain squared error.
    """
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    states = [np.atleast_2d(s) for s in trace.states]
    v = np.atleast_2d(trace.v)
    y = np.atleast_2d(trace.y)
    x_hat = np.atleast_2d(trace.x_hat)
    if len(states) != model.depth + 1 or x.shape[0] != states[0].shape[0]:
        raise ValueError("trace does not match the model/input")
    phi = model.phi
    batch = x.shape[0]
    depth = model.depth
    use_bn = bool(trace.bn_caches) and len(trace.bn_caches) == depth

    d_states = [np.zeros_like(s) for s in states]
    d_xhat = 2.0 * (x_hat - x) / batch
    if model.variant.is_cat:
        dw = np.concatenate([d_xhat, -d_xhat], axis=-1)
        d_states[depth] = dw * (states[depth] > 0)
    else:
        d_states[depth] = d_xhat

    d_phi = np.zeros_like(phi)
    d_alpha = 0.0
    for t in range(depth, 0, -1):
        u = d_states[t]
        if use_bn:
            u = _bn_backward(u, trace.bn_caches[t - 1])
        s_in = states[t - 1]
        g = np.sign(s_in)
        phi_g = g @ phi.T
        phi_u = u @ phi.T
        # step term -(alpha/t) (I - phi.T phi) sign(s_in)
        d_alpha += -(1.0 / t) * float(np.sum(u * (g - phi_g @ phi)))
        d_phi += (model.alpha / t) * (phi_g.T @ u + phi_u.T @ g)
        if model.variant.is_residual:
            prev_idx = t - 2 if t >= 2 else 0
            diff = states[prev_idx] - s_in
            phi_d = diff @ phi.T
            d_phi += phi_d.T @ u + phi_u.T @ diff
            gram_u = phi_u @ phi
            d_states[t - 1] += u - gram_u
            d_states[prev_idx] += gram_u
        else:
            d_states[t - 1] += u
    d0 = d_states[0]
    # bootstrap s0 = phi.T y, then encoder y = phi v
    d_phi += y.T @ d0
    d_y = d0 @ phi.T
    d_phi += d_y.T @ v
    return Gradients(d_phi=d_phi, d_alpha=float(d_alpha))


def sgd_step(model: UnfoldModel, grads: Gradients, lr: float) -> UnfoldModel:
    """One gradient-descent update; alpha is floored at ALPHA_FLOOR to keep
    the unrolled step size positive."""
    if not (np.all(np.isfinite(grads.d_phi)) and np.isfinite(grads.d_alpha)):
        raise ValueError("non-finite gradient")
    phi = model.phi - lr * grads.d_phi
    alpha = max(model.alpha - lr * grads.d_alpha, ALPHA_FLOOR)
    return replace(model, phi=phi, alpha=alpha)


def _truncated_normal(rng: np.random.Generator, shape, std: float) -> np.ndarray:
    # standard rejection sampling, truncation at +-2 std
    out = rng.standard_normal(shape)
    bad = np.abs(out) > 2.0
    while bad.any():
        out[bad] = rng.standard_normal(int(bad.sum()))
        bad = np.abs(out) > 2.0
    return out * std


def init_model(variant: Variant, n: int, m: int, cfg: TrainConfig) -> UnfoldModel:
    """Fresh model: truncated-normal phi and alpha from the config.

    The default std is 1/sqrt(cols) (cols = N, or 2N for cat variants):
    scaling by the matrix width keeps ||phi||^2 near 1 so the residual
    decoder's (I - phi.T phi) propagation stays non-expansive at init.
    """
    variant = Variant(variant)
    cols = 2 * n if variant.is_cat else n
    std = cfg.phi_init_std if cfg.phi_init_std is not None else 1.0 / np.sqrt(cols)
    rng = np.random.default_rng(np.random.SeedSequence((cfg.seed, 0)))
    phi = _truncated_normal(rng, (m, cols), std)
    return UnfoldModel(
        variant=variant,
        phi=phi,
        alpha=cfg.alpha_init,
        depth=cfg.depth,
        batch_norm=cfg.batch_norm,
    )


def _clip_gradients(grads: Gradients, max_norm: float) -> Gradients:
    total = float(np.sqrt(np.sum(grads.d_phi**2) + grads.d_alpha**2))
    if total <= max_norm or total == 0.0:
        return grads
    scale = max_norm / total
    return Gradients(d_phi=grads.d_phi * scale, d_alpha=grads.d_alpha * scale)


def train(model_init: UnfoldModel, data, cfg: TrainConfig):
    """Mini-batch SGD with early stopping on the validation loss.

    Each channel sample contributes its two real-form columns as
    independent training vectors; batches are reshuffled every epoch from
    a config-seeded stream.  Returns the parameters that achieved the best
    validation loss together with the per-epoch loss report.
    """
    x_train = data.vectors("train")
    x_val = data.vectors("val")
    if x_train.shape[0] == 0 or x_val.shape[0] == 0:
        raise ValueError("training requires nonempty train and val splits")
    rng = np.random.default_rng(np.random.SeedSequence((cfg.seed, 1)))
    model = replace(model_init, phi=model_init.phi.copy())
    report = TrainReport()
    best_phi = model.phi.copy()
    best_alpha = model.alpha
    epochs_no_improve = 0

    for epoch in range(1, cfg.max_epochs + 1):
        perm = rng.permutation(x_train.shape[0])
        sq_err = 0.0
        for start in range(0, x_train.shape[0], cfg.batch_size):
            batch = x_train[perm[start:start + cfg.batch_size]]
            x_hat, trace = forward(model, batch, training=True)
            sq_err += float(np.sum((batch - x_hat) ** 2))
            grads = backward(model, batch, trace)
            if not (np.all(np.isfinite(grads.d_phi)) and np.isfinite(grads.d_alpha)):
                report.stopped_epoch = epoch
                raise TrainingDivergedError(
                    f"non-finite gradient at epoch {epoch}", report
                )
            if cfg.grad_clip is not None:
                grads = _clip_gradients(grads, cfg.grad_clip)
            model = sgd_step(model, grads, cfg.learning_rate)
        train_loss = sq_err / x_train.shape[0]
        val_hat, _ = forward(model, x_val, training=False)
        val_loss = mse_loss(x_val, val_hat)
        report.train_loss.append(train_loss)
        report.val_loss.append(val_loss)
        report.stopped_epoch = epoch
        if not (np.isfinite(train_loss) and np.isfinite(val_loss)):
            raise TrainingDivergedError(f"loss diverged at epoch {epoch}", report)
        if val_loss < report.best_val_loss:
            report.best_val_loss = val_loss
            report.best_epoch = epoch
            best_phi = model.phi.copy()
            best_alpha = model.alpha
            epochs_no_improve = 0
        else:
            epochs_no_improve += 1
        if epochs_no_improve >= cfg.patience:
            break
    best_model = replace(model, phi=best_phi, alpha=best_alpha)
    return best_model, report


_KIND_BY_VARIANT = {
    Variant.SAE: "learned_sae",
    Variant.GAE: "learned_gae",
    Variant.SAECAT: "learned_saec",
    Variant.GAECAT: "learned_gaec",
}


def export_matrix(model: UnfoldModel) -> MeasurementMatrix:
    """Extract phi and scale every column to unit l2 norm.

    Column normalization realizes the per-antenna pilot power constraint;
    a zero column would carry no measurement energy and is rejected.
    """
    norms = np.linalg.norm(model.phi, axis=0)
    if np.any(norms == 0.0):
        raise ValueError("phi has a zero column; cannot normalize")
    return MeasurementMatrix(
        data=model.phi / norms,
        kind=_KIND_BY_VARIANT[model.variant],
        normalized=True,
    )


def save_checkpoint(model: UnfoldModel, path, meta: dict | None = None) -> None:
    full_meta = {"depth": model.depth, "batch_norm": model.batch_norm}
    if meta:
        full_meta.update(meta)
    fileio.save_matrix_file(
        path,
        model.phi,
        kind=model.variant.value,
        normalized=False,
        alpha=model.alpha,
        meta=full_meta,
    )


def load_checkpoint(path) -> tuple[UnfoldModel, dict]:
    data, kind, _, alpha, meta = fileio.load_matrix_file(path)
    model = UnfoldModel(
        variant=Variant(kind),
        phi=data,
        alpha=alpha,
        depth=int(meta["depth"]),
        batch_norm=meta.get("batch_norm", "off"),
    )
    return model, meta
