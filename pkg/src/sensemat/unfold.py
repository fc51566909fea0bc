"""Forward computation graphs of the unrolled basis-pursuit autoencoders.

Every variant shares one skeleton: a linear encoder y = phi @ x, a decoder
bootstrap x0 = phi.T @ y, and `depth` unrolled iterations of a projected
subgradient step with the pseudo-inverse replaced by the transpose,

    sae:  x_{t+1} = x_t - (alpha/t) (I - phi.T phi) sign(x_t)
    gae:  x_{t+1} = x_t + phi.T phi (x_{t-1} - x_t)
                        - (alpha/t) (I - phi.T phi) sign(x_t)

The gae step adds a shortcut through the previous state (a residual-style
unit); at the first layer the previous state is the bootstrap itself.  The
*cat* variants run the same decoders on the nonnegative split
x~ = [max(x,0); max(-x,0)] with a doubly wide matrix, and map back through
a ReLU followed by a slice-and-subtract.

phi.T phi v is always evaluated as phi.T @ (phi @ v); the K x K Gram matrix
is never materialized, keeping a forward pass at O(depth * M * K) flops.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "Variant",
    "UnfoldModel",
    "ForwardTrace",
    "split_nonneg",
    "cat_output",
    "encode",
    "decoder_init",
    "sae_layer",
    "gae_layer",
    "forward",
]

BN_EPS = 1e-5


class Variant(enum.Enum):
    SAE = "sae"
    GAE = "gae"
    SAECAT = "saecat"
    GAECAT = "gaecat"

    @property
    def is_cat(self) -> bool:
        return self in (Variant.SAECAT, Variant.GAECAT)

    @property
    def is_residual(self) -> bool:
        return self in (Variant.GAE, Variant.GAECAT)


@dataclass
class UnfoldModel:
    """Autoencoder parameters: the trainable matrix, the scalar step-size
    base shared by all layers, and the unroll depth."""

    variant: Variant
    phi: np.ndarray  # (M, N) for sae/gae, (M, 2N) for the cat variants
    alpha: float
    depth: int
    batch_norm: str = "off"  # "off" | "per_layer" (training-time only)

    def __post_init__(self):
        self.variant = Variant(self.variant)
        self.phi = np.asarray(self.phi, dtype=np.float64)
        if self.phi.ndim != 2:
            raise ValueError("phi must be a 2-D matrix")
        if not np.all(np.isfinite(self.phi)):
            raise ValueError("phi must be finite")
        if self.variant.is_cat and self.phi.shape[1] % 2 != 0:
            raise ValueError("cat variants need an even number of phi columns")
        if not self.alpha > 0:
            raise ValueError("alpha must be positive")
        if self.depth < 1:
            raise ValueError("depth must be >= 1")
        if self.batch_norm not in ("off", "per_layer"):
            raise ValueError("batch_norm must be 'off' or 'per_layer'")

    @property
    def n(self) -> int:
        """Channel dimension N (phi columns, halved for cat variants)."""
        cols = self.phi.shape[1]
        return cols // 2 if self.variant.is_cat else cols

    @property
    def m(self) -> int:
        return self.phi.shape[0]


@dataclass
class ForwardTrace:
    """Intermediates recorded by :func:`forward`, consumed by the
    reverse-mode gradients in :mod:`sensemat.train`."""

    v: np.ndarray            # decoder-space input (split for cat variants)
    y: np.ndarray            # measurements
    states: list             # decoder states, exactly depth + 1 entries
    x_hat: np.ndarray
    bn_caches: list = field(default_factory=list)  # per layer, only when BN ran


def _gram_apply(phi: np.ndarray, v: np.ndarray) -> np.ndarray:
    # phi.T @ (phi @ v) for a single vector (K,) or a batch (B, K)
    return (v @ phi.T) @ phi


def split_nonneg(x: np.ndarray) -> np.ndarray:
    """Nonnegative split [max(x, 0); max(-x, 0)] along the last axis."""
    x = np.asarray(x, dtype=np.float64)
    return np.concatenate([np.maximum(x, 0.0), np.maximum(-x, 0.0)], axis=-1)


def cat_output(xt: np.ndarray) -> np.ndarray:
    """ReLU then subtract the second half from the first half."""
    xt = np.asarray(xt, dtype=np.float64)
    k = xt.shape[-1]
    if k % 2 != 0:
        raise ValueError("cat output needs an even-length input")
    r = np.maximum(xt, 0.0)
    return r[..., : k // 2] - r[..., k // 2:]


def encode(model: UnfoldModel, x: np.ndarray) -> np.ndarray:
    """Noiseless linear measurements of a channel vector (or batch).

    For cat variants the raw length-N input is split internally before
    being multiplied with the doubly wide matrix.
    """
    x = np.asarray(x, dtype=np.float64)
    v = split_nonneg(x) if model.variant.is_cat else x
    if v.shape[-1] != model.phi.shape[1]:
        raise ValueError(
            f"input dimension {x.shape[-1]} does not match phi {model.phi.shape}"
        )
    return v @ model.phi.T


def decoder_init(model: UnfoldModel, y: np.ndarray) -> np.ndarray:
    """Decoder bootstrap phi.T @ y."""
    y = np.asarray(y, dtype=np.float64)
    if y.shape[-1] != model.m:
        raise ValueError(f"measurement dimension {y.shape[-1]} != M={model.m}")
    return y @ model.phi


def sae_layer(model: UnfoldModel, x_t: np.ndarray, t: int) -> np.ndarray:
    """One unrolled step with diminishing step size alpha/t; sign(0) = 0."""
    if t < 1:
        raise ValueError("layer index t must be >= 1")
    x_t = np.asarray(x_t, dtype=np.float64)
    if x_t.shape[-1] != model.phi.shape[1]:
        raise ValueError("state dimension does not match phi columns")
    g = np.sign(x_t)
    return x_t - (model.alpha / t) * (g - _gram_apply(model.phi, g))


def gae_layer(
    model: UnfoldModel, x_t: np.ndarray, x_prev: np.ndarray, t: int
) -> np.ndarray:
    """sae step plus the shortcut phi.T phi (x_{t-1} - x_t).

    Feeding x_prev = x_t recovers :func:`sae_layer` bit for bit: the
    shortcut is evaluated on the difference, which is then exactly zero.
    """
    if t < 1:
        raise ValueError("layer index t must be >= 1")
    x_t = np.asarray(x_t, dtype=np.float64)
    x_prev = np.asarray(x_prev, dtype=np.float64)
    if x_prev.shape != x_t.shape:
        raise ValueError("x_prev and x_t must have matching shapes")
    g = np.sign(x_t)
    return (
        x_t
        + _gram_apply(model.phi, x_prev - x_t)
        - (model.alpha / t) * (g - _gram_apply(model.phi, g))
    )


def _bn_forward(z: np.ndarray):
    mu = z.mean(axis=0)
    inv = 1.0 / np.sqrt(z.var(axis=0) + BN_EPS)
    zhat = (z - mu) * inv
    return zhat, (zhat, inv)


def _bn_backward(dzhat: np.ndarray, cache) -> np.ndarray:
    zhat, inv = cache
    return inv * (
        dzhat - dzhat.mean(axis=0) - zhat * (dzhat * zhat).mean(axis=0)
    )


def forward(
    model: UnfoldModel, x: np.ndarray, training: bool = False
) -> tuple[np.ndarray, ForwardTrace]:
    """Full autoencoder pass for one vector (N,) or a batch (B, N).

    Per-layer batch normalization (no learned affine) runs only when the
    model requests it, `training` is set and the input is a batch; it never
    alters inference, so the exported matrix keeps its plain linear-map
    semantics.
    """
    x = np.asarray(x, dtype=np.float64)
    use_bn = model.batch_norm == "per_layer" and training
    if use_bn and x.ndim != 2:
        raise ValueError("per-layer batch norm requires a batch input")
    v = split_nonneg(x) if model.variant.is_cat else x
    y = v @ model.phi.T
    states = [y @ model.phi]
    bn_caches = []
    for t in range(1, model.depth + 1):
        if model.variant.is_residual:
            prev = states[t - 2] if t >= 2 else states[0]
            nxt = gae_layer(model, states[-1], prev, t)
        else:
            nxt = sae_layer(model, states[-1], t)
        if use_bn:
            nxt, cache = _bn_forward(nxt)
            bn_caches.append(cache)
        states.append(nxt)
    x_hat = cat_output(states[-1]) if model.variant.is_cat else states[-1]
    return x_hat, ForwardTrace(v=v, y=y, states=states, x_hat=x_hat, bn_caches=bn_caches)
