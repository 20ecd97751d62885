"""Toy joint source-channel autoencoder with a detection head.

encoder:    pixels -> hidden (ReLU) -> latent symbols
channel:    per-sample power normalization + AWGN
decoder:    received -> hidden (ReLU) -> pixels (sigmoid)
classifier: received -> 2 logits

All weights live in one flat float64 vector; the per-layer arrays are views
into it, so aggregation code only ever sees ``model.params``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .channel import awgn_transmit, normalize_power
from .core import SimConfig

BATCH_SIZE = 16

# (name, kind, fan_in key, fan_out key)
_LAYERS = (
    ("enc1", "pixels", "hidden"),
    ("enc2", "hidden", "latent"),
    ("dec1", "latent", "hidden"),
    ("dec2", "hidden", "pixels"),
    ("cls", "latent", "classes"),
)


@dataclass(frozen=True)
class Example:
    image: np.ndarray
    label: int


class Layout:
    """Offsets of each weight/bias block inside the flat parameter vector."""

    def __init__(self, pixels: int, hidden: int, latent: int, classes: int = 2):
        sizes = {"pixels": pixels, "hidden": hidden, "latent": latent, "classes": classes}
        self.dims = sizes
        self.blocks = {}
        off = 0
        for name, fin, fout in _LAYERS:
            shape_w = (sizes[fout], sizes[fin])
            n_w = shape_w[0] * shape_w[1]
            self.blocks[name + ".w"] = (off, shape_w)
            off += n_w
            self.blocks[name + ".b"] = (off, (sizes[fout],))
            off += sizes[fout]
        self.size = off

    def __eq__(self, other):
        return isinstance(other, Layout) and self.dims == other.dims

    @classmethod
    def from_config(cls, cfg: SimConfig) -> "Layout":
        return cls(cfg.image_size**2, cfg.hidden_dim, cfg.latent_dim)

    def view(self, flat: np.ndarray, key: str) -> np.ndarray:
        off, shape = self.blocks[key]
        n = int(np.prod(shape))
        return flat[off : off + n].reshape(shape)


class SemanticModel:
    def __init__(self, layout: Layout, params: np.ndarray):
        params = np.asarray(params, dtype=np.float64)
        if params.shape != (layout.size,):
            raise ValueError(f"expected {layout.size} parameters, got {params.shape}")
        self.layout = layout
        self.params = params
        self.version = 0

    def __getitem__(self, key: str) -> np.ndarray:
        return self.layout.view(self.params, key)

    @property
    def dim(self) -> int:
        return self.layout.size

    def flatten(self) -> np.ndarray:
        return self.params.copy()

    def copy(self) -> "SemanticModel":
        return SemanticModel(self.layout, self.params.copy())

    def set_params(self, params: np.ndarray) -> None:
        self.params[:] = params
        self.version += 1

    def add_(self, delta: np.ndarray) -> None:
        self.params += delta
        self.version += 1


def unflatten(flat: np.ndarray, layout: Layout) -> SemanticModel:
    return SemanticModel(layout, np.array(flat, dtype=np.float64))


def init_model(cfg: SimConfig, rng: np.random.Generator) -> SemanticModel:
    """Glorot-uniform weights, zero biases."""
    layout = Layout.from_config(cfg)
    params = np.zeros(layout.size)
    for name, _, _ in _LAYERS:
        w = layout.view(params, name + ".w")
        fan_out, fan_in = w.shape
        a = np.sqrt(6.0 / (fan_in + fan_out))
        w[:] = rng.uniform(-a, a, size=w.shape)
    return SemanticModel(layout, params)


class ForwardCache(NamedTuple):
    model_id: int
    version: int
    x: np.ndarray
    z1: np.ndarray
    a1: np.ndarray
    latent: np.ndarray
    scale: np.ndarray  # per-row normalization factor; 0 marks a pass-through row
    received: np.ndarray
    z3: np.ndarray
    a3: np.ndarray
    recon: np.ndarray
    probs: np.ndarray


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _softmax(logits: np.ndarray) -> np.ndarray:
    e = np.exp(logits - logits.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def encode(m: SemanticModel, images: np.ndarray) -> np.ndarray:
    x = np.asarray(images, dtype=np.float64).reshape(len(images), -1)
    a1 = np.maximum(x @ m["enc1.w"].T + m["enc1.b"], 0.0)
    return a1 @ m["enc2.w"].T + m["enc2.b"]


def forward(
    m: SemanticModel,
    images: np.ndarray,
    snr_db: float | None,
    rng: np.random.Generator | None,
) -> tuple[np.ndarray, np.ndarray, ForwardCache]:
    """Run a batch through encoder, channel, decoder and classifier.

    ``images`` is ``(batch, size, size)`` or ``(batch, size*size)``.
    ``snr_db=None`` runs the channel noiselessly (normalization only). Rows
    whose latent is all zero cannot be normalized and bypass the channel.
    Returns ``(reconstruction, logits, cache)``; the reconstruction has the
    flattened ``(batch, pixels)`` shape.
    """
    x = np.asarray(images, dtype=np.float64).reshape(len(images), -1)
    z1 = x @ m["enc1.w"].T + m["enc1.b"]
    a1 = np.maximum(z1, 0.0)
    latent = a1 @ m["enc2.w"].T + m["enc2.b"]

    energy = np.sum(latent * latent, axis=1)
    live = energy > 0
    scale = np.zeros(len(x))
    scale[live] = np.sqrt(latent.shape[1] / energy[live])
    received = latent.copy()
    if np.any(live):
        if snr_db is None:
            received[live] = normalize_power(latent[live])
        else:
            received[live] = awgn_transmit(latent[live], snr_db, rng)

    z3 = received @ m["dec1.w"].T + m["dec1.b"]
    a3 = np.maximum(z3, 0.0)
    recon = _sigmoid(a3 @ m["dec2.w"].T + m["dec2.b"])
    logits = received @ m["cls.w"].T + m["cls.b"]
    cache = ForwardCache(id(m), m.version, x, z1, a1, latent, scale, received, z3, a3, recon, _softmax(logits))
    return recon, logits, cache


def loss(reconstruction, images, logits, labels, lambda_cls: float) -> float:
    """Mean pixel MSE plus ``lambda_cls`` times mean softmax cross-entropy."""
    x = np.asarray(images, dtype=np.float64).reshape(len(images), -1)
    r = np.asarray(reconstruction).reshape(x.shape)
    if r.shape != x.shape:
        raise ValueError("reconstruction and image shapes differ")
    mse = np.mean((r - x) ** 2)
    logits = np.atleast_2d(logits)
    labels = np.atleast_1d(np.asarray(labels, dtype=np.int64))
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_probs = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    ce = -np.mean(log_probs[np.arange(len(labels)), labels])
    return float(mse + lambda_cls * ce)


def backward(
    m: SemanticModel,
    cache: ForwardCache,
    labels: np.ndarray,
    lambda_cls: float,
    scale: float = 1.0,
) -> np.ndarray:
    """Gradient of ``scale * loss`` with respect to ``m.params``.

    Channel noise is an additive constant, so the gradient passes through it
    unchanged; the power normalization is differentiated exactly.
    """
    if cache.model_id != id(m) or cache.version != m.version:
        raise ValueError("stale forward cache: the model changed since forward()")
    labels = np.asarray(labels, dtype=np.int64)
    lay = m.layout
    grad = np.zeros(lay.size)
    g = lambda key: lay.view(grad, key)  # noqa: E731

    batch, pixels = cache.x.shape
    d_recon = (2.0 * scale / (batch * pixels)) * (cache.recon - cache.x)
    dz4 = d_recon * cache.recon * (1.0 - cache.recon)
    g("dec2.w")[:] = dz4.T @ cache.a3
    g("dec2.b")[:] = dz4.sum(axis=0)
    dz3 = (dz4 @ m["dec2.w"]) * (cache.z3 > 0)
    g("dec1.w")[:] = dz3.T @ cache.received
    g("dec1.b")[:] = dz3.sum(axis=0)
    d_recv = dz3 @ m["dec1.w"]

    d_logits = cache.probs.copy()
    d_logits[np.arange(batch), labels] -= 1.0
    d_logits *= lambda_cls * scale / batch
    g("cls.w")[:] = d_logits.T @ cache.received
    g("cls.b")[:] = d_logits.sum(axis=0)
    d_recv += d_logits @ m["cls.w"]

    # Jacobian of x -> x * sqrt(n / |x|^2) is c (I - x x^T / |x|^2).
    lat = cache.latent
    live = cache.scale > 0
    d_lat = d_recv.copy()
    if np.any(live):
        xl, gl, c = lat[live], d_recv[live], cache.scale[live][:, None]
        proj = np.sum(xl * gl, axis=1, keepdims=True) / np.sum(xl * xl, axis=1, keepdims=True)
        d_lat[live] = c * (gl - xl * proj)

    g("enc2.w")[:] = d_lat.T @ cache.a1
    g("enc2.b")[:] = d_lat.sum(axis=0)
    dz1 = (d_lat @ m["enc2.w"]) * (cache.z1 > 0)
    g("enc1.w")[:] = dz1.T @ cache.x
    g("enc1.b")[:] = dz1.sum(axis=0)
    return grad


def local_train(
    m: SemanticModel,
    images: np.ndarray,
    labels: np.ndarray,
    iters: int,
    lr: float,
    snr_db: float,
    rng: np.random.Generator,
    lambda_cls: float = 0.1,
) -> tuple[np.ndarray, SemanticModel]:
    """Run ``iters`` shuffled passes of mini-batch gradient descent on a copy of ``m``.

    Returns ``(final - initial parameters, trained copy)``.
    """
    if len(images) == 0:
        raise ValueError("MED holds no data")
    if iters < 1:
        raise ValueError("iters must be >= 1")
    images = np.asarray(images, dtype=np.float64).reshape(len(images), -1)
    labels = np.asarray(labels, dtype=np.int64)
    model = m.copy()
    start = model.flatten()
    batch = min(BATCH_SIZE, len(images))
    for _ in range(iters):
        order = rng.permutation(len(images))
        for lo in range(0, len(order), batch):
            sel = order[lo : lo + batch]
            _, _, cache = forward(model, images[sel], snr_db, rng)
            model.add_(-lr * backward(model, cache, labels[sel], lambda_cls))
    return model.params - start, model
