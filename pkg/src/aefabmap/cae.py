"""1-D convolutional autoencoder over descriptor vectors, written directly in numpy.

Signals are handled as ``(batch, length, channels)`` arrays. Every conv layer
has kernel 3, stride 1 and one zero of padding per side, so it preserves
length; the encoder halves the length twice with max pooling and the decoder
doubles it back with nearest-neighbour upsampling.
"""
from __future__ import annotations

import copy
import csv
import logging
import struct
from dataclasses import dataclass

import numpy as np

from .codebook import kmeans_train, nearest
from .dataio import DescriptorSet, _le, _read_bytes, _Reader, _write_bytes
from .errors import ConfigError, DataError, DimensionError, IoError, NumericError

log = logging.getLogger(__name__)

CAE_MAGIC = b"CAE1"
KERNEL = 3
DEFAULT_WIDTHS = (32, 64, 128)


def layer_plan(widths=DEFAULT_WIDTHS) -> list[tuple]:
    """Ordered stages: ``("conv", c_in, c_out)``, ``("pool",)`` or ``("up",)``."""
    c1, c2, c3 = widths
    return [
        ("conv", 1, c1), ("pool",),
        ("conv", c1, c2), ("pool",),
        ("conv", c2, c3),
        ("conv", c3, c3), ("up",),
        ("conv", c3, c2), ("up",),
        ("conv", c2, 1),
    ]


# index (into the conv layers) of the last encoder conv; its output is the latent code
_LATENT_CONV = 2


@dataclass(eq=False)
class CaeModel:
    input_len: int
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    widths: tuple[int, int, int] = DEFAULT_WIDTHS

    @property
    def plan(self) -> list[tuple]:
        return layer_plan(self.widths)

    @property
    def latent_dim(self) -> int:
        return (self.input_len // 4) * self.widths[2]

    def params(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def copy(self) -> "CaeModel":
        return copy.deepcopy(self)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 10
    batch_size: int = 64
    learning_rate: float = 1e-3
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if self.epochs < 0 or self.batch_size < 1:
            raise ConfigError("epochs must be >= 0 and batch_size >= 1")
        if self.learning_rate < 0:
            raise ConfigError("learning_rate must be non-negative")


def init_cae(input_len: int = 128, seed: int = 0, widths=DEFAULT_WIDTHS) -> CaeModel:
    """Glorot-uniform filters, zero biases."""
    if input_len < 4 or input_len % 4:
        raise ConfigError(f"input_len must be a positive multiple of 4, got {input_len}")
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for stage in layer_plan(widths):
        if stage[0] != "conv":
            continue
        _, cin, cout = stage
        limit = np.sqrt(6.0 / (KERNEL * cin + KERNEL * cout))
        weights.append(rng.uniform(-limit, limit, size=(KERNEL, cin, cout)))
        biases.append(np.zeros(cout))
    return CaeModel(input_len, weights, biases, tuple(widths))


def _conv_forward(x, w, b):
    bsz, length, cin = x.shape
    xp = np.pad(x, ((0, 0), (1, 1), (0, 0)))
    cols = np.concatenate([xp[:, k:k + length] for k in range(KERNEL)], axis=2)
    out = cols.reshape(bsz * length, KERNEL * cin) @ w.reshape(KERNEL * cin, -1)
    return out.reshape(bsz, length, -1) + b, cols


def _conv_backward(g, cols, w):
    bsz, length, cout = g.shape
    cin = w.shape[1]
    g2 = g.reshape(bsz * length, cout)
    dw = (cols.reshape(bsz * length, KERNEL * cin).T @ g2).reshape(w.shape)
    db = g2.sum(axis=0)
    dcols = (g2 @ w.reshape(KERNEL * cin, cout).T).reshape(bsz, length, KERNEL, cin)
    dxp = np.zeros((bsz, length + 2, cin))
    for k in range(KERNEL):
        dxp[:, k:k + length] += dcols[:, :, k]
    return dxp[:, 1:-1], dw, db


def _pool_forward(x):
    bsz, length, c = x.shape
    pairs = x.reshape(bsz, length // 2, 2, c)
    pick = np.argmax(pairs, axis=2)
    return np.take_along_axis(pairs, pick[:, :, None, :], axis=2)[:, :, 0], pick


def _pool_backward(g, pick):
    bsz, half, c = g.shape
    dx = np.zeros((bsz, half, 2, c))
    np.put_along_axis(dx, pick[:, :, None, :], g[:, :, None, :], axis=2)
    return dx.reshape(bsz, half * 2, c)


def _sigmoid(z):
    return np.exp(-np.logaddexp(0.0, -z))


def _check_batch(model: CaeModel, batch) -> np.ndarray:
    x = np.asarray(batch, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != model.input_len:
        raise DimensionError(f"expected batches of length {model.input_len}, got shape {x.shape}")
    return x


def _forward(model: CaeModel, x: np.ndarray, keep: bool):
    h = x[:, :, None]
    caches = []
    latent = None
    n_conv = len(model.weights)
    ci = 0
    for stage in model.plan:
        if stage[0] == "conv":
            z, cols = _conv_forward(h, model.weights[ci], model.biases[ci])
            if ci == n_conv - 1:
                h = z
            else:
                h = np.maximum(z, 0.0)
            if keep:
                caches.append(("conv", ci, cols, z))
            if ci == _LATENT_CONV:
                latent = h
            ci += 1
        elif stage[0] == "pool":
            h, pick = _pool_forward(h)
            if keep:
                caches.append(("pool", pick))
        else:
            h = np.repeat(h, 2, axis=1)
            if keep:
                caches.append(("up",))
    logits = h[:, :, 0]
    return logits, latent.reshape(x.shape[0], -1), caches


def forward(model: CaeModel, batch) -> tuple[np.ndarray, np.ndarray]:
    """Reconstruction in (0, 1) and the flattened latent code for a ``B x input_len`` batch."""
    x = _check_batch(model, batch)
    logits, latent, _ = _forward(model, x, keep=False)
    return _sigmoid(logits), latent


def bce_loss(target, recon) -> float:
    """Mean binary cross-entropy over all elements."""
    y = np.asarray(target, dtype=np.float64)
    p = np.asarray(recon, dtype=np.float64)
    if y.shape != p.shape:
        raise DimensionError(f"target {y.shape} and reconstruction {p.shape} differ")
    if not np.all((p > 0.0) & (p < 1.0)):
        raise NumericError("reconstruction values must lie strictly inside (0, 1)")
    return float(-np.mean(y * np.log(p) + (1.0 - y) * np.log1p(-p)))


def _bce_from_logits(y, logits) -> float:
    # log(sigmoid(z)) = -softplus(-z), log(1 - sigmoid(z)) = -softplus(z)
    return float(np.mean(y * np.logaddexp(0.0, -logits) + (1.0 - y) * np.logaddexp(0.0, logits)))


def _loss_and_grads(model: CaeModel, x: np.ndarray, y: np.ndarray):
    logits, _, caches = _forward(model, x, keep=True)
    loss = _bce_from_logits(y, logits)
    g = ((_sigmoid(logits) - y) / y.size)[:, :, None]
    dws = [None] * len(model.weights)
    dbs = [None] * len(model.biases)
    n_conv = len(model.weights)
    for cache in reversed(caches):
        kind = cache[0]
        if kind == "conv":
            _, ci, cols, z = cache
            if ci != n_conv - 1:
                g = g * (z > 0)
            g, dws[ci], dbs[ci] = _conv_backward(g, cols, model.weights[ci])
        elif kind == "pool":
            g = _pool_backward(g, cache[1])
        else:
            bsz, length, c = g.shape
            g = g.reshape(bsz, length // 2, 2, c).sum(axis=2)
    return loss, dws, dbs


def backward(model: CaeModel, batch, target) -> tuple[list[np.ndarray], list[np.ndarray]]:
    """Exact gradients of ``bce_loss(target, forward(model, batch)[0])``.

    Returns ``(weight_grads, bias_grads)`` in conv-layer order.
    """
    x = _check_batch(model, batch)
    y = _check_batch(model, target)
    if y.shape != x.shape:
        raise DimensionError("batch and target shapes differ")
    _, dws, dbs = _loss_and_grads(model, x, y)
    return dws, dbs


@dataclass(frozen=True, eq=False)
class Normalizer:
    """Per-dimension min/max scaling to [0, 1]; constant dimensions map to 0.5."""

    lo: np.ndarray
    hi: np.ndarray

    def transform(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        span = self.hi - self.lo
        flat = span == 0
        out = (x - self.lo) / np.where(flat, 1.0, span)
        out[..., flat] = 0.5
        return out

    def inverse(self, y) -> np.ndarray:
        y = np.asarray(y, dtype=np.float64)
        span = self.hi - self.lo
        out = y * span + self.lo
        out[..., span == 0] = self.lo[span == 0]
        return out


def normalize_descriptors(ds: DescriptorSet) -> tuple[DescriptorSet, Normalizer]:
    x = ds.data.astype(np.float64)
    if x.shape[0] == 0:
        norm = Normalizer(np.zeros(ds.dim), np.zeros(ds.dim))
        return ds.with_data(x), norm
    norm = Normalizer(x.min(axis=0), x.max(axis=0))
    return ds.with_data(np.clip(norm.transform(x), 0.0, 1.0)), norm


def _matrix(ds) -> np.ndarray:
    return np.asarray(ds.data if isinstance(ds, DescriptorSet) else ds, dtype=np.float64)


def train_cae(model: CaeModel, ds, cfg: TrainConfig | None = None) -> tuple[CaeModel, list[float]]:
    """Adam on mean BCE reconstruction loss; returns the trained copy and per-epoch mean loss."""
    cfg = cfg or TrainConfig()
    x = _matrix(ds)
    if x.ndim != 2 or x.shape[1] != model.input_len:
        raise DimensionError(f"expected descriptors of length {model.input_len}, got shape {x.shape}")
    if x.size and (x.min() < 0.0 or x.max() > 1.0):
        raise DataError("descriptors must be normalised to [0, 1] before CAE training")
    model = model.copy()
    rng = np.random.default_rng(cfg.seed)
    params = model.params()
    m = [np.zeros_like(p) for p in params]
    v = [np.zeros_like(p) for p in params]
    step = 0
    history: list[float] = []
    n = x.shape[0]
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, cfg.batch_size):
            xb = x[order[start:start + cfg.batch_size]]
            loss, dws, dbs = _loss_and_grads(model, xb, xb)
            total += loss * xb.shape[0]
            grads = []
            for dw, db in zip(dws, dbs):
                grads += [dw, db]
            step += 1
            c1 = 1.0 - cfg.beta1**step
            c2 = 1.0 - cfg.beta2**step
            for p, g, mi, vi in zip(params, grads, m, v):
                mi *= cfg.beta1
                mi += (1.0 - cfg.beta1) * g
                vi *= cfg.beta2
                vi += (1.0 - cfg.beta2) * g * g
                p -= cfg.learning_rate * (mi / c1) / (np.sqrt(vi / c2) + cfg.eps)
        history.append(total / n if n else float("nan"))
        log.info("cae epoch %d/%d loss %.6f", epoch + 1, cfg.epochs, history[-1])
    return model, history


def encode(model: CaeModel, ds, batch_size: int = 256) -> np.ndarray:
    x = _matrix(ds)
    if x.shape[0] == 0:
        return np.empty((0, model.latent_dim))
    x = _check_batch(model, x)
    parts = [_forward(model, x[s:s + batch_size], keep=False)[1] for s in range(0, x.shape[0], batch_size)]
    return np.concatenate(parts, axis=0)


def ae_labels(model: CaeModel, ds, k: int, seed: int = 0, batch_size: int = 256) -> np.ndarray:
    """Cluster labels of the latent codes (k-means++ in latent space)."""
    x = _matrix(ds)
    if x.shape[0] < k:
        raise DataError(f"need at least k={k} descriptors, got {x.shape[0]}")
    latent = encode(model, x, batch_size)
    cb = kmeans_train(latent, k, seed=seed)
    return nearest(latent, cb.centroids)[0]


def save_cae(model: CaeModel, path) -> None:
    parts = [CAE_MAGIC, struct.pack("<II", model.input_len, len(model.weights))]
    for w, b in zip(model.weights, model.biases):
        parts.append(struct.pack("<III", *w.shape))
        parts.append(_le(w, "f8"))
        parts.append(_le(b, "f8"))
    _write_bytes(path, b"".join(parts))


def load_cae(path) -> CaeModel:
    r = _Reader(_read_bytes(path), f"CAE1 file {path}")
    r.magic(CAE_MAGIC)
    input_len, n_layers = r.unpack("II")
    weights, biases = [], []
    for _ in range(n_layers):
        k, cin, cout = r.unpack("III")
        weights.append(r.array("f8", k * cin * cout).reshape(k, cin, cout))
        biases.append(r.array("f8", cout))
    r.finish()
    if n_layers != 6:
        raise DataError(f"CAE1 file {path}: expected 6 conv layers, found {n_layers}")
    widths = (weights[0].shape[2], weights[1].shape[2], weights[2].shape[2])
    return CaeModel(input_len, weights, biases, widths)


def save_loss_history(history: list[float], path) -> None:
    try:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["epoch", "loss"])
            for i, loss in enumerate(history, start=1):
                w.writerow([i, repr(float(loss))])
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc.strerror or exc}") from exc
