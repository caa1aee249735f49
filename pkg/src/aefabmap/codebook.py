"""Vocabularies: k-means++ training, nearest-centroid quantization and BoW histograms."""
from __future__ import annotations

import logging
import struct
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.spatial.distance import cdist

from .dataio import DescriptorSet, _le, _read_bytes, _Reader, _write_bytes
from .errors import DataError, DimensionError

log = logging.getLogger(__name__)

CBK_MAGIC = b"CBK1"
BOW_MAGIC = b"BOW1"

# rows per distance block; keeps the block around a few MB for |C| = 1024
_CHUNK = 2048


@dataclass(frozen=True, eq=False)
class Codebook:
    centroids: np.ndarray

    def __post_init__(self):
        c = np.ascontiguousarray(self.centroids, dtype=np.float64)
        if c.ndim != 2 or c.shape[0] < 1:
            raise DataError("a codebook needs at least one centroid")
        if not np.all(np.isfinite(c)):
            raise DataError("codebook has non-finite centroids")
        c.setflags(write=False)
        object.__setattr__(self, "centroids", c)

    @property
    def size(self) -> int:
        return self.centroids.shape[0]

    @property
    def dim(self) -> int:
        return self.centroids.shape[1]


@dataclass(frozen=True, eq=False)
class BowMatrix:
    """Word counts per image; ``binary`` is the presence indicator."""

    counts: np.ndarray
    image_ids: tuple[str, ...] = field(default=())

    def __post_init__(self):
        counts = np.asarray(self.counts)
        if counts.ndim != 2:
            raise DimensionError("BoW counts must be a 2-d matrix")
        if np.any(counts < 0):
            raise DataError("BoW counts must be non-negative")
        counts = counts.astype(np.int64)
        counts.setflags(write=False)
        object.__setattr__(self, "counts", counts)
        ids = tuple(self.image_ids) or tuple(str(i) for i in range(counts.shape[0]))
        if len(ids) != counts.shape[0]:
            raise DataError("one image id per BoW row is required")
        object.__setattr__(self, "image_ids", ids)

    @property
    def binary(self) -> np.ndarray:
        return (self.counts >= 1).astype(np.uint8)

    @property
    def n_images(self) -> int:
        return self.counts.shape[0]

    @property
    def vocab_size(self) -> int:
        return self.counts.shape[1]


def _sq_dists(x: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    return cdist(x, centroids, metric="sqeuclidean")


def nearest(x: np.ndarray, centroids: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Index of the closest centroid (ties -> smallest index) and its squared distance."""
    x = np.asarray(x, dtype=np.float64)
    labels = np.empty(x.shape[0], dtype=np.int64)
    dist = np.empty(x.shape[0], dtype=np.float64)
    for start in range(0, x.shape[0], _CHUNK):
        d = _sq_dists(x[start:start + _CHUNK], centroids)
        lab = np.argmin(d, axis=1)
        labels[start:start + _CHUNK] = lab
        dist[start:start + _CHUNK] = d[np.arange(d.shape[0]), lab]
    return labels, dist


def kmeanspp_init(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    """Row indices of the k-means++ seeds (D^2 sampling)."""
    n = x.shape[0]
    chosen = [int(rng.integers(n))]
    d2 = _sq_dists(x, x[chosen[0]][None, :])[:, 0]
    for _ in range(1, k):
        total = d2.sum()
        if total > 0:
            idx = int(rng.choice(n, p=d2 / total))
        else:
            # every point coincides with a seed already; take an unused row
            unused = np.setdiff1d(np.arange(n), chosen)
            idx = int(rng.choice(unused))
        chosen.append(idx)
        d2 = np.minimum(d2, _sq_dists(x, x[idx][None, :])[:, 0])
    return np.array(chosen, dtype=np.int64)


def _reseed_empty(x, centroids, labels, dist, counts):
    empty = np.flatnonzero(counts == 0)
    if empty.size == 0:
        return False
    far = np.argsort(-dist, kind="stable")
    taken = 0
    for j in empty:
        idx = far[taken]
        taken += 1
        centroids[j] = x[idx]
        labels[idx] = j
        dist[idx] = 0.0
    return True


def lloyd(
    x: np.ndarray,
    init: np.ndarray,
    max_iters: int = 100,
    tol: float = 1e-4,
) -> tuple[np.ndarray, list[float]]:
    """Lloyd iterations from ``init``; returns centroids and the objective per iteration."""
    centroids = np.array(init, dtype=np.float64)
    k = centroids.shape[0]
    history: list[float] = []
    for it in range(max_iters):
        labels, dist = nearest(x, centroids)
        counts = np.bincount(labels, minlength=k)
        if _reseed_empty(x, centroids, labels, dist, counts):
            counts = np.bincount(labels, minlength=k)
        history.append(float(dist.sum()))
        sums = np.zeros_like(centroids)
        np.add.at(sums, labels, x)
        new = centroids.copy()
        filled = counts > 0
        new[filled] = sums[filled] / counts[filled, None]
        shift = float(np.sqrt(((new - centroids) ** 2).sum(axis=1)).max())
        centroids = new
        log.debug("lloyd iter %d objective %.6g shift %.3g", it, history[-1], shift)
        if shift < tol:
            break
    return centroids, history


def kmeans_train(
    ds: DescriptorSet | np.ndarray,
    k: int,
    seed: int = 0,
    max_iters: int = 100,
    tol: float = 1e-4,
    return_history: bool = False,
):
    """k-means++ seeded Lloyd clustering of all descriptors."""
    x = np.asarray(ds.data if isinstance(ds, DescriptorSet) else ds, dtype=np.float64)
    if k < 1:
        raise DataError("k must be positive")
    if x.shape[0] < k:
        raise DataError(f"need at least k={k} descriptors, got {x.shape[0]}")
    rng = np.random.default_rng(seed)
    seeds = kmeanspp_init(x, k, rng)
    centroids, history = lloyd(x, x[seeds], max_iters=max_iters, tol=tol)
    cb = Codebook(centroids)
    return (cb, history) if return_history else cb


def quantize(cb: Codebook, ds: DescriptorSet) -> list[np.ndarray]:
    """Nearest-centroid word index of every descriptor, grouped per image."""
    labels = quantize_flat(cb, ds)
    off = ds.offsets
    return [labels[off[i]:off[i + 1]] for i in range(len(ds))]


def quantize_flat(cb: Codebook, ds: DescriptorSet) -> np.ndarray:
    if ds.dim != cb.dim:
        raise DimensionError(f"descriptors have D={ds.dim}, codebook has D={cb.dim}")
    return nearest(ds.data, cb.centroids)[0]


def centroids_from_labels(ds: DescriptorSet | np.ndarray, labels: Sequence[int], k: int) -> Codebook:
    """Descriptor-space mean of every label group.

    A label with no members gets the global mean and a warning.
    """
    x = np.asarray(ds.data if isinstance(ds, DescriptorSet) else ds, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if labels.shape != (x.shape[0],):
        raise DataError(f"expected {x.shape[0]} labels, got {labels.size}")
    if labels.size and (labels.min() < 0 or labels.max() >= k):
        raise DataError(f"labels must lie in [0, {k})")
    if x.shape[0] == 0:
        raise DataError("no descriptors to average")
    counts = np.bincount(labels, minlength=k)
    sums = np.zeros((k, x.shape[1]))
    np.add.at(sums, labels, x)
    centroids = np.empty_like(sums)
    filled = counts > 0
    centroids[filled] = sums[filled] / counts[filled, None]
    if not filled.all():
        missing = np.flatnonzero(~filled)
        warnings.warn(f"labels {missing.tolist()} have no members; using the global mean", stacklevel=2)
        centroids[~filled] = x.mean(axis=0)
    return Codebook(centroids)


def build_bow(cb: Codebook, ds: DescriptorSet) -> BowMatrix:
    labels = quantize_flat(cb, ds)
    rows = ds.image_index()
    counts = np.zeros((len(ds), cb.size), dtype=np.int64)
    np.add.at(counts, (rows, labels), 1)
    return BowMatrix(counts, ds.image_ids)


def save_codebook(cb: Codebook, path) -> None:
    _write_bytes(path, CBK_MAGIC + struct.pack("<II", cb.size, cb.dim) + _le(cb.centroids, "f8"))


def load_codebook(path) -> Codebook:
    r = _Reader(_read_bytes(path), f"CBK1 file {path}")
    r.magic(CBK_MAGIC)
    k, d = r.unpack("II")
    c = r.array("f8", k * d).reshape(k, d)
    r.finish()
    return Codebook(c)


def save_bow(bow: BowMatrix, path) -> None:
    if bow.counts.size and bow.counts.max() > 0xFFFFFFFF:
        raise DataError("count exceeds u32")
    head = BOW_MAGIC + struct.pack("<II", bow.n_images, bow.vocab_size)
    _write_bytes(path, head + _le(bow.counts, "u4"))


def load_bow(path) -> BowMatrix:
    r = _Reader(_read_bytes(path), f"BOW1 file {path}")
    r.magic(BOW_MAGIC)
    m, c = r.unpack("II")
    counts = r.array("u4", m * c).reshape(m, c)
    r.finish()
    return BowMatrix(counts.astype(np.int64))
