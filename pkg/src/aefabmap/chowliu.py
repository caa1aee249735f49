"""Chow-Liu dependency tree over binary word variables and the d1..d4 log increments."""
from __future__ import annotations

import math
import struct
from dataclasses import dataclass

import numpy as np

from .codebook import BowMatrix
from .dataio import _le, _read_bytes, _Reader, _write_bytes
from .errors import ArgumentError, DataError, NumericError

CLT_MAGIC = b"CLT1"
DTB_MAGIC = b"DTB1"

PROB_FLOOR = 1e-6


@dataclass(frozen=True)
class DetectorModel:
    """Fixed word-detection constants (``p_obs + q_obs == 1``)."""

    p_obs: float = 0.39
    q_obs: float = 0.61

    def __post_init__(self):
        if not (0.0 < self.p_obs < 1.0 and 0.0 < self.q_obs < 1.0):
            raise ArgumentError(f"detector constants must lie in (0, 1), got {self.p_obs}, {self.q_obs}")
        if abs(self.p_obs + self.q_obs - 1.0) > 1e-12:
            raise ArgumentError("detector constants must sum to 1")

    @classmethod
    def from_p(cls, p_obs: float) -> "DetectorModel":
        return cls(p_obs, 1.0 - p_obs)


@dataclass(frozen=True, eq=False)
class ChowLiuTree:
    parent: np.ndarray
    p_marg: np.ndarray
    p_given_parent1: np.ndarray
    p_given_parent0: np.ndarray

    def __post_init__(self):
        parent = np.asarray(self.parent, dtype=np.int64)
        n = parent.size
        roots = np.flatnonzero(parent < 0)
        if n == 0 or roots.size != 1:
            raise DataError("parent array must contain exactly one root")
        for name in ("p_marg", "p_given_parent1", "p_given_parent0"):
            arr = np.asarray(getattr(self, name), dtype=np.float64)
            if arr.shape != (n,):
                raise DataError(f"{name} must have length {n}")
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        # every node must reach the root without revisiting anything
        depth = np.full(n, -1)
        depth[roots[0]] = 0
        for q in range(n):
            path = []
            node = q
            while depth[node] < 0:
                path.append(node)
                node = parent[node]
                if node < 0 or node >= n or len(path) > n:
                    raise DataError("parent array does not encode a single tree")
            for i, p in enumerate(reversed(path)):
                depth[p] = depth[node] + i + 1
        parent.setflags(write=False)
        object.__setattr__(self, "parent", parent)
        children: list[list[int]] = [[] for _ in range(n)]
        for q in range(n):
            if parent[q] >= 0:
                children[parent[q]].append(q)
        object.__setattr__(self, "children", tuple(tuple(c) for c in children))

    @property
    def size(self) -> int:
        return self.parent.size

    @property
    def root(self) -> int:
        return int(np.flatnonzero(self.parent < 0)[0])

    def edges(self) -> list[tuple[int, int]]:
        return [(int(self.parent[q]), q) for q in range(self.size) if self.parent[q] >= 0]


@dataclass(frozen=True, eq=False)
class DTable:
    d1: np.ndarray
    d2: np.ndarray
    d3: np.ndarray
    d4: np.ndarray

    @property
    def size(self) -> int:
        return self.d1.size


def _joint_counts(z: np.ndarray):
    """Smoothed 2x2 joint tables for all word pairs (+1 pseudo-count per cell)."""
    z = z.astype(np.float64)
    m = z.shape[0]
    n11 = z.T @ z
    n1 = z.sum(axis=0)
    n10 = n1[:, None] - n11
    n01 = n1[None, :] - n11
    n00 = m - n11 - n10 - n01
    return n00 + 1, n01 + 1, n10 + 1, n11 + 1, m + 4.0


def mutual_information_matrix(bow: BowMatrix | np.ndarray) -> np.ndarray:
    """Pairwise MI (nats) between word-presence columns, Laplace-smoothed.

    The diagonal is set to zero.
    """
    z = bow.binary if isinstance(bow, BowMatrix) else (np.asarray(bow) > 0)
    if z.shape[0] < 1:
        raise DataError("mutual information needs at least one row")
    c00, c01, c10, c11, total = _joint_counts(z)
    pa1 = (c10 + c11) / total
    pb1 = (c01 + c11) / total
    mi = np.zeros_like(c00)
    for cell, pa, pb in ((c00, 1 - pa1, 1 - pb1), (c01, 1 - pa1, pb1), (c10, pa1, 1 - pb1), (c11, pa1, pb1)):
        p = cell / total
        mi += p * np.log(p / (pa * pb))
    mi = 0.5 * (mi + mi.T)
    np.fill_diagonal(mi, 0.0)
    return np.maximum(mi, 0.0)


def mutual_information(bow: BowMatrix | np.ndarray, q: int, r: int) -> float:
    if q == r:
        raise ArgumentError("mutual information of a word with itself is not defined here")
    z = bow.binary if isinstance(bow, BowMatrix) else (np.asarray(bow) > 0)
    return float(mutual_information_matrix(z[:, [q, r]])[0, 1])


def max_spanning_tree(weights: np.ndarray, root: int = 0) -> np.ndarray:
    """Prim's algorithm on a dense symmetric weight matrix; returns a parent array.

    Ties go to the smaller node index, both for the node added and for its parent.
    """
    n = weights.shape[0]
    parent = np.full(n, -1, dtype=np.int64)
    in_tree = np.zeros(n, dtype=bool)
    in_tree[root] = True
    best = weights[root].astype(np.float64).copy()
    best_parent = np.full(n, root, dtype=np.int64)
    for _ in range(n - 1):
        cand = np.where(in_tree, -np.inf, best)
        v = int(np.argmax(cand))
        parent[v] = best_parent[v]
        in_tree[v] = True
        w = weights[v]
        better = (~in_tree) & ((w > best) | ((w == best) & (v < best_parent)))
        best[better] = w[better]
        best_parent[better] = v
    return parent


def tree_estimates(z: np.ndarray, parent: np.ndarray):
    """Marginals and parent conditionals from the same smoothed pair tables (unclamped)."""
    z = np.asarray(z, dtype=np.float64)
    m = z.shape[0]
    n = z.shape[1]
    n1 = z.sum(axis=0)
    p_marg = (n1 + 2.0) / (m + 4.0)
    p1 = p_marg.copy()
    p0 = p_marg.copy()
    for q in range(n):
        pq = parent[q]
        if pq < 0:
            continue
        n11 = float(z[:, q] @ z[:, pq])
        n_par1 = n1[pq]
        n10 = n1[q] - n11
        p1[q] = (n11 + 1.0) / (n_par1 + 2.0)
        p0[q] = (n10 + 1.0) / (m - n_par1 + 2.0)
    return p_marg, p1, p0


def learn_cltree(bow: BowMatrix | np.ndarray, root: int = 0) -> ChowLiuTree:
    """Maximum-MI spanning tree rooted at word 0, with clamped probabilities."""
    z = bow.binary if isinstance(bow, BowMatrix) else (np.asarray(bow) > 0).astype(np.uint8)
    if z.shape[0] < 2:
        raise DataError(f"need at least 2 training rows, got {z.shape[0]}")
    if z.shape[1] < 1:
        raise DataError("empty vocabulary")
    parent = max_spanning_tree(mutual_information_matrix(z), root=root)
    p_marg, p1, p0 = tree_estimates(z, parent)
    lo, hi = PROB_FLOOR, 1.0 - PROB_FLOOR
    return ChowLiuTree(parent, np.clip(p_marg, lo, hi), np.clip(p1, lo, hi), np.clip(p0, lo, hi))


def _checked_log(value: np.ndarray, name: str) -> np.ndarray:
    bad = ~(np.isfinite(value) & (value > 0))
    if bad.any():
        q = int(np.flatnonzero(bad)[0])
        raise NumericError(f"word {q}: {name} = {value[q]!r} is not in (0, inf)")
    return np.log(value)


def precompute_d(tree: ChowLiuTree, det: DetectorModel | None = None) -> DTable:
    """Per-word log increments; d2..d4 are relative to the default d1."""
    det = det or DetectorModel()
    a, b = det.p_obs, det.q_obs  # 0.39, 0.61
    m = tree.p_marg
    c2 = tree.p_given_parent1
    c3 = tree.p_given_parent0
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        d1_star = ((1 - m) * b * (1 - c3)) / (m * a * (1 - c3) + (1 - m) * b * (1 - c3))
        d1 = _checked_log(d1_star, "d1*")

        d2_num = (m * b * (1 - c2)) / ((1 - m) * a * c2)
        d2_den = (m * b * c2**2 * a) / (((1 - m) * b * (1 - c2) + m * a * c2) * (1 - a * m))
        d2 = _checked_log(d2_num / (1 - d2_den), "d2_num / (1 - d2_den)") - d1

        d3_den = (b * m * (1 - m) * a * c3) / ((1 - m) * m * b * (1 - c3))
        d3_num = ((1 - m) * a * c3) / ((1 - m) * a * c3 + m * b * (1 - c3))
        d3 = _checked_log(d3_num / d3_den, "d3_num / d3_den") - d1

        d4_star = (m * b) / (1 - a * m)
        d4 = _checked_log(d4_star, "d4*") - d1
    return DTable(d1, d2, d3, d4)


def save_cltree(tree: ChowLiuTree, path) -> None:
    body = (
        _le(tree.parent, "i4")
        + _le(tree.p_marg, "f8")
        + _le(tree.p_given_parent1, "f8")
        + _le(tree.p_given_parent0, "f8")
    )
    _write_bytes(path, CLT_MAGIC + struct.pack("<I", tree.size) + body)


def load_cltree(path) -> ChowLiuTree:
    r = _Reader(_read_bytes(path), f"CLT1 file {path}")
    r.magic(CLT_MAGIC)
    (n,) = r.unpack("I")
    parent = r.array("i4", n).astype(np.int64)
    arrays = [r.array("f8", n) for _ in range(3)]
    r.finish()
    return ChowLiuTree(parent, *arrays)


def save_dtable(dt: DTable, path) -> None:
    body = b"".join(_le(a, "f8") for a in (dt.d1, dt.d2, dt.d3, dt.d4))
    _write_bytes(path, DTB_MAGIC + struct.pack("<I", dt.size) + body)


def load_dtable(path) -> DTable:
    r = _Reader(_read_bytes(path), f"DTB1 file {path}")
    r.magic(DTB_MAGIC)
    (n,) = r.unpack("I")
    arrays = [r.array("f8", n) for _ in range(4)]
    r.finish()
    return DTable(*arrays)


def tree_mutual_information(tree: ChowLiuTree | np.ndarray, mi: np.ndarray) -> float:
    parent = tree.parent if isinstance(tree, ChowLiuTree) else np.asarray(tree)
    return math.fsum(float(mi[p, q]) for q, p in enumerate(parent) if p >= 0)
