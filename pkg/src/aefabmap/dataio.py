"""Descriptor ingestion, PCA and the small binary/CSV formats used between stages.

All binary formats are little-endian and start with a 4-byte magic.
"""
from __future__ import annotations

import csv
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from .errors import DataError, DimensionError, FormatError, IoError

DSC_MAGIC = b"DSC1"
DSC_VERSION = 1
PCA_MAGIC = b"PCA1"

_DSC_HEADER = struct.Struct("<4sIII")


@dataclass(frozen=True, eq=False)
class DescriptorSet:
    """Descriptors of an ordered list of images, stored stacked.

    ``data`` holds all N descriptors row-wise; ``counts[i]`` is how many of
    them belong to image ``i`` (rows are in image order).
    """

    image_ids: tuple[str, ...]
    data: np.ndarray
    counts: np.ndarray

    def __post_init__(self):
        data = np.asarray(self.data)
        counts = np.asarray(self.counts, dtype=np.int64)
        if data.ndim != 2:
            raise DimensionError(f"descriptor matrix must be 2-d, got shape {data.shape}")
        if counts.shape != (len(self.image_ids),):
            raise DataError("one descriptor count per image is required")
        if np.any(counts < 0) or counts.sum() != data.shape[0]:
            raise DataError(
                f"counts sum to {counts.sum()} but there are {data.shape[0]} descriptors"
            )
        if not np.all(np.isfinite(data)):
            raise DataError("descriptors contain NaN or Inf")
        data.setflags(write=False)
        counts.setflags(write=False)
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "counts", counts)
        object.__setattr__(self, "image_ids", tuple(self.image_ids))

    @classmethod
    def from_groups(
        cls, image_ids: Sequence[str], groups: Sequence[np.ndarray], dim: int, dtype=np.float32
    ) -> "DescriptorSet":
        if len(image_ids) != len(groups):
            raise DataError("image_ids and groups differ in length")
        mats = []
        for g in groups:
            g = np.asarray(g, dtype=dtype).reshape(-1, dim) if np.size(g) else np.empty((0, dim), dtype)
            mats.append(g)
        data = np.concatenate(mats, axis=0) if mats else np.empty((0, dim), dtype)
        return cls(tuple(image_ids), data, np.array([m.shape[0] for m in mats], dtype=np.int64))

    @property
    def dim(self) -> int:
        return self.data.shape[1]

    @property
    def n_descriptors(self) -> int:
        return self.data.shape[0]

    @property
    def offsets(self) -> np.ndarray:
        return np.concatenate([[0], np.cumsum(self.counts)])

    def __len__(self) -> int:
        return len(self.image_ids)

    def image(self, i: int) -> np.ndarray:
        off = self.offsets
        return self.data[off[i]:off[i + 1]]

    def __iter__(self) -> Iterator[tuple[str, np.ndarray]]:
        off = self.offsets
        for i, image_id in enumerate(self.image_ids):
            yield image_id, self.data[off[i]:off[i + 1]]

    def image_index(self) -> np.ndarray:
        """Image number of every descriptor row."""
        return np.repeat(np.arange(len(self)), self.counts)

    def with_data(self, data: np.ndarray) -> "DescriptorSet":
        """Same grouping, new descriptor rows (any width)."""
        return DescriptorSet(self.image_ids, data, self.counts)

    def subset(self, images: Sequence[int]) -> "DescriptorSet":
        return DescriptorSet.from_groups(
            [self.image_ids[i] for i in images],
            [self.image(i) for i in images],
            self.dim,
            dtype=self.data.dtype,
        )


def _read_bytes(path) -> bytes:
    try:
        return Path(path).read_bytes()
    except OSError as exc:
        raise FormatError(f"cannot read {path}: {exc.strerror or exc}") from exc


def _write_bytes(path, payload: bytes) -> None:
    try:
        Path(path).write_bytes(payload)
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc.strerror or exc}") from exc


class _Reader:
    """Cursor over a byte buffer that raises FormatError on truncation."""

    def __init__(self, buf: bytes, what: str):
        self.buf = buf
        self.pos = 0
        self.what = what

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise FormatError(f"{self.what}: truncated payload at byte {self.pos}")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        s = struct.Struct("<" + fmt)
        return s.unpack(self.take(s.size))

    def array(self, dtype, count: int) -> np.ndarray:
        dt = np.dtype(dtype).newbyteorder("<")
        raw = self.take(dt.itemsize * count)
        return np.frombuffer(raw, dtype=dt).astype(dt.newbyteorder("="))

    def magic(self, expected: bytes) -> None:
        got = self.take(4)
        if got != expected:
            raise FormatError(f"{self.what}: bad magic {got!r}, expected {expected!r}")

    def finish(self) -> None:
        if self.pos != len(self.buf):
            raise FormatError(f"{self.what}: {len(self.buf) - self.pos} trailing bytes")


def _le(arr: np.ndarray, dtype) -> bytes:
    return np.ascontiguousarray(arr, dtype=np.dtype(dtype).newbyteorder("<")).tobytes()


def save_descriptors(ds: DescriptorSet, path) -> None:
    """Write ``ds`` as DSC1. Values are stored as float32."""
    parts = [_DSC_HEADER.pack(DSC_MAGIC, DSC_VERSION, len(ds), ds.dim)]
    for image_id, desc in ds:
        raw_id = image_id.encode("utf-8")
        if len(raw_id) > 0xFFFF:
            raise DataError(f"image id too long ({len(raw_id)} bytes)")
        parts.append(struct.pack("<H", len(raw_id)))
        parts.append(raw_id)
        parts.append(struct.pack("<I", desc.shape[0]))
        parts.append(_le(desc, np.float32))
    _write_bytes(path, b"".join(parts))


def load_descriptors(path) -> DescriptorSet:
    r = _Reader(_read_bytes(path), f"DSC1 file {path}")
    r.magic(DSC_MAGIC)
    version, n_images, dim = r.unpack("III")
    if version != DSC_VERSION:
        raise FormatError(f"DSC1 file {path}: unsupported version {version}")
    ids, groups = [], []
    for _ in range(n_images):
        (id_len,) = r.unpack("H")
        try:
            ids.append(r.take(id_len).decode("utf-8"))
        except UnicodeDecodeError as exc:
            raise FormatError(f"DSC1 file {path}: image id is not UTF-8") from exc
        (n,) = r.unpack("I")
        groups.append(r.array(np.float32, n * dim).reshape(n, dim))
    r.finish()
    return DescriptorSet.from_groups(ids, groups, dim)


@dataclass(frozen=True, eq=False)
class PcaModel:
    mean: np.ndarray
    basis: np.ndarray
    explained_variance: np.ndarray

    @property
    def in_dim(self) -> int:
        return self.basis.shape[0]

    @property
    def out_dim(self) -> int:
        return self.basis.shape[1]

    def transform(self, x: np.ndarray) -> np.ndarray:
        return (np.asarray(x, dtype=np.float64) - self.mean) @ self.basis

    def inverse_transform(self, y: np.ndarray) -> np.ndarray:
        return np.asarray(y, dtype=np.float64) @ self.basis.T + self.mean


def fit_pca(ds: DescriptorSet, k: int) -> PcaModel:
    """Top-``k`` principal directions of the stacked descriptor rows.

    Each basis column is sign-fixed so its largest-magnitude entry is positive.
    """
    if k < 1 or k > ds.dim:
        raise DimensionError(f"PCA dimension {k} must lie in [1, {ds.dim}]")
    if ds.n_descriptors < 2:
        raise DataError("PCA needs at least 2 descriptors")
    x = ds.data.astype(np.float64)
    mean = x.mean(axis=0)
    cov = np.cov(x, rowvar=False, ddof=1).reshape(ds.dim, ds.dim)
    evals, evecs = np.linalg.eigh(cov)
    order = np.argsort(evals, kind="stable")[::-1][:k]
    basis = evecs[:, order]
    pivot = np.argmax(np.abs(basis), axis=0)
    basis = basis * np.sign(basis[pivot, np.arange(k)])
    return PcaModel(mean, np.ascontiguousarray(basis), np.clip(evals[order], 0.0, None))


def apply_pca(model: PcaModel, ds: DescriptorSet) -> DescriptorSet:
    if ds.dim != model.in_dim:
        raise DimensionError(f"descriptors have D={ds.dim}, PCA expects {model.in_dim}")
    return ds.with_data(model.transform(ds.data))


def save_pca(model: PcaModel, path) -> None:
    head = PCA_MAGIC + struct.pack("<II", model.in_dim, model.out_dim)
    body = _le(model.mean, "f8") + _le(model.basis, "f8") + _le(model.explained_variance, "f8")
    _write_bytes(path, head + body)


def load_pca(path) -> PcaModel:
    r = _Reader(_read_bytes(path), f"PCA1 file {path}")
    r.magic(PCA_MAGIC)
    d, k = r.unpack("II")
    mean = r.array("f8", d)
    basis = r.array("f8", d * k).reshape(d, k)
    var = r.array("f8", k)
    r.finish()
    return PcaModel(mean, basis, var)


def load_ground_truth(path) -> np.ndarray:
    """Square 0/1 CSV (no header) as an int8 matrix."""
    try:
        with open(path, newline="") as fh:
            rows = [row for row in csv.reader(fh) if row]
    except OSError as exc:
        raise FormatError(f"cannot read {path}: {exc.strerror or exc}") from exc
    m = len(rows)
    out = np.zeros((m, m), dtype=np.int8)
    for i, row in enumerate(rows):
        if len(row) != m:
            raise FormatError(
                f"ground truth {path}: row {i} has {len(row)} columns, expected {m} (square)"
            )
        for j, cell in enumerate(row):
            try:
                v = float(cell)
            except ValueError as exc:
                raise FormatError(f"ground truth {path}: unparseable cell {cell!r}") from exc
            if v not in (0.0, 1.0):
                raise DataError(f"ground truth {path}: value {cell.strip()} at ({i},{j}) not in {{0,1}}")
            out[i, j] = int(v)
    return out


def save_matrix_csv(matrix: np.ndarray, path, fmt: str = "%.9g") -> None:
    try:
        np.savetxt(path, np.asarray(matrix), delimiter=",", fmt=fmt)
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc.strerror or exc}") from exc


def load_matrix_csv(path) -> np.ndarray:
    try:
        with open(path, newline="") as fh:
            rows = [row for row in csv.reader(fh) if row]
    except OSError as exc:
        raise FormatError(f"cannot read {path}: {exc.strerror or exc}") from exc
    widths = {len(r) for r in rows}
    if len(widths) > 1:
        raise FormatError(f"{path}: ragged rows")
    try:
        mat = np.array([[float(c) for c in r] for r in rows], dtype=np.float64)
    except ValueError as exc:
        raise FormatError(f"{path}: non-numeric cell") from exc
    return mat.reshape(len(rows), widths.pop() if widths else 0)
