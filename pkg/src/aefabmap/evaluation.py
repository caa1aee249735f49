"""Recall / accuracy of a confusion matrix against image-level ground truth."""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .errors import ArgumentError, DimensionError, IoError, UndefinedMetric


def offdiag_mask(m: int, guard: int = 0) -> np.ndarray:
    """True where ``|i - j| > guard``."""
    i, j = np.indices((m, m))
    return np.abs(i - j) > guard


def causal_mask(m: int, guard: int = 0) -> np.ndarray:
    """True where ``i - j > guard`` (earlier images only)."""
    i, j = np.indices((m, m))
    return (i - j) > guard


@dataclass(frozen=True, eq=False)
class ConfusionMatrix:
    scores: np.ndarray
    mask: np.ndarray | None = None

    def __post_init__(self):
        s = np.asarray(self.scores, dtype=np.float64)
        if s.ndim != 2 or s.shape[0] != s.shape[1]:
            raise DimensionError(f"confusion matrix must be square, got shape {s.shape}")
        if not np.all(np.isfinite(s)):
            raise ArgumentError("confusion matrix has non-finite scores")
        mask = offdiag_mask(s.shape[0]) if self.mask is None else np.asarray(self.mask, dtype=bool)
        if mask.shape != s.shape:
            raise DimensionError("mask shape differs from score shape")
        mask = mask & ~np.eye(s.shape[0], dtype=bool)
        object.__setattr__(self, "scores", s)
        object.__setattr__(self, "mask", mask)

    @property
    def size(self) -> int:
        return self.scores.shape[0]

    def with_guard(self, guard: int) -> "ConfusionMatrix":
        """Additionally drop entries with ``|i - j| <= guard``."""
        return ConfusionMatrix(self.scores, self.mask & offdiag_mask(self.size, guard))


@dataclass(frozen=True)
class Counts:
    tp: int
    predicted: int
    positives: int


def _counts(cm: ConfusionMatrix, gt: np.ndarray, threshold: float) -> Counts:
    gt = np.asarray(gt)
    if gt.shape != cm.scores.shape:
        raise DimensionError(f"ground truth {gt.shape} vs confusion matrix {cm.scores.shape}")
    pred = (cm.scores > threshold) & cm.mask
    truth = (gt == 1) & cm.mask
    return Counts(int(np.count_nonzero(pred & truth)), int(np.count_nonzero(pred)), int(np.count_nonzero(truth)))


def recall(cm: ConfusionMatrix, gt: np.ndarray, threshold: float) -> float:
    c = _counts(cm, gt, threshold)
    if c.positives == 0:
        raise UndefinedMetric("recall undefined: no ground-truth positives under the mask")
    return c.tp / c.positives


def accuracy(cm: ConfusionMatrix, gt: np.ndarray, threshold: float) -> float:
    """Fraction of above-threshold entries that are true matches."""
    c = _counts(cm, gt, threshold)
    if c.predicted == 0:
        raise UndefinedMetric(f"accuracy undefined: no scores above {threshold}")
    return c.tp / c.predicted


@dataclass(frozen=True)
class SweepRow:
    threshold: float
    recall: float | None
    accuracy: float | None
    tp: int
    predicted_positives: int
    gt_positives: int

    @property
    def defined(self) -> bool:
        return self.recall is not None and self.accuracy is not None


def sweep(cm: ConfusionMatrix, gt: np.ndarray, thresholds) -> list[SweepRow]:
    """One row per threshold; an undefined metric is reported as ``None``."""
    thresholds = list(thresholds)
    if not thresholds:
        raise ArgumentError("sweep needs at least one threshold")
    rows = []
    for t in thresholds:
        c = _counts(cm, gt, t)
        rows.append(SweepRow(
            float(t),
            c.tp / c.positives if c.positives else None,
            c.tp / c.predicted if c.predicted else None,
            c.tp, c.predicted, c.positives,
        ))
    return rows


def parse_thresholds(spec: str) -> list[float]:
    """``"0.5"``, ``"0.1,0.5,0.9"`` or an inclusive ``"start:stop:step"`` range."""
    spec = spec.strip()
    if ":" in spec:
        try:
            start, stop, step = (float(p) for p in spec.split(":"))
        except ValueError as exc:
            raise ArgumentError(f"bad threshold range {spec!r}; expected start:stop:step") from exc
        if step <= 0 or stop < start:
            raise ArgumentError(f"bad threshold range {spec!r}")
        n = int(np.floor((stop - start) / step + 1e-6)) + 1
        return [round(start + i * step, 12) for i in range(n)]
    try:
        return [float(p) for p in spec.split(",") if p.strip()]
    except ValueError as exc:
        raise ArgumentError(f"bad threshold list {spec!r}") from exc


def write_sweep_csv(rows: list[SweepRow], path) -> None:
    def fmt(v):
        return "" if v is None else f"{v:.9g}"

    try:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["threshold", "recall", "accuracy", "tp", "predicted_positives", "gt_positives"])
            for r in rows:
                w.writerow([f"{r.threshold:.9g}", fmt(r.recall), fmt(r.accuracy), r.tp, r.predicted_positives, r.gt_positives])
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc.strerror or exc}") from exc
