"""Cosine-similarity baseline over BoW count histograms."""
from __future__ import annotations

import numpy as np

from .codebook import BowMatrix
from .evaluation import ConfusionMatrix


def cosine_matrix(counts: np.ndarray) -> np.ndarray:
    c = np.asarray(counts, dtype=np.float64)
    norms = np.sqrt(np.einsum("ij,ij->i", c, c))
    unit = np.divide(c, norms[:, None], out=np.zeros_like(c), where=norms[:, None] > 0)
    sim = unit @ unit.T
    sim = 0.5 * (sim + sim.T)
    nz = norms > 0
    sim[np.diag_indices_from(sim)] = np.where(nz, 1.0, 0.0)
    return np.clip(sim, 0.0, 1.0)


def cosine_confusion(bow: BowMatrix) -> ConfusionMatrix:
    """Pairwise cosine similarity of count rows; zero rows score 0 against everything."""
    return ConfusionMatrix(cosine_matrix(bow.counts))
