"""In-memory end-to-end run: codebook -> BoW -> Chow-Liu tree -> FAB-MAP -> eval.

Mirrors the CLI stages without touching the filesystem, for demos and checks.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import cae, chowliu, codebook, evaluation, fabmap
from .dataio import DescriptorSet
from .errors import ConfigError

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class PipelineConfig:
    method: str = "kmeans"
    k: int = 16
    seed: int = 0
    cae: cae.TrainConfig = field(default_factory=lambda: cae.TrainConfig(epochs=5))
    fabmap: fabmap.FabmapParams = field(default_factory=fabmap.FabmapParams)
    p_obs: float = 0.39

    def __post_init__(self):
        if self.method not in ("kmeans", "cae"):
            raise ConfigError(f"method must be 'kmeans' or 'cae', got {self.method!r}")


@dataclass
class PipelineResult:
    codebook: codebook.Codebook
    tree: chowliu.ChowLiuTree
    confusion: evaluation.ConfusionMatrix
    decisions: list[fabmap.Decision]
    matches: list[fabmap.MatchResult]
    loss_history: list[float]


def train_codebook(train: DescriptorSet, cfg: PipelineConfig) -> tuple[codebook.Codebook, list[float]]:
    if cfg.method == "kmeans":
        return codebook.kmeans_train(train, cfg.k, seed=cfg.seed), []
    normed, _ = cae.normalize_descriptors(train)
    model = cae.init_cae(train.dim, seed=cfg.seed)
    model, history = cae.train_cae(model, normed, cfg.cae)
    labels = cae.ae_labels(model, normed, cfg.k, seed=cfg.seed)
    return codebook.centroids_from_labels(train, labels, cfg.k), history


def run(train: DescriptorSet, test: DescriptorSet, cfg: PipelineConfig) -> PipelineResult:
    cb, history = train_codebook(train, cfg)
    tree = chowliu.learn_cltree(codebook.build_bow(cb, train))
    dt = chowliu.precompute_d(tree, chowliu.DetectorModel.from_p(cfg.p_obs))
    matches: list[fabmap.MatchResult] = []
    cm, decisions = fabmap.run_sequence(codebook.build_bow(cb, test), tree, dt, cfg.fabmap, matches)
    log.info("%s: %s", cfg.method, ",".join(d.decision for d in decisions))
    return PipelineResult(cb, tree, cm, decisions, matches, history)


def score(result: PipelineResult, gt: np.ndarray, threshold: float) -> evaluation.SweepRow:
    (row,) = evaluation.sweep(result.confusion, gt, [threshold])
    return row
