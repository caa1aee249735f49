"""Synthetic descriptor scenes for tests, demos and the benchmark script.

A scene has ``n_hubs`` hub words, each owning ``leaves_per_hub`` leaf words.
Training images show one hub plus a random subset of its leaves, so every
leaf depends strongly on its hub. Test places are built from leaf words only.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dataio import DescriptorSet


@dataclass(frozen=True, eq=False)
class Scene:
    prototypes: np.ndarray
    n_hubs: int
    leaves_per_hub: int
    noise: float = 0.02
    per_word: int = 4

    @property
    def n_words(self) -> int:
        return self.prototypes.shape[0]

    @property
    def dim(self) -> int:
        return self.prototypes.shape[1]

    def hub_word(self, h: int) -> int:
        return self.n_hubs * self.leaves_per_hub + h

    def leaves(self, h: int) -> list[int]:
        return list(range(h * self.leaves_per_hub, (h + 1) * self.leaves_per_hub))

    def image(self, words, rng: np.random.Generator) -> np.ndarray:
        """``per_word`` noisy copies of each word's prototype."""
        words = np.repeat(np.asarray(words, dtype=np.int64), self.per_word)
        x = self.prototypes[words] + rng.normal(scale=self.noise, size=(words.size, self.dim))
        return x


def make_scene(
    n_hubs: int = 4,
    leaves_per_hub: int = 3,
    dim: int = 128,
    noise: float = 0.02,
    per_word: int = 4,
    seed: int = 0,
) -> Scene:
    rng = np.random.default_rng(seed)
    n_words = n_hubs * (leaves_per_hub + 1)
    protos = rng.uniform(0.1, 0.9, size=(n_words, dim))
    return Scene(protos, n_hubs, leaves_per_hub, noise, per_word)


def training_images(scene: Scene, n_images: int, p_leaf: float = 0.2, seed: int = 1) -> DescriptorSet:
    rng = np.random.default_rng(seed)
    groups, ids = [], []
    for i in range(n_images):
        h = int(rng.integers(scene.n_hubs))
        leaves = [q for q in scene.leaves(h) if rng.random() < p_leaf]
        groups.append(scene.image([scene.hub_word(h)] + leaves, rng))
        ids.append(f"train{i:04d}")
    return DescriptorSet.from_groups(ids, groups, scene.dim, dtype=np.float64)


def place_sequence(scene: Scene, places: list[list[int]], visits: list[int], seed: int = 2) -> DescriptorSet:
    """One image per entry of ``visits``, each showing the words of that place."""
    rng = np.random.default_rng(seed)
    groups = [scene.image(places[p], rng) for p in visits]
    ids = [f"test{i:04d}_place{p}" for i, p in enumerate(visits)]
    return DescriptorSet.from_groups(ids, groups, scene.dim, dtype=np.float64)


def revisit_ground_truth(visits: list[int]) -> np.ndarray:
    v = np.asarray(visits)
    return (v[:, None] == v[None, :]).astype(np.int8)


def split_leaves(scene: Scene, n_places: int) -> list[list[int]]:
    """Partition all leaf words into ``n_places`` disjoint places of whole hubs."""
    hubs = np.array_split(np.arange(scene.n_hubs), n_places)
    return [[q for h in hs for q in scene.leaves(int(h))] for hs in hubs]
