"""Online FAB-MAP 2 style inference over a growing map of places.

Locations are binary word rows. Their log-likelihood under a query starts at
a per-location default (sum of ``d1`` over the location's words) and is then
corrected only for words touched by the query, through an inverted index.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from .chowliu import ChowLiuTree, DTable
from .codebook import BowMatrix
from .errors import ArgumentError, DataError, DimensionError, NumericError
from .evaluation import ConfusionMatrix, causal_mask

log = logging.getLogger(__name__)

NEW_PLACE = -1
PRIOR_FLOOR = 1e-12


@dataclass(frozen=True)
class FabmapParams:
    lcd_threshold: float = 0.999
    p_new_prior: float = 0.9

    def __post_init__(self):
        if not 0.0 < self.lcd_threshold <= 1.0:
            raise ArgumentError(f"lcd_threshold must lie in (0, 1], got {self.lcd_threshold}")
        if not 0.0 <= self.p_new_prior <= 1.0:
            raise ArgumentError(f"p_new_prior must lie in [0, 1], got {self.p_new_prior}")


@dataclass(frozen=True)
class MatchEntry:
    location: int
    loglik: float
    probability: float


@dataclass(frozen=True)
class MatchResult:
    query_index: int
    entries: tuple[MatchEntry, ...]

    @property
    def new_place(self) -> MatchEntry:
        return next(e for e in self.entries if e.location == NEW_PLACE)

    def location_probabilities(self) -> np.ndarray:
        return np.array([e.probability for e in self.entries if e.location != NEW_PLACE])

    def total_probability(self) -> float:
        return float(sum(e.probability for e in self.entries))


@dataclass(frozen=True)
class Decision:
    image_id: str
    decision: str  # "new" or "loop"
    matched_location: int
    posterior: float


def _as_row(row, size: int) -> np.ndarray:
    row = np.asarray(row)
    if row.shape != (size,):
        raise DimensionError(f"expected a word row of length {size}, got shape {row.shape}")
    return row > 0


class LocationMap:
    """Mapped places plus the per-word inverted index.

    Not thread-safe for writes: ``add_location`` needs exclusive access.
    """

    def __init__(self, tree: ChowLiuTree, dtable: DTable):
        if tree.size != dtable.size:
            raise DimensionError(f"tree has {tree.size} words, d-table has {dtable.size}")
        self.tree = tree
        self.dtable = dtable
        self.rows: list[np.ndarray] = []
        self.defaults: list[float] = []
        self.inverted_index: list[list[int]] = [[] for _ in range(tree.size)]

    @property
    def vocab_size(self) -> int:
        return self.tree.size

    def __len__(self) -> int:
        return len(self.rows)

    def add_location(self, bow_row) -> int:
        row = _as_row(bow_row, self.vocab_size)
        index = len(self.rows)
        words = np.flatnonzero(row)
        default = 0.0
        for q in words:
            default += self.dtable.d1[q]
            self.inverted_index[q].append(index)
        self.rows.append(row)
        self.defaults.append(default)
        return index

    def query_likelihoods(self, query) -> np.ndarray:
        """Log-likelihood of ``query`` at every mapped location (sparse update)."""
        z = _as_row(query, self.vocab_size)
        lik = np.array(self.defaults, dtype=np.float64)
        if not self.rows:
            return lik
        d2, d3, d4 = self.dtable.d2, self.dtable.d3, self.dtable.d4
        parent = self.tree.parent
        children = self.tree.children
        for q1 in np.flatnonzero(z):  # unique word ids, so each (word, location) once
            locs = self.inverted_index[q1]
            if locs:
                p = parent[q1]
                lik[locs] += d4[q1] if (p >= 0 and z[p]) else d3[q1]
            for c in children[q1]:
                if not z[c] and self.inverted_index[c]:
                    lik[self.inverted_index[c]] += d2[c]
        return lik


def dense_likelihood(tree: ChowLiuTree, dtable: DTable, location_bow, query) -> float:
    """Same quantity as ``LocationMap.query_likelihoods`` by a full pass over all words."""
    loc = _as_row(location_bow, tree.size)
    z = _as_row(query, tree.size)
    has_parent = tree.parent >= 0
    parent_seen = np.zeros(tree.size, dtype=bool)
    parent_seen[has_parent] = z[tree.parent[has_parent]]
    total = 0.0
    for q in range(tree.size):
        if not loc[q]:
            continue
        total += dtable.d1[q]
        if z[q]:
            total += dtable.d4[q] if parent_seen[q] else dtable.d3[q]
        elif parent_seen[q]:
            total += dtable.d2[q]
    return total


def average_place(tree: ChowLiuTree) -> np.ndarray:
    """Word row of the mean-field place: words with marginal >= 0.5."""
    return (tree.p_marg >= 0.5).astype(np.uint8)


def new_place_likelihood(tree: ChowLiuTree, dtable: DTable, query) -> float:
    return dense_likelihood(tree, dtable, average_place(tree), query)


def posterior(logliks, new_place_loglik: float, params: FabmapParams | None = None, query_index: int = 0) -> MatchResult:
    """Normalise location and new-place scores under the uniform-plus-new prior."""
    params = params or FabmapParams()
    ll = np.asarray(logliks, dtype=np.float64)
    if not (np.all(np.isfinite(ll)) and np.isfinite(new_place_loglik)):
        raise NumericError("posterior needs finite log-likelihoods")
    n = ll.size
    if n == 0:
        return MatchResult(query_index, (MatchEntry(NEW_PLACE, float(new_place_loglik), 1.0),))
    p_new = min(max(params.p_new_prior, PRIOR_FLOOR), 1.0 - PRIOR_FLOOR)
    scores = np.append(ll + np.log((1.0 - p_new) / n), new_place_loglik + np.log(p_new))
    probs = np.exp(scores - logsumexp(scores))
    entries = [MatchEntry(i, float(ll[i]), float(probs[i])) for i in range(n)]
    entries.append(MatchEntry(NEW_PLACE, float(new_place_loglik), float(probs[-1])))
    return MatchResult(query_index, tuple(entries))


def run_sequence(
    bow_test: BowMatrix,
    tree: ChowLiuTree,
    dtable: DTable,
    params: FabmapParams | None = None,
    matches: list | None = None,
) -> tuple[ConfusionMatrix, list[Decision]]:
    """Process test images in order, closing loops or adding new locations.

    Row ``i`` of the confusion matrix holds, for each earlier image ``j``, the
    posterior of the location ``j`` was added as or associated with.
    """
    params = params or FabmapParams()
    if bow_test.n_images == 0:
        raise DataError("run_sequence needs at least one test image")
    if bow_test.vocab_size != tree.size:
        raise DimensionError(f"test BoW has {bow_test.vocab_size} words, tree has {tree.size}")
    z_all = bow_test.binary
    m = bow_test.n_images
    scores = np.zeros((m, m))
    image_location = np.full(m, NEW_PLACE, dtype=np.int64)
    lmap = LocationMap(tree, dtable)
    decisions: list[Decision] = []
    for i in range(m):
        z = z_all[i]
        result = posterior(lmap.query_likelihoods(z), new_place_likelihood(tree, dtable, z), params, i)
        if matches is not None:
            matches.append(result)
        loc_probs = result.location_probabilities()
        if i:
            scores[i, :i] = loc_probs[image_location[:i]]
        best = int(np.argmax(loc_probs)) if loc_probs.size else NEW_PLACE
        if best != NEW_PLACE and loc_probs[best] > params.lcd_threshold:
            image_location[i] = best
            decisions.append(Decision(bow_test.image_ids[i], "loop", best, float(loc_probs[best])))
        else:
            image_location[i] = lmap.add_location(z)
            decisions.append(Decision(bow_test.image_ids[i], "new", NEW_PLACE, result.new_place.probability))
        log.debug("image %d: %s", i, decisions[-1].decision)
    return ConfusionMatrix(scores, causal_mask(m)), decisions
