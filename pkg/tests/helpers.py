"""Shared fixtures-as-functions for the test modules."""
import numpy as np

from aefabmap.chowliu import ChowLiuTree

# Words 0-3 form place A and hang off words 4-7, which form place B.
# A-words are rare and almost never fire without their parent, so seeing one
# with the parent absent is strong evidence for a place that contains it.
PLACE_A = np.array([1, 1, 1, 1, 0, 0, 0, 0], dtype=np.uint8)
PLACE_B = 1 - PLACE_A


def two_place_tree() -> ChowLiuTree:
    return ChowLiuTree(
        parent=[4, 5, 6, 7, -1, 4, 4, 4],
        p_marg=[0.02] * 4 + [0.3] * 4,
        p_given_parent1=[0.9] * 4 + [0.3, 0.5, 0.5, 0.5],
        p_given_parent0=[0.01] * 4 + [0.3] * 4,
    )


def random_parents(rng, n):
    """Parent array of a uniformly relabelled random recursive tree."""
    parent = np.full(n, -1)
    for q in range(1, n):
        parent[q] = rng.integers(q)
    perm = rng.permutation(n)
    inv = np.argsort(perm)
    return np.array([-1 if parent[inv[q]] < 0 else perm[parent[inv[q]]] for q in range(n)])


def random_tree(rng, n, lo=0.01, hi=0.99) -> ChowLiuTree:
    return ChowLiuTree(
        random_parents(rng, n), rng.uniform(lo, hi, n), rng.uniform(lo, hi, n), rng.uniform(lo, hi, n)
    )
