"""Directional AE-vs-k-means benchmark on Lip6-style data (cosine BoW similarity).

With real data, pass a training DSC1 file, a test DSC1 file (at most 400 images)
and an image-level ground-truth CSV. Without them a synthetic sequence with
perceptual aliasing is generated. The check reports, for each vocabulary, the
best accuracy among thresholds reaching a common recall level.

    python scripts/lip6_benchmark.py --k 64 --epochs 5
    python scripts/lip6_benchmark.py --train train.dsc --test test.dsc --ground-truth gt.csv --pca-dim 64
"""
import argparse
import logging

import numpy as np

from aefabmap import bowsim, codebook, dataio, evaluation, pipeline, synthetic
from aefabmap.cae import TrainConfig

MAX_IMAGES = 400


def aliased_sequence(seed: int, n_pairs: int = 6, revisits: int = 3, noise: float = 0.3):
    """Pairs of twin places that share five of their six words, seen with one noisy descriptor per word."""
    scene = synthetic.make_scene(n_hubs=8, leaves_per_hub=4, dim=128, noise=noise, per_word=1, seed=seed)
    rng = np.random.default_rng(seed)
    leaves = [q for h in range(scene.n_hubs) for q in scene.leaves(h)]
    places = []
    for _ in range(n_pairs):
        words = rng.choice(leaves, size=7, replace=False).tolist()
        places += [sorted(words[:6]), sorted(words[1:])]
    visits = list(range(len(places))) * revisits
    train = synthetic.training_images(scene, 400, seed=seed + 1)
    test = synthetic.place_sequence(scene, places, visits, seed=seed + 2)
    return train, test, synthetic.revisit_ground_truth(visits)


def accuracy_at_recall(rows, target):
    reached = [r.accuracy for r in rows if r.defined and r.recall >= target]
    return max(reached) if reached else None


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--train")
    ap.add_argument("--test")
    ap.add_argument("--ground-truth")
    ap.add_argument("--pca-dim", type=int, default=0)
    ap.add_argument("--k", type=int, default=64)
    ap.add_argument("--epochs", type=int, default=5)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--guard", type=int, default=0)
    ap.add_argument("--noise", type=float, default=0.3, help="synthetic descriptor noise")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(name)s: %(message)s")

    if args.test:
        train = dataio.load_descriptors(args.train)
        test = dataio.load_descriptors(args.test)
        gt = dataio.load_ground_truth(args.ground_truth)
        if len(test) > MAX_IMAGES:
            test = test.subset(range(MAX_IMAGES))
            gt = gt[:MAX_IMAGES, :MAX_IMAGES]
        if args.pca_dim:
            pca = dataio.fit_pca(train, args.pca_dim)
            train, test = dataio.apply_pca(pca, train), dataio.apply_pca(pca, test)
    else:
        train, test, gt = aliased_sequence(args.seed, noise=args.noise)

    thresholds = np.round(np.linspace(0.0, 0.99, 100), 4)
    sweeps = {}
    for method in ("cae", "kmeans"):
        cfg = pipeline.PipelineConfig(method=method, k=args.k, seed=args.seed, cae=TrainConfig(epochs=args.epochs, seed=args.seed))
        cb, _ = pipeline.train_codebook(train, cfg)
        cm = bowsim.cosine_confusion(codebook.build_bow(cb, test)).with_guard(args.guard)
        sweeps[method] = evaluation.sweep(cm, gt, thresholds)

    target = min(max((r.recall or 0.0) for r in rows) for rows in sweeps.values())
    acc = {m: accuracy_at_recall(rows, target) for m, rows in sweeps.items()}
    print(f"images={len(test)} k={args.k} matched recall={target:.3f}")
    for m, a in acc.items():
        print(f"  {m:6s} accuracy={a if a is None else round(a, 4)}")
    if None not in acc.values():
        verdict = "holds" if acc["cae"] >= acc["kmeans"] else "does not hold"
        print(f"AE accuracy >= k-means accuracy at matched recall: {verdict}")


if __name__ == "__main__":
    main()
