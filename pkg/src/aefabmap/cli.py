"""Command-line pipeline: codebook -> BoW -> Chow-Liu tree -> FAB-MAP or cosine run -> eval.

Exit codes: 0 success, 2 usage/config/format error, 3 data error, 4 numeric error.
"""
from __future__ import annotations

import argparse
import contextlib
import csv
import logging
import sys
from pathlib import Path


from . import bowsim, cae, chowliu, codebook, dataio, evaluation, fabmap
from .errors import AefabmapError, ConfigError, IoError

log = logging.getLogger("aefabmap")


class StageError(Exception):
    def __init__(self, stage: str, exc: AefabmapError):
        super().__init__(f"{stage}: {type(exc).__name__}: {exc}")
        self.exit_code = exc.exit_code


@contextlib.contextmanager
def stage(name: str):
    try:
        yield
    except AefabmapError as exc:
        raise StageError(name, exc) from exc


def read_config(path) -> dict[str, str]:
    """``key = value`` lines; ``#`` starts a comment. Keys use flag names without dashes."""
    out = {}
    try:
        lines = Path(path).read_text().splitlines()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror or exc}") from exc
    for n, line in enumerate(lines, 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{n}: expected key=value")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key.replace("-", "_")] = value
    return out


def _load_descriptors(path, pca_path=None):
    with stage("input"):
        ds = dataio.load_descriptors(path)
        if pca_path:
            ds = dataio.apply_pca(dataio.load_pca(pca_path), ds)
    return ds


def cmd_train_codebook(args) -> int:
    with stage("input"):
        ds = dataio.load_descriptors(args.input)
    out = Path(args.out)
    if args.pca_dim:
        with stage("pca"):
            pca = dataio.fit_pca(ds, args.pca_dim)
            ds = dataio.apply_pca(pca, ds)
            dataio.save_pca(pca, args.out_pca or out.with_suffix(".pca"))
    final_loss = None
    with stage(args.method):
        if args.method == "kmeans":
            cb = codebook.kmeans_train(ds, args.k, seed=args.seed, max_iters=args.max_iters, tol=args.tol)
        else:
            normed, _ = cae.normalize_descriptors(ds)
            model = cae.init_cae(ds.dim, seed=args.seed)
            cfg = cae.TrainConfig(epochs=args.epochs, batch_size=args.batch, learning_rate=args.lr, seed=args.seed)
            model, history = cae.train_cae(model, normed, cfg)
            labels = cae.ae_labels(model, normed, args.k, seed=args.seed)
            cb = codebook.centroids_from_labels(ds, labels, args.k)
            cae.save_cae(model, args.out_model or out.with_suffix(".cae"))
            cae.save_loss_history(history, args.out_loss or out.with_suffix(".loss.csv"))
            final_loss = history[-1] if history else None
    with stage("output"):
        codebook.save_codebook(cb, out)
    loss_txt = "n/a" if final_loss is None else f"{final_loss:.6f}"
    print(f"N={ds.n_descriptors} D={ds.dim} k={cb.size} method={args.method} final_loss={loss_txt}")
    return 0


def cmd_build_bow(args) -> int:
    ds = _load_descriptors(args.descriptors, args.pca)
    with stage("codebook"):
        cb = codebook.load_codebook(args.codebook)
        bow = codebook.build_bow(cb, ds)
    with stage("output"):
        codebook.save_bow(bow, args.out)
    print(f"images={bow.n_images} words={bow.vocab_size}")
    return 0


def cmd_learn_tree(args) -> int:
    with stage("input"):
        bow = codebook.load_bow(args.bow)
    with stage("chowliu"):
        tree = chowliu.learn_cltree(bow)
        dt = chowliu.precompute_d(tree, chowliu.DetectorModel.from_p(args.p_obs))
    with stage("output"):
        chowliu.save_cltree(tree, args.out)
        if args.out_dtable:
            chowliu.save_dtable(dt, args.out_dtable)
    print(f"words={tree.size} edges={len(tree.edges())}")
    return 0


def write_decisions(decisions, path) -> None:
    try:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["image_id", "decision", "matched_location", "posterior"])
            for d in decisions:
                w.writerow([d.image_id, d.decision, d.matched_location, f"{d.posterior:.9g}"])
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc.strerror or exc}") from exc


def cmd_run_fabmap(args) -> int:
    ds = _load_descriptors(args.test_descriptors, args.pca)
    with stage("input"):
        cb = codebook.load_codebook(args.codebook)
        train_bow = codebook.load_bow(args.train_bow)
        tree = chowliu.load_cltree(args.cltree) if args.cltree else None
    with stage("config"):
        sizes = {"codebook": cb.size, "train-bow": train_bow.vocab_size}
        if tree is not None:
            sizes["cltree"] = tree.size
        if len(set(sizes.values())) > 1:
            raise ConfigError("vocabulary sizes disagree: " + ", ".join(f"{k}={v}" for k, v in sizes.items()))
        params = fabmap.FabmapParams(args.threshold, args.p_new)
    with stage("fabmap"):
        if tree is None:
            tree = chowliu.learn_cltree(train_bow)
        dt = chowliu.precompute_d(tree, chowliu.DetectorModel.from_p(args.p_obs))
        bow = codebook.build_bow(cb, ds)
        cm, decisions = fabmap.run_sequence(bow, tree, dt, params)
    with stage("output"):
        dataio.save_matrix_csv(cm.scores, args.out_confusion)
        write_decisions(decisions, args.out_decisions)
    loops = sum(d.decision == "loop" for d in decisions)
    print(f"images={len(decisions)} loops={loops} locations={len(decisions) - loops}")
    return 0


def cmd_run_bow(args) -> int:
    ds = _load_descriptors(args.test_descriptors, args.pca)
    with stage("bowsim"):
        cb = codebook.load_codebook(args.codebook)
        cm = bowsim.cosine_confusion(codebook.build_bow(cb, ds))
    with stage("output"):
        dataio.save_matrix_csv(cm.scores, args.out_confusion)
    print(f"images={cm.size}")
    return 0


def cmd_eval(args) -> int:
    with stage("input"):
        scores = dataio.load_matrix_csv(args.confusion)
        gt = dataio.load_ground_truth(args.ground_truth)
    with stage("eval"):
        thresholds = evaluation.parse_thresholds(args.thresholds)
        m = scores.shape[0]
        mask_fn = evaluation.causal_mask if args.mask == "causal" else evaluation.offdiag_mask
        cm = evaluation.ConfusionMatrix(scores, mask_fn(m, args.guard))
        rows = evaluation.sweep(cm, gt, thresholds)
    with stage("output"):
        if args.out:
            evaluation.write_sweep_csv(rows, args.out)
    for r in rows:
        if r.defined:
            print(f"threshold={r.threshold:g} recall={r.recall:.4f} accuracy={r.accuracy:.4f}")
        else:
            print(f"threshold={r.threshold:g} undefined (tp={r.tp} predicted={r.predicted_positives} positives={r.gt_positives})")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="aefabmap", description=__doc__.splitlines()[0])
    p.add_argument("--config", help="key=value file; explicit flags override it")
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("train-codebook", help="build a vocabulary with k-means++ or the CAE")
    s.add_argument("--input")
    s.add_argument("--method", choices=["kmeans", "cae"], default="kmeans")
    s.add_argument("--k", type=int, default=1024)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--pca-dim", type=int, default=0, help="0 keeps the raw descriptors")
    s.add_argument("--out")
    s.add_argument("--out-pca")
    s.add_argument("--out-model")
    s.add_argument("--out-loss")
    s.add_argument("--max-iters", type=int, default=100)
    s.add_argument("--tol", type=float, default=1e-4)
    s.add_argument("--epochs", type=int, default=10)
    s.add_argument("--batch", type=int, default=64)
    s.add_argument("--lr", type=float, default=1e-3)
    s.set_defaults(func=cmd_train_codebook, required=("input", "out"))

    s = sub.add_parser("build-bow", help="quantize descriptors into a BOW1 file")
    s.add_argument("--descriptors")
    s.add_argument("--codebook")
    s.add_argument("--pca")
    s.add_argument("--out")
    s.set_defaults(func=cmd_build_bow, required=("descriptors", "codebook", "out"))

    s = sub.add_parser("learn-tree", help="learn the Chow-Liu tree from a training BoW")
    s.add_argument("--bow")
    s.add_argument("--out")
    s.add_argument("--out-dtable")
    s.add_argument("--p-obs", type=float, default=0.39)
    s.set_defaults(func=cmd_learn_tree, required=("bow", "out"))

    s = sub.add_parser("run-fabmap", help="sequential loop-closure detection")
    s.add_argument("--train-bow")
    s.add_argument("--test-descriptors")
    s.add_argument("--codebook")
    s.add_argument("--cltree", help="learned from --train-bow when omitted")
    s.add_argument("--pca")
    s.add_argument("--threshold", type=float, default=0.999)
    s.add_argument("--p-new", type=float, default=0.9)
    s.add_argument("--p-obs", type=float, default=0.39)
    s.add_argument("--out-confusion")
    s.add_argument("--out-decisions")
    s.set_defaults(
        func=cmd_run_fabmap,
        required=("train_bow", "test_descriptors", "codebook", "out_confusion", "out_decisions"),
    )

    s = sub.add_parser("run-bow", help="cosine-similarity confusion matrix")
    s.add_argument("--test-descriptors")
    s.add_argument("--codebook")
    s.add_argument("--pca")
    s.add_argument("--out-confusion")
    s.set_defaults(func=cmd_run_bow, required=("test_descriptors", "codebook", "out_confusion"))

    s = sub.add_parser("eval", help="recall/accuracy of a confusion matrix")
    s.add_argument("--confusion")
    s.add_argument("--ground-truth")
    s.add_argument("--thresholds", default="0.999")
    s.add_argument("--guard", type=int, default=0)
    s.add_argument("--mask", choices=["causal", "offdiag"], default="causal")
    s.add_argument("--out")
    s.set_defaults(func=cmd_eval, required=("confusion", "ground_truth"))
    return p


def _subparser(parser: argparse.ArgumentParser, name: str) -> argparse.ArgumentParser:
    for action in parser._actions:
        if isinstance(action, argparse._SubParsersAction):
            return action.choices[name]
    raise KeyError(name)


def parse_args(argv) -> argparse.Namespace:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.config:
        cfg = read_config(args.config)
        sp = _subparser(parser, args.command)
        known = {a.dest: a for a in sp._actions}
        for key, value in cfg.items():
            if key not in known:
                raise ConfigError(f"{args.config}: unknown key {key!r} for {args.command}")
            action = known[key]
            sp.set_defaults(**{key: action.type(value) if action.type else value})
        args = parser.parse_args(argv)
    missing = [d for d in args.required if getattr(args, d) in (None, "")]
    if missing:
        raise ConfigError("missing required option(s): " + ", ".join("--" + m.replace("_", "-") for m in missing))
    return args


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        args = parse_args(argv)
    except AefabmapError as exc:
        print(f"config: {type(exc).__name__}: {exc}", file=sys.stderr)
        return exc.exit_code
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2),
        stream=sys.stderr,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except StageError as exc:
        print(str(exc), file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
