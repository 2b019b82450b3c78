"""Command-line entry point: ``rsvae <subcommand> ...``.

Every subcommand writes CSV (or a binary container/checkpoint) and exits 0;
failures print one ``error: <Kind>: <message>`` line to stderr and exit 1.
Config files are plain ``key=value`` text, ``#`` starts a comment.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import os
import sys

import numpy as np

from . import datastore, harness, selection, synthoracle
from .cvae import CvaeConfig, generate_features, load_checkpoint, save_checkpoint
from .datastore import FeatureSet, SemanticTable, Split
from .errors import ContractError, RsvaeError

_SPLIT_NAMES = {"base": Split.BASE, "val": Split.VAL, "novel": Split.NOVEL}


def parse_kv(text: str) -> dict:
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ContractError(f"config line {lineno}: expected key=value")
        key, value = (part.strip() for part in line.split("=", 1))
        out[key] = value
    return out


def build_config(cls, values: dict, **defaults):
    """Instantiate dataclass ``cls`` from string values, coercing by field type."""
    kinds = {f.name: (f.type if isinstance(f.type, str) else f.type.__name__)
             for f in dataclasses.fields(cls)}
    kwargs = dict(defaults)
    for key, value in values.items():
        if key not in kinds:
            raise ContractError(f"unknown config key {key!r}")
        try:
            kwargs[key] = (float(value) if kinds[key] == "float"
                           else int(value) if kinds[key] == "int" else value)
        except ValueError:
            raise ContractError(f"bad value for {key}: {value!r}") from None
    return cls(**kwargs)


def read_config(path) -> dict:
    if path is None:
        return {}
    with open(path, encoding="utf-8") as f:
        return parse_kv(f.read())


def desk_cvae_config(fs: FeatureSet, table: SemanticTable, path=None) -> CvaeConfig:
    """CVAE config from a key=value file; dims come from the data when absent.

    Without a file, a small network (hidden 256, latent 8) is used so the
    pipeline runs in seconds on the synthetic benchmark.
    """
    values = read_config(path)
    defaults = {"feat_dim": fs.feat_dim, "sem_dim": table.sem_dim}
    if path is None:
        defaults.update(hidden_dim=256, latent_dim=8)
    return build_config(CvaeConfig, values, **defaults)


# -- raw ingest ---------------------------------------------------------------

def _read_raw_features(path):
    if path.endswith(".npz"):
        with np.load(path) as z:
            return np.asarray(z["features"], dtype=np.float32), np.asarray(z["labels"], dtype=np.int64)
    data = np.loadtxt(path, delimiter=",", ndmin=2)
    return data[:, 1:].astype(np.float32), data[:, 0].astype(np.int64)


def _read_raw_semantics(path, num_classes):
    if path.endswith(".npy"):
        emb = np.load(path)
    else:
        data = np.loadtxt(path, delimiter=",", ndmin=2)
        emb = np.empty((num_classes, data.shape[1] - 1))
        ids = data[:, 0].astype(np.int64)
        if sorted(ids.tolist()) != list(range(num_classes)):
            raise ContractError("semantics file must list every class id exactly once")
        emb[ids] = data[:, 1:]
    if emb.shape[0] != num_classes:
        raise ContractError(f"semantics has {emb.shape[0]} rows for {num_classes} classes")
    return emb.astype(np.float32)


def cmd_ingest(args):
    manifest = datastore.read_manifest(args.manifest)
    num_classes = len(manifest)
    if sorted(manifest) != list(range(num_classes)):
        raise ContractError("manifest class ids must be dense 0..C-1")
    splits, names = np.zeros(num_classes, dtype=np.uint8), {}
    for cid, entry in manifest.items():
        if isinstance(entry, tuple):
            name, split = entry
            if split not in _SPLIT_NAMES:
                raise ContractError(f"class {cid}: unknown split {split!r}")
            splits[cid] = _SPLIT_NAMES[split]
        else:
            name = entry
        names[cid] = name
    features, labels = _read_raw_features(args.features)
    fs = FeatureSet(features, labels, splits)
    table = SemanticTable(_read_raw_semantics(args.semantics, num_classes))
    datastore.save_features(fs, table, args.out)
    datastore.write_manifest(names, args.out + ".manifest")


def cmd_synth(args):
    cfg = build_config(synthoracle.SynthConfig, read_config(args.config))
    fs, table, truth = synthoracle.generate_synth(cfg)
    os.makedirs(args.out, exist_ok=True)
    datastore.save_features(fs, table, os.path.join(args.out, "data.fsf"))
    synthoracle.save_truth(truth, os.path.join(args.out, "truth.tru"))
    names = {c: f"{'base' if c < cfg.num_base_classes else 'novel'}_{c:03d}" for c in range(cfg.num_classes)}
    datastore.write_manifest(names, os.path.join(args.out, "data.fsf.manifest"))


def cmd_select(args):
    fs, _ = datastore.load_features(args.data)
    rng = np.random.default_rng(args.seed)
    results = selection.select_base(fs, args.threshold, args.alpha, args.score)
    rows = []
    for res in results:
        if args.method == "gaussian":
            picked = res.indices
        else:
            class_rows = fs.class_indices(res.class_id)
            m = args.count if args.count is not None else max(1, res.indices.size)
            x = fs.features[class_rows]
            local = (selection.herding_select(x, m) if args.method == "herding"
                     else selection.kmeans_select(x, m, rng))
            picked = np.sort(class_rows[local])
        rows.extend((int(i), res.class_id) for i in picked)
    harness.write_rows(args.out, ["index", "class_id"], rows)
    if args.stats:
        selection.write_selection_stats([(r.class_id, r.fraction_selected, r.threshold) for r in results],
                                        args.stats)


def _read_selection(path, fs):
    if path == "all":
        return harness.base_rows(fs)
    with open(path, newline="") as f:
        reader = csv.DictReader(f)
        if reader.fieldnames is None or "index" not in reader.fieldnames:
            raise ContractError(f"{path}: expected an 'index' column")
        rows = np.array([int(r["index"]) for r in reader], dtype=np.int64)
    if rows.size and (rows.min() < 0 or rows.max() >= fs.num_samples):
        raise ContractError(f"{path}: row index out of range")
    return rows


def cmd_train(args):
    fs, table = datastore.load_features(args.data)
    cfg = desk_cvae_config(fs, table, args.config)
    model, log = harness.train_on_rows(fs, table, _read_selection(args.selection, fs), cfg)
    save_checkpoint(model, args.out)
    if args.log:
        log.to_csv(args.log)


def cmd_generate(args):
    fs, table = datastore.load_features(args.data)
    model = load_checkpoint(args.model)
    gen = generate_features(model, table[args.class_id], args.count, np.random.default_rng(args.seed))
    out = FeatureSet(gen.astype(np.float32), np.full(args.count, args.class_id), fs.splits)
    datastore.save_features(out, table, args.out)


def cmd_eval(args):
    fs, table = datastore.load_features(args.data)
    model = load_checkpoint(args.model) if args.model else None
    cfg = harness.EvalConfig(way=args.way, shot=args.shot, queries=args.queries, episodes=args.episodes,
                             method=args.method, classifier=args.classifier, gen_count=args.gen_count,
                             seed=args.seed, metric=args.metric)
    harness.run_eval(fs, table, cfg, model, args.workers).to_csv(args.out)


def _thresholds(text):
    return [float(t) for t in text.split(",") if t.strip()]


def cmd_sweep(args):
    fs, table = datastore.load_features(args.data)
    cfg = desk_cvae_config(fs, table, args.config)
    rows = harness.threshold_sweep(fs, table, _thresholds(args.thresholds), cfg, args.episodes,
                                   args.seed, args.classifier, args.alpha, args.score,
                                   args.gen_count, args.workers)
    harness.write_sweep(rows, args.out)


def cmd_report(args):
    fs, table = datastore.load_features(args.data)
    if args.kind == "kde":
        model = load_checkpoint(args.model) if args.model else None
        cfg = harness.EvalConfig(shot=args.shot, episodes=args.episodes, method=args.method,
                                 gen_count=args.gen_count, seed=args.seed)
        dist = harness.prototype_distances(fs, table, cfg, model, args.workers)
        xs, dens = harness.distance_kde_report(dist, args.bandwidth, args.grid)
        harness.write_rows(args.out, ["x", "density"], zip(xs.tolist(), dens.tolist()))
    elif args.kind == "fidelity":
        if not args.truth:
            raise ContractError("report fidelity needs --truth")
        truth = synthoracle.load_truth(args.truth)
        cfg = desk_cvae_config(fs, table, args.config)
        pair = harness.train_svae_pair(fs, table, cfg, args.threshold, args.alpha, args.score)
        rows = harness.prototype_fidelity_study(fs, table, truth, pair, args.gen_count, args.seed)
        harness.write_rows(args.out, ["class_id", "d_all", "d_selected", "improvement"], rows)
    else:
        if not args.model or not args.bins:
            raise ContractError("report support-study needs --model and --bins")
        bins = [tuple(float(v) for v in b.split(":")) for b in args.bins.split(",")]
        rows = harness.support_representativeness_study(
            fs, table, load_checkpoint(args.model), bins, args.method, args.episodes, args.seed,
            args.gen_count, workers=args.workers)
        harness.write_rows(args.out, ["lo", "hi", "candidates", "baseline_acc", "method_acc",
                                      "baseline_designated_acc", "method_designated_acc"], rows)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="rsvae", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="write the planted synthetic benchmark")
    s.add_argument("--config")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("ingest", help="pack raw features + semantics into a container")
    s.add_argument("--features", required=True, help=".npz (features, labels) or CSV label,x1,...")
    s.add_argument("--semantics", required=True, help=".npy (classes x dim) or CSV class_id,a1,...")
    s.add_argument("--manifest", required=True, help="lines: class_id<TAB>name<TAB>base|val|novel")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_ingest)

    def selection_args(s):
        s.add_argument("--alpha", type=float, default=selection.DEFAULT_SHRINKAGE)
        s.add_argument("--score", choices=selection.SCORES, default="mode")

    s = sub.add_parser("select", help="pick training rows from the base classes")
    s.add_argument("--data", required=True)
    s.add_argument("--threshold", type=float, default=selection.DEFAULT_THRESHOLD)
    s.add_argument("--method", choices=("gaussian", "herding", "kmeans"), default="gaussian")
    s.add_argument("--count", type=int, help="per-class count for herding/kmeans "
                                             "(default: what the gaussian threshold keeps)")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--stats", help="also write class_id,fraction_selected,threshold CSV")
    s.add_argument("--out", required=True)
    selection_args(s)
    s.set_defaults(func=cmd_select)

    s = sub.add_parser("train", help="train a CVAE checkpoint")
    s.add_argument("--data", required=True)
    s.add_argument("--selection", default="all")
    s.add_argument("--config")
    s.add_argument("--log", help="write epoch,total,kl,recon CSV")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("generate", help="sample features for one class")
    s.add_argument("--model", required=True)
    s.add_argument("--data", required=True, help="container providing the semantic table")
    s.add_argument("--class", dest="class_id", type=int, required=True)
    s.add_argument("--count", type=int, required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_generate)

    def eval_args(s, with_shot=True):
        if with_shot:
            s.add_argument("--shot", type=int, default=1)
        s.add_argument("--episodes", type=int, default=2000)
        s.add_argument("--seed", type=int, default=0)
        s.add_argument("--gen-count", type=int, default=500)
        s.add_argument("--workers", type=int, default=1)

    s = sub.add_parser("eval", help="episodic evaluation")
    s.add_argument("--data", required=True)
    s.add_argument("--model")
    s.add_argument("--way", type=int, default=5)
    s.add_argument("--queries", type=int, default=15)
    s.add_argument("--method", choices=("baseline", "svae", "rsvae", "zeroshot"), default="baseline")
    s.add_argument("--classifier", choices=("proto", "1nn", "logreg", "svm"), default="proto")
    s.add_argument("--metric", choices=("euclidean", "cosine"), default="euclidean")
    s.add_argument("--out", required=True)
    eval_args(s)
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("sweep", help="threshold sweep (select, train, evaluate per threshold)")
    s.add_argument("--data", required=True)
    s.add_argument("--thresholds", default="0.5,0.6,0.7,0.8,0.9")
    s.add_argument("--config")
    s.add_argument("--classifier", choices=("proto", "1nn", "logreg", "svm"), default="proto")
    s.add_argument("--out", required=True)
    selection_args(s)
    eval_args(s, with_shot=False)
    s.set_defaults(func=cmd_sweep, episodes=500)

    s = sub.add_parser("report", help="kde | fidelity | support-study")
    s.add_argument("kind", choices=("kde", "fidelity", "support-study"))
    s.add_argument("--data", required=True)
    s.add_argument("--model")
    s.add_argument("--truth")
    s.add_argument("--config")
    s.add_argument("--method", choices=("baseline", "svae", "rsvae", "zeroshot"), default="svae")
    s.add_argument("--threshold", type=float, default=selection.DEFAULT_THRESHOLD)
    s.add_argument("--bins", help="lo:hi,lo:hi,... L2 distance bins")
    s.add_argument("--bandwidth", type=float)
    s.add_argument("--grid", type=int, default=256)
    s.add_argument("--out", required=True)
    selection_args(s)
    eval_args(s)
    s.set_defaults(func=cmd_report, episodes=200)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        args.func(args)
    except (RsvaeError, OSError, ValueError) as exc:
        message = " ".join(str(exc).split())
        print(f"error: {type(exc).__name__}: {message}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
