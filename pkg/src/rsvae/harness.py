"""Episodic evaluation and the analysis studies built on it.

Every episode draws from its own generator seeded with
``episode_seed(master_seed, index)``, so results do not depend on how
episodes are scheduled across workers.
"""

from __future__ import annotations

import csv
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .cvae import CvaeConfig, CvaeModel, TrainLog, generate_features, train
from .datastore import Episode, FeatureSet, SemanticTable, Split, sample_episode
from .errors import CapacityError, ContractError, RsvaeError
from .protoclass import (
    CLASSIFIERS, DEFAULT_GEN_COUNT, METHODS, build_task_model, default_weights, prototype_mean,
)
from .selection import DEFAULT_SHRINKAGE, select_base
from .synthoracle import PlantedTruth

_MASK64 = (1 << 64) - 1


def episode_seed(master_seed: int, index: int) -> int:
    """SplitMix64 finalizer applied to ``master_seed * 2^32 + index``."""
    z = ((int(master_seed) << 32) + int(index) + 0x9E3779B97F4A7C15) & _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


def ci95(values) -> tuple[float, float]:
    """Mean and normal-approximation 95% half-width ``1.96 * s / sqrt(n)``."""
    v = np.asarray(values, dtype=np.float64)
    if v.size == 0:
        raise CapacityError("ci95 of an empty list")
    if v.size == 1:
        return float(v[0]), 0.0
    return float(v.mean()), float(1.96 * v.std(ddof=1) / np.sqrt(v.size))


@dataclass
class EvalConfig:
    way: int = 5
    shot: int = 1
    queries: int = 15
    episodes: int = 2000
    method: str = "baseline"
    classifier: str = "proto"
    weights: tuple | None = None      # (w_g, w_s); None -> default_weights(shot)
    gen_count: int = DEFAULT_GEN_COUNT
    seed: int = 0
    metric: str = "euclidean"

    def __post_init__(self):
        if self.episodes < 1:
            raise ContractError("episodes must be >= 1")
        if self.method not in METHODS:
            raise ContractError(f"unknown method {self.method!r}")
        if self.classifier not in CLASSIFIERS:
            raise ContractError(f"unknown classifier {self.classifier!r}")
        if self.weights is not None:
            w_g, w_s = self.weights
            if abs(w_g + w_s - 1.0) > 1e-9:
                raise ContractError("weights must sum to 1")

    def resolved_weights(self) -> tuple[float, float]:
        return default_weights(self.shot) if self.weights is None else tuple(self.weights)


@dataclass
class EvalReport:
    accuracies: np.ndarray
    mean: float
    ci95: float
    config: EvalConfig

    def to_csv(self, path) -> None:
        """``episode,accuracy`` rows, then ``mean`` and ``ci95`` summary rows."""
        with open(path, "w", newline="") as f:
            w = csv.writer(f, lineterminator="\n")
            w.writerow(["episode", "accuracy"])
            for i, acc in enumerate(self.accuracies):
                w.writerow([i, repr(float(acc))])
            w.writerow(["mean", repr(self.mean)])
            w.writerow(["ci95", repr(self.ci95)])


def _map(fn, n, workers):
    if workers <= 1:
        return [fn(i) for i in range(n)]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, range(n)))


def _episode_accuracy(fs, semantics, model, config, episode, rng):
    task = build_task_model(fs, episode, config.method, config.classifier, model, semantics,
                            config.gen_count, config.resolved_weights(), rng, config.metric)
    pred = task.predict(fs.features[episode.query.ravel()])
    return float(np.mean(pred == episode.query_labels()))


def run_eval(fs: FeatureSet, semantics: SemanticTable | None, config: EvalConfig,
             model: CvaeModel | None = None, workers: int = 1) -> EvalReport:
    if config.method != "baseline" and model is None:
        raise ContractError(f"method {config.method!r} needs a trained model")

    def one(i):
        rng = np.random.default_rng(episode_seed(config.seed, i))
        try:
            ep = sample_episode(fs, config.way, config.shot, config.queries, rng)
            return _episode_accuracy(fs, semantics, model, config, ep, rng)
        except RsvaeError as exc:
            raise type(exc)(f"episode {i}: {exc}") from None

    accs = np.array(_map(one, config.episodes, workers))
    mean, half = ci95(accs)
    return EvalReport(accs, mean, half, config)


# -- training helpers --------------------------------------------------------

def base_rows(fs: FeatureSet) -> np.ndarray:
    return np.flatnonzero(np.isin(fs.labels, fs.classes(Split.BASE)))


def train_on_rows(fs: FeatureSet, semantics: SemanticTable, rows, config: CvaeConfig):
    """Fresh model (seeded by ``config.seed``) trained on the given rows."""
    rows = np.asarray(rows, dtype=np.int64)
    if rows.size == 0:
        raise ContractError("no training rows selected")
    model = CvaeModel(config)
    log = train(model, fs.features[rows], fs.labels[rows], semantics)
    return model, log


@dataclass
class PairedModels:
    """SVAE (all base data) and R-SVAE (selected base data), same seed."""

    svae: CvaeModel
    rsvae: CvaeModel
    svae_log: TrainLog
    rsvae_log: TrainLog
    selected_rows: np.ndarray
    fraction_kept: float
    threshold: float


def selected_rows(fs, threshold, alpha=DEFAULT_SHRINKAGE, score="mode") -> np.ndarray:
    picked = [r.indices for r in select_base(fs, threshold, alpha, score)]
    return np.sort(np.concatenate(picked)) if picked else np.empty(0, dtype=np.int64)


def train_svae_pair(fs: FeatureSet, semantics: SemanticTable, config: CvaeConfig,
                    threshold: float = 0.9, alpha: float = DEFAULT_SHRINKAGE,
                    score: str = "mode") -> PairedModels:
    all_rows = base_rows(fs)
    sel = selected_rows(fs, threshold, alpha, score)
    svae, svae_log = train_on_rows(fs, semantics, all_rows, config)
    rsvae, rsvae_log = train_on_rows(fs, semantics, sel, config)
    return PairedModels(svae, rsvae, svae_log, rsvae_log, sel, sel.size / all_rows.size, threshold)


# -- studies -----------------------------------------------------------------

@dataclass
class SweepRow:
    threshold: float
    fraction_kept: float
    acc_1shot: float
    acc_5shot: float


def threshold_sweep(fs: FeatureSet, semantics: SemanticTable, thresholds, config: CvaeConfig,
                    episodes: int = 500, seed: int = 0, classifier: str = "proto",
                    alpha: float = DEFAULT_SHRINKAGE, score: str = "mode",
                    gen_count: int = DEFAULT_GEN_COUNT, workers: int = 1) -> list[SweepRow]:
    """For each threshold: select, train an R-SVAE from scratch, evaluate 1- and 5-shot."""
    thresholds = [float(t) for t in thresholds]
    if thresholds != sorted(thresholds) or any(not 0.0 <= t < 1.0 for t in thresholds):
        raise ContractError("thresholds must be sorted ascending within [0, 1)")
    total = base_rows(fs).size
    out = []
    for eps in thresholds:
        rows = selected_rows(fs, eps, alpha, score)
        model, _ = train_on_rows(fs, semantics, rows, config)
        accs = []
        for shot in (1, 5):
            ec = EvalConfig(shot=shot, episodes=episodes, method="rsvae", classifier=classifier,
                            gen_count=gen_count, seed=seed)
            accs.append(run_eval(fs, semantics, ec, model, workers).mean)
        out.append(SweepRow(eps, rows.size / total, *accs))
    return out


def write_rows(path, header, rows) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([repr(v) if isinstance(v, float) else v for v in row])


def write_sweep(rows: list[SweepRow], path) -> None:
    write_rows(path, ["threshold", "fraction_kept", "acc_1shot", "acc_5shot"],
               [(r.threshold, r.fraction_kept, r.acc_1shot, r.acc_5shot) for r in rows])


def _designated_episode(fs, designated, candidates, way, queries, rng):
    others = fs.classes(Split.NOVEL)
    others = others[others != designated]
    if others.size < way - 1:
        raise CapacityError(f"need {way - 1} novel classes besides the designated one")
    classes = np.concatenate([[designated], rng.choice(others, size=way - 1, replace=False)])
    support = np.empty((way, 1), dtype=np.int64)
    query = np.empty((way, queries), dtype=np.int64)
    # own sub-stream so that the other classes do not depend on the bin
    s = np.random.default_rng(rng.integers(2**63)).choice(candidates)
    rest = np.setdiff1d(fs.class_indices(designated), [s])
    if rest.size < queries:
        raise CapacityError(f"class {designated} has too few samples for {queries} queries")
    support[0, 0] = s
    query[0] = rng.choice(rest, size=queries, replace=False)
    for i, c in enumerate(classes[1:], 1):
        picked = rng.choice(fs.class_indices(c), size=1 + queries, replace=False)
        support[i, 0] = picked[0]
        query[i] = picked[1:]
    return Episode(way, 1, queries, classes.astype(np.int64), support, query)


def support_representativeness_study(fs: FeatureSet, semantics: SemanticTable, model: CvaeModel,
                                     bins, method: str = "svae", episodes: int = 200, seed: int = 0,
                                     gen_count: int = DEFAULT_GEN_COUNT, way: int = 5,
                                     queries: int = 15, workers: int = 1) -> list[tuple]:
    """1-shot accuracy when the lowest-id novel class's support sample is drawn
    only from rows whose L2 distance to that class's mean lies in ``[lo, hi)``.

    Returns rows ``(lo, hi, candidates, baseline_acc, method_acc,
    baseline_designated_acc, method_designated_acc)``; the last two score only
    the designated class's queries.
    """
    bins = [(float(lo), float(hi)) for lo, hi in bins]
    ordered = sorted(bins)
    for (_, h1), (l2, _) in zip(ordered, ordered[1:]):
        if l2 < h1:
            raise ContractError("bins overlap")
    designated = int(fs.classes(Split.NOVEL).min())
    rows = fs.class_indices(designated)
    x = fs.features[rows].astype(np.float64)
    dist = np.linalg.norm(x - x.mean(axis=0), axis=1)

    out = []
    for lo, hi in bins:
        candidates = rows[(dist >= lo) & (dist < hi)]
        if candidates.size == 0:
            raise CapacityError(f"bin [{lo}, {hi}) has no samples of class {designated}")
        result = [lo, hi, int(candidates.size)]
        per_method = {}
        for m in ("baseline", method):
            cfg = EvalConfig(way=way, shot=1, queries=queries, episodes=episodes, method=m,
                             gen_count=gen_count, seed=seed)

            def one(i, cfg=cfg):
                rng = np.random.default_rng(episode_seed(seed, i))
                ep = _designated_episode(fs, designated, candidates, way, queries, rng)
                task = build_task_model(fs, ep, cfg.method, "proto", model, semantics, gen_count,
                                        cfg.resolved_weights(), rng)
                pred = task.predict(fs.features[ep.query.ravel()])
                hit = pred == ep.query_labels()
                return float(hit.mean()), float(hit[:queries].mean())

            accs = np.array(_map(one, episodes, workers))
            per_method[m] = accs.mean(axis=0)
        result += [float(per_method["baseline"][0]), float(per_method[method][0]),
                   float(per_method["baseline"][1]), float(per_method[method][1])]
        out.append(tuple(result))
    return out


def silverman_bandwidth(values) -> float:
    v = np.asarray(values, dtype=np.float64)
    return 1.06 * float(v.std(ddof=1)) * v.size ** (-0.2)


def distance_kde_report(distances, bandwidth: float | None = None, grid: int = 256):
    """Gaussian KDE on ``[min - 3h, max + 3h]``. Returns ``(x, density)``."""
    v = np.asarray(distances, dtype=np.float64)
    if v.size < 2:
        raise CapacityError("KDE needs at least 2 points")
    if grid < 16:
        raise ContractError("grid must have at least 16 points")
    h = silverman_bandwidth(v) if bandwidth is None else float(bandwidth)
    if not h > 0:
        raise ContractError("bandwidth is zero; pass an explicit bandwidth for constant data")
    xs = np.linspace(v.min() - 3 * h, v.max() + 3 * h, grid)
    u = (xs[:, None] - v[None, :]) / h
    dens = np.exp(-0.5 * u * u).sum(axis=1) / (v.size * h * np.sqrt(2 * np.pi))
    return xs, dens


def prototype_distances(fs: FeatureSet, semantics: SemanticTable | None, config: EvalConfig,
                        model: CvaeModel | None = None, workers: int = 1) -> np.ndarray:
    """Distance from each episode-class prototype to that class's all-sample mean,
    pooled over ``config.episodes`` episodes (``episodes * way`` values)."""
    truth = {int(c): fs.features[fs.class_indices(c)].astype(np.float64).mean(axis=0)
             for c in fs.classes(Split.NOVEL)}

    def one(i):
        rng = np.random.default_rng(episode_seed(config.seed, i))
        ep = sample_episode(fs, config.way, config.shot, config.queries, rng)
        task = build_task_model(fs, ep, config.method, "proto", model, semantics,
                                config.gen_count, config.resolved_weights(), rng, config.metric)
        return [np.linalg.norm(p.vector - truth[p.class_id]) for p in task.prototypes]

    return np.concatenate(_map(one, config.episodes, workers))


def prototype_fidelity_study(fs: FeatureSet, semantics: SemanticTable, truth: PlantedTruth,
                             models: PairedModels, gen_count: int = DEFAULT_GEN_COUNT,
                             seed: int = 0) -> list[tuple]:
    """Per base class: distance of the SVAE and R-SVAE generated prototypes to
    the planted mean. Rows are ``(class_id, d_all, d_selected, improvement)``."""
    out = []
    for c in fs.classes(Split.BASE):
        dists = []
        for model in (models.svae, models.rsvae):
            rng = np.random.default_rng(episode_seed(seed, int(c)))
            proto = prototype_mean(generate_features(model, semantics[c], gen_count, rng))
            dists.append(float(np.linalg.norm(proto - truth.mean(int(c)))))
        out.append((int(c), dists[0], dists[1], dists[0] - dists[1]))
    return out


