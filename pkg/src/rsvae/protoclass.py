"""Prototypes and the task-level classifiers used inside an episode."""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .cvae import CvaeModel, generate_features
from .datastore import Episode, FeatureSet, SemanticTable
from .errors import CapacityError, ContractError, ShapeError

DEFAULT_GEN_COUNT = 500
METHODS = ("baseline", "svae", "rsvae", "zeroshot")
CLASSIFIERS = ("proto", "1nn", "logreg", "svm")


class Provenance(enum.Enum):
    SUPPORT_ONLY = "support"
    GENERATED_ONLY = "generated"
    COMBINED = "combined"


@dataclass(frozen=True)
class Prototype:
    class_id: int
    vector: np.ndarray
    provenance: Provenance = Provenance.SUPPORT_ONLY
    weights: tuple | None = None   # (w_g, w_s) for COMBINED

    def __post_init__(self):
        if self.provenance is Provenance.COMBINED:
            if self.weights is None:
                raise ContractError("combined prototype needs (w_g, w_s)")
            _check_weights(*self.weights)


def _check_weights(w_g, w_s):
    if w_g < 0 or w_s < 0 or abs(w_g + w_s - 1.0) > 1e-9:
        raise ContractError(f"weights must be nonnegative and sum to 1, got ({w_g}, {w_s})")


def default_weights(shot: int) -> tuple[float, float]:
    """``(1/(K+1), K/(K+1))``: (1/2, 1/2) for 1-shot, (1/6, 5/6) for 5-shot."""
    return 1.0 / (shot + 1), shot / (shot + 1)


def prototype_mean(features) -> np.ndarray:
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 1:
        raise CapacityError("prototype needs at least one feature row")
    return x.mean(axis=0)


def combine_prototypes(p_gen, p_sup, w_g: float, w_s: float) -> np.ndarray:
    _check_weights(w_g, w_s)
    p_gen = np.asarray(p_gen, dtype=np.float64)
    p_sup = np.asarray(p_sup, dtype=np.float64)
    if p_gen.shape != p_sup.shape:
        raise ShapeError("prototype dimensions differ")
    return w_g * p_gen + w_s * p_sup


def zero_shot_prototype(model: CvaeModel, a, count: int, rng: np.random.Generator,
                        class_id: int = -1) -> Prototype:
    gen = generate_features(model, a, count, rng)
    return Prototype(class_id, prototype_mean(gen), Provenance.GENERATED_ONLY)


def _distances(queries, refs, metric: str):
    q = np.atleast_2d(np.asarray(queries, dtype=np.float64))
    r = np.atleast_2d(np.asarray(refs, dtype=np.float64))
    if q.shape[1] != r.shape[1]:
        raise ShapeError(f"query width {q.shape[1]} != reference width {r.shape[1]}")
    if metric == "euclidean":
        return np.sqrt(np.sum((q[:, None, :] - r[None, :, :]) ** 2, axis=2))
    if metric == "cosine":
        qn = q / np.maximum(np.linalg.norm(q, axis=1, keepdims=True), 1e-12)
        rn = r / np.maximum(np.linalg.norm(r, axis=1, keepdims=True), 1e-12)
        return 1.0 - qn @ rn.T
    raise ContractError(f"unknown metric {metric!r}")


def classify_nearest(query, prototypes: list[Prototype], metric: str = "euclidean"):
    """Label of the nearest prototype; ties go to the lowest class id.

    ``query`` may be one vector (returns an int) or rows (returns an array).
    """
    if not prototypes:
        raise CapacityError("no prototypes to classify against")
    protos = sorted(prototypes, key=lambda p: p.class_id)
    ids = np.array([p.class_id for p in protos])
    dist = _distances(query, np.stack([p.vector for p in protos]), metric)
    pred = ids[np.argmin(dist, axis=1)]
    return int(pred[0]) if np.ndim(query) == 1 else pred


def one_nn_classify(query, ref_features, ref_labels, metric: str = "euclidean"):
    """Label of the nearest reference row; ties go to the lowest row index."""
    ref = np.asarray(ref_features, dtype=np.float64)
    if ref.ndim != 2 or ref.shape[0] == 0:
        raise CapacityError("reference set is empty")
    labels = np.asarray(ref_labels)
    pred = labels[np.argmin(_distances(query, ref, metric), axis=1)]
    return int(pred[0]) if np.ndim(query) == 1 else pred


def _class_targets(labels):
    labels = np.asarray(labels)
    classes = np.unique(labels)
    if classes.size < 2:
        raise ContractError("classifier needs at least two distinct labels")
    return classes, np.searchsorted(classes, labels)


def logreg_loss_and_grad(W, b, x, y_idx, l2):
    """Mean softmax cross-entropy plus ``0.5 * l2 * ||W||^2``."""
    logits = x @ W.T + b
    logits = logits - logits.max(axis=1, keepdims=True)
    p = np.exp(logits)
    p /= p.sum(axis=1, keepdims=True)
    n = x.shape[0]
    loss = -np.mean(np.log(p[np.arange(n), y_idx])) + 0.5 * l2 * np.sum(W * W)
    p[np.arange(n), y_idx] -= 1.0
    return loss, p.T @ x / n + l2 * W, p.mean(axis=0)


def svm_loss_and_grad(W, b, x, y_idx, C):
    """One-vs-rest ``0.5 * ||w_c||^2 + C * mean(hinge)`` summed over classes
    (sub-gradient at the hinge kink)."""
    n = x.shape[0]
    y = -np.ones((n, W.shape[0]))
    y[np.arange(n), y_idx] = 1.0
    margins = y * (x @ W.T + b)
    active = margins < 1.0
    loss = 0.5 * np.sum(W * W) + C * np.sum(np.maximum(0.0, 1.0 - margins)) / n
    coef = -(y * active) * C / n
    return loss, W + coef.T @ x, coef.sum(axis=0)


@dataclass(frozen=True)
class TaskModel:
    """A fitted episode classifier.

    ``kind`` is one of ``"proto"``, ``"1nn"``, ``"logreg"``, ``"svm"``. Only the
    fields relevant to the kind are set.
    """

    kind: str
    classes: np.ndarray
    prototypes: tuple = ()
    ref_features: np.ndarray | None = None
    ref_labels: np.ndarray | None = None
    weight: np.ndarray | None = None
    bias: np.ndarray | None = None
    metric: str = "euclidean"

    def predict(self, x) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        if self.kind == "proto":
            return classify_nearest(x, list(self.prototypes), self.metric)
        if self.kind == "1nn":
            return one_nn_classify(x, self.ref_features, self.ref_labels, self.metric)
        scores = x @ self.weight.T + self.bias
        return self.classes[np.argmax(scores, axis=1)]


def fit_logreg(features, labels, lr: float = 0.5, steps: int = 300, l2: float = 1e-3) -> TaskModel:
    """Multinomial logistic regression, zero init, full-batch gradient descent."""
    x = np.asarray(features, dtype=np.float64)
    classes, y_idx = _class_targets(labels)
    W = np.zeros((classes.size, x.shape[1]))
    b = np.zeros(classes.size)
    for _ in range(steps):
        _, gW, gb = logreg_loss_and_grad(W, b, x, y_idx, l2)
        W -= lr * gW
        b -= lr * gb
    return TaskModel("logreg", classes, weight=W, bias=b)


def fit_linear_svm(features, labels, lr: float = 0.01, steps: int = 300, C: float = 10.0) -> TaskModel:
    """One-vs-rest linear SVM trained by sub-gradient descent from zero."""
    x = np.asarray(features, dtype=np.float64)
    classes, y_idx = _class_targets(labels)
    W = np.zeros((classes.size, x.shape[1]))
    b = np.zeros(classes.size)
    for _ in range(steps):
        _, gW, gb = svm_loss_and_grad(W, b, x, y_idx, C)
        W -= lr * gW
        b -= lr * gb
    return TaskModel("svm", classes, weight=W, bias=b)


def build_task_model(fs: FeatureSet, episode: Episode, method: str = "baseline",
                     classifier: str = "proto", model: CvaeModel | None = None,
                     semantics: SemanticTable | None = None, gen_count: int = DEFAULT_GEN_COUNT,
                     weights: tuple | None = None, rng: np.random.Generator | None = None,
                     metric: str = "euclidean") -> TaskModel:
    """Fit the classifier for one episode.

    ``baseline`` uses support features only. ``svae``/``rsvae`` (identical
    here; they differ only in which trained model is passed) combine support
    and generated prototypes with ``weights = (w_g, w_s)`` for the prototype
    classifier and append generated rows to the training set for the others.
    ``zeroshot`` uses generated features only.
    """
    if method not in METHODS:
        raise ContractError(f"unknown method {method!r}")
    if classifier not in CLASSIFIERS:
        raise ContractError(f"unknown classifier {classifier!r}")
    classes = episode.classes
    x_sup = np.asarray(fs.features[episode.support], dtype=np.float64)  # (way, shot, d)

    generated = None
    if method != "baseline":
        if model is None or semantics is None:
            raise ContractError(f"method {method!r} needs a trained model and semantics")
        generated = [generate_features(model, semantics[c], gen_count, rng) for c in classes]

    if classifier == "proto":
        protos = []
        for i, c in enumerate(classes):
            if method == "baseline":
                protos.append(Prototype(int(c), prototype_mean(x_sup[i])))
            elif method == "zeroshot":
                protos.append(Prototype(int(c), prototype_mean(generated[i]), Provenance.GENERATED_ONLY))
            else:
                w = default_weights(episode.shot) if weights is None else weights
                vec = combine_prototypes(prototype_mean(generated[i]), prototype_mean(x_sup[i]), *w)
                protos.append(Prototype(int(c), vec, Provenance.COMBINED, tuple(w)))
        return TaskModel("proto", np.sort(classes), prototypes=tuple(protos), metric=metric)

    rows, labels = [], []
    if method != "zeroshot":
        rows.append(x_sup.reshape(-1, x_sup.shape[-1]))
        labels.append(np.repeat(classes, x_sup.shape[1]))
    if generated is not None:
        rows.extend(generated)
        labels.extend(np.full(g.shape[0], c) for g, c in zip(generated, classes))
    x_train = np.concatenate(rows)
    y_train = np.concatenate(labels)
    if classifier == "1nn":
        return TaskModel("1nn", np.sort(classes), ref_features=x_train, ref_labels=y_train, metric=metric)
    if classifier == "logreg":
        return fit_logreg(x_train, y_train)
    return fit_linear_svm(x_train, y_train)
