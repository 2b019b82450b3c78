"""Per-class Gaussian fits and representative-sample selection.

A class is modelled as ``N(mean, cov)`` with ``cov`` shrunk toward a scaled
identity so it stays positive definite when ``n`` is close to ``d``. A sample's
representativeness is its density divided by the density at the mode,
``exp(-0.5 * mahalanobis^2)``, which lies in (0, 1] and can be compared with a
probability threshold directly.

Herding and k-means selection are included as baselines.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
from scipy import linalg, stats

from .datastore import FeatureSet, Split
from .errors import CapacityError, ContractError, NumericError, ShapeError

DEFAULT_THRESHOLD = 0.9
DEFAULT_SHRINKAGE = 0.1
SCORES = ("mode", "chi2")


@dataclass(frozen=True)
class ClassGaussian:
    mean: np.ndarray
    cov: np.ndarray
    alpha: float          # shrinkage actually applied
    chol: np.ndarray      # lower-triangular, chol @ chol.T == cov
    log_det: float
    n: int
    ridge: float = 0.0    # > 0 only for the degenerate zero-trace fallback

    @property
    def dim(self) -> int:
        return self.mean.size


def estimate_mean(features) -> np.ndarray:
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 1:
        raise CapacityError("need at least one sample to estimate a mean")
    return x.mean(axis=0)


def _try_cholesky(cov):
    try:
        return np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        return None


def estimate_covariance(features, alpha: float = DEFAULT_SHRINKAGE) -> ClassGaussian:
    """Fit mean and shrunk covariance.

    The unbiased sample covariance is blended as
    ``(1 - alpha) * cov + alpha * trace(cov) / d * I``. If the result is not
    positive definite, alpha is escalated (doubling from 1e-4) until it is;
    when even ``alpha = 1`` fails (all rows identical) a ridge of
    ``1e-4 * mean(x**2) + 1e-12`` times the identity is used instead.
    """
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 2:
        raise ShapeError("features must be a 2-D array")
    n, d = x.shape
    if n < 2:
        raise CapacityError(f"covariance needs at least 2 samples, got {n}")
    if not 0.0 <= alpha <= 1.0:
        raise ContractError(f"shrinkage must be in [0, 1], got {alpha}")
    if not np.isfinite(x).all():
        raise NumericError("features contain NaN or Inf")

    mean = x.mean(axis=0)
    centered = x - mean
    raw = centered.T @ centered / (n - 1)
    target = np.trace(raw) / d * np.eye(d)

    ridge = 0.0
    a = alpha
    while True:
        cov = (1.0 - a) * raw + a * target
        chol = _try_cholesky(cov)
        if chol is not None and np.all(np.diag(chol) > 0):
            break
        if a >= 1.0:
            ridge = 1e-4 * float(np.mean(x * x)) + 1e-12
            cov = ridge * np.eye(d)
            chol = np.sqrt(ridge) * np.eye(d)
            break
        a = min(1.0, max(2.0 * a, 1e-4))
    log_det = 2.0 * float(np.sum(np.log(np.diag(chol))))
    return ClassGaussian(mean, cov, a, chol, log_det, n, ridge)


def mahalanobis_sq(g: ClassGaussian, x) -> np.ndarray | float:
    """Squared Mahalanobis distance of ``x`` (vector or rows) to the class mean."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != g.dim:
        raise ShapeError(f"expected dimension {g.dim}, got {x.shape[-1]}")
    diff = np.atleast_2d(x - g.mean)
    w = linalg.solve_triangular(g.chol, diff.T, lower=True)
    m2 = np.sum(w * w, axis=0)
    return float(m2[0]) if x.ndim == 1 else m2


def log_density(g: ClassGaussian, x):
    m2 = mahalanobis_sq(g, x)
    return -0.5 * (g.dim * np.log(2.0 * np.pi) + g.log_det + m2)


def log_score(g: ClassGaussian, x, score: str = "mode"):
    """Log of the representativeness score.

    ``"mode"``: ``-0.5 * m2`` (density relative to its peak).
    ``"chi2"``: log of ``P(chi2_d >= m2)``, the fraction of the fitted
    Gaussian lying farther out than ``x``; unlike the mode score it does not
    collapse toward zero as the dimension grows.
    """
    m2 = mahalanobis_sq(g, x)
    if score == "mode":
        return -0.5 * m2
    if score == "chi2":
        return stats.chi2.logsf(m2, g.dim)
    raise ContractError(f"unknown score {score!r}; expected one of {SCORES}")


def representativeness(g: ClassGaussian, x, score: str = "mode"):
    return np.exp(log_score(g, x, score))


@dataclass(frozen=True)
class SelectionResult:
    class_id: int
    indices: np.ndarray     # global row indices that passed
    scores: np.ndarray      # score of every class sample, in class order
    threshold: float
    fraction_selected: float


def select_mask(features, threshold: float = DEFAULT_THRESHOLD,
                alpha: float = DEFAULT_SHRINKAGE, score: str = "mode"):
    """Boolean mask of rows whose score exceeds ``threshold``, plus the scores.

    The comparison is done in the log domain so that ``threshold = 0`` keeps
    every row even when a score underflows.
    """
    if not 0.0 <= threshold < 1.0:
        raise ContractError(f"threshold must be in [0, 1), got {threshold}")
    g = estimate_covariance(features, alpha)
    logs = np.atleast_1d(log_score(g, features, score))
    keep = logs > np.log(threshold) if threshold > 0 else np.ones(logs.size, dtype=bool)
    return keep, np.exp(logs)


def select_representative(fs: FeatureSet, class_id: int, threshold: float = DEFAULT_THRESHOLD,
                          alpha: float = DEFAULT_SHRINKAGE, score: str = "mode") -> SelectionResult:
    rows = fs.class_indices(class_id)
    keep, scores = select_mask(fs.features[rows], threshold, alpha, score)
    return SelectionResult(int(class_id), rows[keep], scores, float(threshold),
                           float(keep.sum()) / rows.size)


def select_base(fs: FeatureSet, threshold: float = DEFAULT_THRESHOLD,
                alpha: float = DEFAULT_SHRINKAGE, score: str = "mode") -> list[SelectionResult]:
    """Run :func:`select_representative` on every base class."""
    return [select_representative(fs, c, threshold, alpha, score) for c in fs.classes(Split.BASE)]


def selection_stats(fs: FeatureSet, threshold: float = DEFAULT_THRESHOLD,
                    alpha: float = DEFAULT_SHRINKAGE, score: str = "mode") -> list[tuple]:
    """``(class_id, fraction_selected, threshold)`` for every base class."""
    return [(r.class_id, r.fraction_selected, r.threshold)
            for r in select_base(fs, threshold, alpha, score)]


def write_selection_stats(rows, path) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["class_id", "fraction_selected", "threshold"])
        for cid, frac, eps in rows:
            w.writerow([cid, repr(float(frac)), repr(float(eps))])


# -- baselines ---------------------------------------------------------------

def _check_count(x, m):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise ShapeError("features must be a 2-D array")
    if not 1 <= m <= x.shape[0]:
        raise CapacityError(f"cannot select {m} of {x.shape[0]} samples")
    return x


def herding_select(features, m: int) -> np.ndarray:
    """Greedy herding: each step adds the sample that brings the running mean
    of the selection closest to the class mean. Ties go to the lowest index."""
    x = _check_count(features, m)
    mu = x.mean(axis=0)
    chosen = []
    available = np.ones(x.shape[0], dtype=bool)
    running = np.zeros_like(mu)
    for t in range(1, m + 1):
        dist = np.sum((mu - (running + x) / t) ** 2, axis=1)
        dist[~available] = np.inf
        j = int(np.argmin(dist))
        chosen.append(j)
        available[j] = False
        running += x[j]
    return np.array(chosen, dtype=np.int64)


def kmeans_plusplus(x, k: int, rng: np.random.Generator) -> np.ndarray:
    n = x.shape[0]
    centers = [int(rng.integers(n))]
    d2 = np.sum((x - x[centers[0]]) ** 2, axis=1)
    for _ in range(1, k):
        total = d2.sum()
        if total > 0:
            j = int(rng.choice(n, p=d2 / total))
        else:
            # every point coincides with a center already; pick an unused row
            unused = np.setdiff1d(np.arange(n), centers)
            j = int(rng.choice(unused))
        centers.append(j)
        d2 = np.minimum(d2, np.sum((x - x[j]) ** 2, axis=1))
    return x[centers].copy()


def lloyd(x, centers, max_iter: int = 100, tol: float = 1e-6):
    """Plain Lloyd iterations. Empty clusters keep their previous centroid."""
    centers = centers.copy()
    for _ in range(max_iter):
        d2 = np.sum((x[:, None, :] - centers[None, :, :]) ** 2, axis=2)
        assign = np.argmin(d2, axis=1)
        new = centers.copy()
        for c in range(centers.shape[0]):
            members = assign == c
            if members.any():
                new[c] = x[members].mean(axis=0)
        shift = np.max(np.sqrt(np.sum((new - centers) ** 2, axis=1)))
        centers = new
        if shift < tol:
            break
    return centers


def kmeans_select(features, m: int, rng: np.random.Generator) -> np.ndarray:
    """k-means (k = m) with k-means++ seeding; returns the sample nearest each
    final centroid. When two centroids share a nearest sample the later one
    takes its next-nearest unselected sample instead."""
    x = _check_count(features, m)
    centers = lloyd(x, kmeans_plusplus(x, m, rng))
    chosen = []
    taken = np.zeros(x.shape[0], dtype=bool)
    for c in centers:
        order = np.argsort(np.sum((x - c) ** 2, axis=1), kind="stable")
        j = int(order[np.argmax(~taken[order])])
        chosen.append(j)
        taken[j] = True
    return np.array(chosen, dtype=np.int64)
