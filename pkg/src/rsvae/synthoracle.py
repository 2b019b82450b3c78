"""Synthetic benchmark with known class means.

Each class gets a unit-norm semantic vector ``a``; its true mean is
``relu(W @ a)`` for a hidden mixing matrix ``W``. Samples are
``relu(W @ a + noise)``, and a chosen fraction of each class is drawn with a
wider noise scale to act as outliers. Classes ``0 .. num_base-1`` are base,
the rest novel.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .datastore import FeatureSet, SemanticTable, Split
from .errors import ContractError, FormatError, ShapeError, UnknownClassError


@dataclass
class SynthConfig:
    num_base_classes: int = 32
    num_novel_classes: int = 8
    samples_per_class: int = 200
    feat_dim: int = 32
    sem_dim: int = 16
    noise_sigma: float = 0.1
    outlier_fraction: float = 0.1
    outlier_shift: float = 6.0
    seed: int = 0

    def __post_init__(self):
        for name in ("num_base_classes", "num_novel_classes", "samples_per_class", "feat_dim", "sem_dim"):
            if int(getattr(self, name)) < 1:
                raise ContractError(f"{name} must be >= 1")
        if not self.noise_sigma > 0:
            raise ContractError("noise_sigma must be positive")
        if not 0.0 <= self.outlier_fraction < 1.0:
            raise ContractError("outlier_fraction must be in [0, 1)")

    @property
    def num_classes(self) -> int:
        return self.num_base_classes + self.num_novel_classes


@dataclass
class PlantedTruth:
    mixing: np.ndarray        # (feat_dim, sem_dim)
    means: np.ndarray         # (num_classes, feat_dim), elementwise >= 0
    outliers: list            # per class: global row indices of outlier samples

    def mean(self, class_id: int) -> np.ndarray:
        if not 0 <= class_id < self.means.shape[0]:
            raise UnknownClassError(f"unknown class {class_id}")
        return self.means[class_id]


def generate_synth(config: SynthConfig, rng: np.random.Generator | None = None):
    """Returns ``(FeatureSet, SemanticTable, PlantedTruth)``; deterministic in ``config.seed``
    unless an explicit ``rng`` is given."""
    rng = np.random.default_rng(config.seed) if rng is None else rng
    c, n, d, s = config.num_classes, config.samples_per_class, config.feat_dim, config.sem_dim

    sem = rng.standard_normal((c, s))
    sem /= np.linalg.norm(sem, axis=1, keepdims=True)
    mixing = rng.normal(0.0, 1.0 / np.sqrt(s), size=(d, s))
    pre = sem @ mixing.T                       # (c, d) pre-relu means
    means = np.maximum(pre, 0.0)

    n_out = int(round(config.outlier_fraction * n))
    features = np.empty((c * n, d))
    outliers = []
    for k in range(c):
        scale = np.full((n, 1), config.noise_sigma)
        bad = np.sort(rng.choice(n, size=n_out, replace=False))
        scale[bad] *= config.outlier_shift
        features[k * n:(k + 1) * n] = np.maximum(pre[k] + scale * rng.standard_normal((n, d)), 0.0)
        outliers.append(k * n + bad)

    labels = np.repeat(np.arange(c), n)
    splits = np.array([Split.BASE] * config.num_base_classes + [Split.NOVEL] * config.num_novel_classes,
                      dtype=np.uint8)
    fs = FeatureSet(features.astype(np.float32), labels, splits)
    return fs, SemanticTable(sem.astype(np.float32)), PlantedTruth(mixing, means, outliers)


def prototype_distance_report(truth: PlantedTruth, prototypes, label: str = "") -> list[tuple]:
    """``(class_id, L2 distance to the planted mean, label)`` per prototype."""
    rows = []
    for p in prototypes:
        mu = truth.mean(p.class_id)
        vec = np.asarray(p.vector, dtype=np.float64)
        if vec.shape != mu.shape:
            raise ShapeError(f"prototype width {vec.size} != feature width {mu.size}")
        rows.append((p.class_id, float(np.linalg.norm(vec - mu)), label))
    return rows


# -- truth file --------------------------------------------------------------

TRUTH_MAGIC = b"TRU1"
_TRUTH_HEAD = struct.Struct("<4s3I")


def encode_truth(truth: PlantedTruth) -> bytes:
    d, s = truth.mixing.shape
    c = truth.means.shape[0]
    parts = [_TRUTH_HEAD.pack(TRUTH_MAGIC, d, s, c),
             np.ascontiguousarray(truth.mixing, dtype="<f8").tobytes(),
             np.ascontiguousarray(truth.means, dtype="<f8").tobytes()]
    for idx in truth.outliers:
        parts.append(struct.pack("<I", len(idx)))
        parts.append(np.asarray(idx, dtype="<u4").tobytes())
    return b"".join(parts)


def decode_truth(buf: bytes) -> PlantedTruth:
    if len(buf) < _TRUTH_HEAD.size:
        raise FormatError("truncated truth header", len(buf))
    magic, d, s, c = _TRUTH_HEAD.unpack_from(buf, 0)
    if magic != TRUTH_MAGIC:
        raise FormatError(f"bad magic {magic!r}", 0)
    offset = _TRUTH_HEAD.size
    need = offset + 8 * (d * s + c * d)
    if len(buf) < need:
        raise FormatError("truncated truth arrays", len(buf))
    mixing = np.frombuffer(buf, "<f8", d * s, offset).reshape(d, s).copy()
    offset += 8 * d * s
    means = np.frombuffer(buf, "<f8", c * d, offset).reshape(c, d).copy()
    offset += 8 * c * d
    outliers = []
    for _ in range(c):
        if offset + 4 > len(buf):
            raise FormatError("truncated outlier list", len(buf))
        (k,) = struct.unpack_from("<I", buf, offset)
        offset += 4
        if offset + 4 * k > len(buf):
            raise FormatError("truncated outlier list", len(buf))
        outliers.append(np.frombuffer(buf, "<u4", k, offset).astype(np.int64))
        offset += 4 * k
    if offset != len(buf):
        raise FormatError(f"{len(buf) - offset} trailing bytes", offset)
    return PlantedTruth(mixing, means, outliers)


def save_truth(truth: PlantedTruth, path) -> None:
    with open(path, "wb") as f:
        f.write(encode_truth(truth))


def load_truth(path) -> PlantedTruth:
    with open(path, "rb") as f:
        return decode_truth(f.read())
