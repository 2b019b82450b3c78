"""Feature/semantic containers, the binary ``FSF1`` file format, episode sampling.

Container layout (little-endian)::

    "FSF1" | u32 version=1 | u32 num_samples | u32 feat_dim | u32 num_classes
           | u32 sem_dim | features f32[num_samples, feat_dim] | labels u32[num_samples]
           | split u8[num_classes] | semantics f32[num_classes, sem_dim]

Class ids are dense ``0 .. num_classes-1``. Human-readable class names live in
a sidecar manifest, one ``<class_id>\\t<name>`` line per class.
"""

from __future__ import annotations

import enum
import os
import struct
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .errors import CapacityError, ContractError, FormatError, ShapeError, UnknownClassError

MAGIC = b"FSF1"
VERSION = 1
_HEADER = struct.Struct("<4s5I")


class Split(enum.IntEnum):
    BASE = 0
    VAL = 1
    NOVEL = 2


@dataclass
class FeatureSet:
    """Labeled feature vectors plus the split assignment of every class.

    ``splits[c]`` is the :class:`Split` code of class ``c``.
    """

    features: np.ndarray
    labels: np.ndarray
    splits: np.ndarray

    def __post_init__(self):
        self.features = np.asarray(self.features)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        self.splits = np.asarray(self.splits, dtype=np.uint8)
        if self.features.ndim != 2:
            raise ShapeError(f"features must be 2-D, got shape {self.features.shape}")
        if self.labels.shape != (self.features.shape[0],):
            raise ShapeError("need exactly one label per feature row")
        if self.splits.ndim != 1:
            raise ShapeError("splits must be 1-D")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.splits.size):
            raise ContractError("every label needs a split assignment")
        if self.splits.size and self.splits.max() > Split.NOVEL:
            raise ContractError("split codes must be 0 (base), 1 (val) or 2 (novel)")
        if not np.isfinite(self.features).all():
            raise ContractError("features contain NaN or Inf")

    @property
    def num_samples(self) -> int:
        return self.features.shape[0]

    @property
    def feat_dim(self) -> int:
        return self.features.shape[1]

    @property
    def num_classes(self) -> int:
        return self.splits.size

    def classes(self, split: Split | None = None) -> np.ndarray:
        ids = np.arange(self.num_classes)
        return ids if split is None else ids[self.splits == split]

    @cached_property
    def _index(self) -> dict:
        order = np.argsort(self.labels, kind="stable")
        bounds = np.searchsorted(self.labels[order], np.arange(self.num_classes + 1))
        return {c: order[bounds[c]:bounds[c + 1]] for c in range(self.num_classes)}

    def class_indices(self, class_id: int) -> np.ndarray:
        """Row indices of ``class_id`` in stored order."""
        if not 0 <= class_id < self.num_classes:
            raise UnknownClassError(f"unknown class {class_id}")
        return self._index[int(class_id)]


@dataclass
class SemanticTable:
    """One embedding row per class id."""

    embeddings: np.ndarray

    def __post_init__(self):
        self.embeddings = np.asarray(self.embeddings)
        if self.embeddings.ndim != 2:
            raise ShapeError("semantic embeddings must be a 2-D (num_classes, sem_dim) array")

    @property
    def sem_dim(self) -> int:
        return self.embeddings.shape[1]

    @property
    def num_classes(self) -> int:
        return self.embeddings.shape[0]

    def __getitem__(self, class_id) -> np.ndarray:
        ids = np.asarray(class_id)
        if ids.size and (ids.min() < 0 or ids.max() >= self.num_classes):
            raise UnknownClassError(f"no semantic embedding for class {class_id}")
        return self.embeddings[ids]


def class_features(fs: FeatureSet, class_id: int) -> np.ndarray:
    return fs.features[fs.class_indices(class_id)]


# -- file format -------------------------------------------------------------

def encode_features(fs: FeatureSet, table: SemanticTable) -> bytes:
    if table.num_classes != fs.num_classes:
        raise ShapeError(
            f"semantic table has {table.num_classes} classes, feature set has {fs.num_classes}"
        )
    header = _HEADER.pack(MAGIC, VERSION, fs.num_samples, fs.feat_dim, fs.num_classes, table.sem_dim)
    return b"".join((
        header,
        np.ascontiguousarray(fs.features, dtype="<f4").tobytes(),
        np.ascontiguousarray(fs.labels, dtype="<u4").tobytes(),
        np.ascontiguousarray(fs.splits, dtype="u1").tobytes(),
        np.ascontiguousarray(table.embeddings, dtype="<f4").tobytes(),
    ))


def decode_features(buf: bytes) -> tuple[FeatureSet, SemanticTable]:
    if len(buf) < _HEADER.size:
        raise FormatError("truncated header", len(buf))
    magic, version, n, d, c, s = _HEADER.unpack_from(buf, 0)
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}", 0)
    if version != VERSION:
        raise FormatError(f"unsupported version {version}", 4)
    if d == 0 or s == 0:
        raise FormatError("feature and semantic dimensions must be positive", 12)

    sections = [("features", "<f4", (n, d)), ("labels", "<u4", (n,)),
                ("splits", "u1", (c,)), ("semantics", "<f4", (c, s))]
    offset = _HEADER.size
    arrays = {}
    for name, dtype, shape in sections:
        nbytes = int(np.prod(shape)) * np.dtype(dtype).itemsize
        if offset + nbytes > len(buf):
            raise FormatError(f"truncated {name} section", len(buf))
        arrays[name] = np.frombuffer(buf, dtype=dtype, count=int(np.prod(shape)), offset=offset).reshape(shape)
        offset += nbytes
    if offset != len(buf):
        raise FormatError(f"{len(buf) - offset} trailing bytes", offset)

    labels = arrays["labels"].astype(np.int64)
    label_offset = _HEADER.size + n * d * 4
    if n and labels.max() >= c:
        bad = int(np.argmax(labels >= c))
        raise FormatError(f"label {labels[bad]} out of range for {c} classes", label_offset + 4 * bad)
    splits = arrays["splits"].copy()
    if c and splits.max() > Split.NOVEL:
        bad = int(np.argmax(splits > Split.NOVEL))
        raise FormatError(f"invalid split code {splits[bad]}", label_offset + 4 * n + bad)
    features = arrays["features"].astype(np.float32)
    if not np.isfinite(features).all():
        raise FormatError("non-finite feature values", _HEADER.size)
    fs = FeatureSet(features, labels, splits)
    return fs, SemanticTable(arrays["semantics"].astype(np.float32))


def save_features(fs: FeatureSet, table: SemanticTable, path) -> None:
    data = encode_features(fs, table)
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as f:
        f.write(data)
    os.replace(tmp, path)


def load_features(path) -> tuple[FeatureSet, SemanticTable]:
    with open(path, "rb") as f:
        return decode_features(f.read())


def write_manifest(names: dict, path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for cid in sorted(names):
            f.write(f"{cid}\t{names[cid]}\n")


def read_manifest(path) -> dict:
    """Read ``<class_id>\\t<name>`` lines.

    A third tab-separated column, if present, is kept as ``(name, split)``;
    this is how ``ingest`` learns class splits.
    """
    out = {}
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            line = line.rstrip("\n")
            if not line.strip():
                continue
            parts = line.split("\t")
            try:
                cid = int(parts[0])
            except ValueError:
                raise ContractError(f"{path}:{lineno}: class id must be an integer") from None
            out[cid] = parts[1] if len(parts) == 2 else tuple(parts[1:3])
    return out


# -- episodes ----------------------------------------------------------------

@dataclass(frozen=True)
class Episode:
    way: int
    shot: int
    queries: int
    classes: np.ndarray   # (way,)
    support: np.ndarray   # (way, shot) row indices
    query: np.ndarray     # (way, queries) row indices

    def support_labels(self) -> np.ndarray:
        return np.repeat(self.classes, self.shot)

    def query_labels(self) -> np.ndarray:
        return np.repeat(self.classes, self.queries)


def sample_episode(fs: FeatureSet, way: int, shot: int, queries: int,
                   rng: np.random.Generator) -> Episode:
    """Draw an N-way K-shot episode from the novel classes.

    Classes are drawn uniformly without replacement, then K+Q distinct rows
    per class; the first K become support, the rest queries.
    """
    if min(way, shot, queries) < 1:
        raise ContractError("way, shot and queries must all be >= 1")
    novel = fs.classes(Split.NOVEL)
    if novel.size < way:
        raise CapacityError(f"{way}-way episode needs {way} novel classes, only {novel.size} available")
    classes = rng.choice(novel, size=way, replace=False)
    support = np.empty((way, shot), dtype=np.int64)
    query = np.empty((way, queries), dtype=np.int64)
    for i, c in enumerate(classes):
        rows = fs.class_indices(c)
        if rows.size < shot + queries:
            raise CapacityError(
                f"class {c} has {rows.size} samples, episode needs {shot + queries}"
            )
        picked = rng.choice(rows, size=shot + queries, replace=False)
        support[i] = picked[:shot]
        query[i] = picked[shot:]
    return Episode(way, shot, queries, classes.astype(np.int64), support, query)
