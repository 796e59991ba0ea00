"""Feature-set ingestion, N-way K-shot episode sampling, and synthetic blobs.

File formats
------------
CSV   : header ``label,f0,...,f{d-1}``; one sample per line; the label is a
        base-10 unsigned integer, features are decimal floats.
UMFE  : little-endian binary. Magic ``b"UMFE"`` (55 4D 46 45), u16 version=1,
        u32 n_total, u32 d, n_total*d float32 features row-major, then
        n_total u32 labels.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field

import numpy as np

from .exceptions import (
    DimensionMismatchError,
    FeatureFileError,
    InvalidInputError,
    InvalidRequestError,
    MalformedHeaderError,
    TruncatedPayloadError,
    UnknownMagicError,
)

UMFE_MAGIC = b"UMFE"
UMFE_VERSION = 1


@dataclass
class FeatureSet:
    """Labeled feature vectors with a class -> row-indices index.

    ``features`` is (n_total, d) float64, ``labels`` is (n_total,) int64 of
    nonnegative class ids. ``class_index`` is built automatically.
    """

    features: np.ndarray
    labels: np.ndarray
    class_index: dict[int, np.ndarray] = field(init=False, repr=False)

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.features.ndim != 2:
            raise InvalidInputError(f"features must be 2-D, got shape {self.features.shape}")
        if self.labels.shape != (self.features.shape[0],):
            raise InvalidInputError("labels length must match the number of feature rows")
        if not np.all(np.isfinite(self.features)):
            raise InvalidInputError("features contain NaN or Inf entries")
        if self.labels.size and self.labels.min() < 0:
            raise InvalidInputError("labels must be nonnegative integers")
        self.class_index = {
            int(c): np.flatnonzero(self.labels == c) for c in np.unique(self.labels)
        }

    @property
    def n_total(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]


@dataclass(frozen=True)
class Episode:
    """One N-way K-shot task.

    ``support_rows`` / ``query_rows`` index into the owning FeatureSet;
    ``support_classes`` / ``query_classes`` are episode-local classes 1..N
    (assigned by sorted original class id). Query classes are the hidden
    ground truth: scoring code may read them, the pipeline must not.
    """

    support_rows: np.ndarray
    support_classes: np.ndarray
    query_rows: np.ndarray
    query_classes: np.ndarray
    n_way: int
    k_shot: int
    n_queries: int

    def __post_init__(self):
        n, k, q = self.n_way, self.k_shot, self.n_queries
        if len(self.support_rows) != n * k or len(self.support_classes) != n * k:
            raise InvalidInputError("support size must be N*K")
        if len(self.query_rows) != n * q or len(self.query_classes) != n * q:
            raise InvalidInputError("query size must be N*Q")
        if np.intersect1d(self.support_rows, self.query_rows).size:
            raise InvalidInputError("support and query sets overlap")

    @property
    def n_samples(self) -> int:
        """Episode size n = N*(K+Q)."""
        return self.n_way * (self.k_shot + self.n_queries)

    @property
    def support_positions(self) -> np.ndarray:
        """Positions of support samples in the episode-local sample order."""
        return np.arange(self.n_way * self.k_shot)

    @property
    def query_positions(self) -> np.ndarray:
        return np.arange(self.n_way * self.k_shot, self.n_samples)

    @property
    def transductive_labels(self) -> np.ndarray:
        """Length-n labels visible at inference: support classes, 0 for queries."""
        lab = np.zeros(self.n_samples, dtype=np.int64)
        lab[self.support_positions] = self.support_classes
        return lab

    def gather(self, fs: FeatureSet) -> np.ndarray:
        """Episode-local feature matrix, support rows first, then queries."""
        rows = np.concatenate([self.support_rows, self.query_rows])
        return fs.features[rows]


@dataclass(frozen=True)
class BlobSpec:
    """Synthetic isotropic-Gaussian class blobs.

    Class means are seeded draws on a sphere of radius ``separation/sqrt(2)``
    so the root-mean-square distance between two means equals ``separation``.
    """

    n_classes: int = 8
    dim: int = 16
    samples_per_class: int = 50
    separation: float = 10.0
    noise_sigma: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if min(self.n_classes, self.dim, self.samples_per_class) < 1:
            raise InvalidInputError("n_classes, dim, samples_per_class must be >= 1")
        if self.separation <= 0 or self.noise_sigma <= 0:
            raise InvalidInputError("separation and noise_sigma must be > 0")


def gaussian_blobs(spec: BlobSpec) -> FeatureSet:
    """Deterministic blob dataset for a given spec (same seed, same bytes)."""
    rng = np.random.default_rng(spec.seed)
    raw = rng.standard_normal((spec.n_classes, spec.dim))
    norms = np.linalg.norm(raw, axis=1, keepdims=True)
    norms[norms < 1e-12] = 1.0
    means = raw / norms * (spec.separation / math.sqrt(2.0))
    noise = rng.standard_normal((spec.n_classes * spec.samples_per_class, spec.dim))
    features = np.repeat(means, spec.samples_per_class, axis=0) + spec.noise_sigma * noise
    labels = np.repeat(np.arange(spec.n_classes), spec.samples_per_class)
    return FeatureSet(features=features, labels=labels)


def sample_episode(fs: FeatureSet, n_way: int, k_shot: int, n_queries: int,
                   rng_seed: int) -> Episode:
    """Sample one episode: N distinct classes, K+Q distinct samples each.

    The first K draws per class form the support set. Episode classes 1..N
    follow the sorted original class ids of the chosen classes, so the
    relabeling is deterministic given the seed.
    """
    if min(n_way, k_shot, n_queries) < 1:
        raise InvalidRequestError("n_way, k_shot, n_queries must all be >= 1")
    class_ids = sorted(fs.class_index)
    if len(class_ids) < n_way:
        raise InvalidRequestError(
            f"need {n_way} classes but the feature set has only {len(class_ids)}"
        )
    rng = np.random.default_rng(rng_seed)
    chosen = rng.choice(len(class_ids), size=n_way, replace=False)
    chosen_ids = sorted(class_ids[i] for i in chosen)

    sup_rows, sup_cls, qry_rows, qry_cls = [], [], [], []
    per_class = k_shot + n_queries
    for ep_class, cid in enumerate(chosen_ids, start=1):
        pool = fs.class_index[cid]
        if len(pool) < per_class:
            raise InvalidRequestError(
                f"class {cid} has {len(pool)} samples, episode needs K+Q={per_class}"
            )
        pick = pool[rng.choice(len(pool), size=per_class, replace=False)]
        sup_rows.append(pick[:k_shot])
        qry_rows.append(pick[k_shot:])
        sup_cls.append(np.full(k_shot, ep_class))
        qry_cls.append(np.full(n_queries, ep_class))

    return Episode(
        support_rows=np.concatenate(sup_rows),
        support_classes=np.concatenate(sup_cls),
        query_rows=np.concatenate(qry_rows),
        query_classes=np.concatenate(qry_cls),
        n_way=n_way,
        k_shot=k_shot,
        n_queries=n_queries,
    )


# ---------------------------------------------------------------------------
# File I/O
# ---------------------------------------------------------------------------

def _load_csv(path: str) -> FeatureSet:
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise MalformedHeaderError(f"{path}: empty file, expected a header line")
    header = lines[0].split(",")
    dim = len(header) - 1
    if dim < 1 or header[0] != "label" or header[1:] != [f"f{i}" for i in range(dim)]:
        raise MalformedHeaderError(
            f"{path}: header must be 'label,f0,...,f{{d-1}}', got {lines[0]!r}"
        )
    labels, rows = [], []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        parts = line.split(",")
        if len(parts) != dim + 1:
            raise DimensionMismatchError(
                f"{path}:{lineno}: expected {dim + 1} fields, got {len(parts)}"
            )
        try:
            label = int(parts[0])
        except ValueError:
            raise InvalidInputError(f"{path}:{lineno}: label {parts[0]!r} is not an integer")
        if label < 0:
            raise InvalidInputError(f"{path}:{lineno}: label must be unsigned, got {label}")
        try:
            values = [float(v) for v in parts[1:]]
        except ValueError:
            raise InvalidInputError(f"{path}:{lineno}: malformed float value")
        if not all(math.isfinite(v) for v in values):
            raise InvalidInputError(f"{path}:{lineno}: non-finite feature value")
        labels.append(label)
        rows.append(values)
    features = np.asarray(rows, dtype=np.float64).reshape(len(rows), dim)
    return FeatureSet(features=features, labels=np.asarray(labels, dtype=np.int64))


def _load_umfe(path: str) -> FeatureSet:
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 4 or blob[:4] != UMFE_MAGIC:
        raise UnknownMagicError(f"{path}: not a UMFE file (bad magic bytes)")
    header_size = 4 + 2 + 4 + 4
    if len(blob) < header_size:
        raise TruncatedPayloadError(f"{path}: header truncated at {len(blob)} bytes")
    version, n_total, dim = struct.unpack_from("<HII", blob, 4)
    if version != UMFE_VERSION:
        raise MalformedHeaderError(f"{path}: unsupported UMFE version {version}")
    feat_bytes = 4 * n_total * dim
    label_bytes = 4 * n_total
    expected = header_size + feat_bytes + label_bytes
    if len(blob) < expected:
        raise TruncatedPayloadError(
            f"{path}: expected {expected} bytes for n={n_total}, d={dim}, got {len(blob)}"
        )
    if len(blob) > expected:
        raise FeatureFileError(f"{path}: {len(blob) - expected} trailing bytes after payload")
    features = np.frombuffer(blob, dtype="<f4", count=n_total * dim, offset=header_size)
    labels = np.frombuffer(blob, dtype="<u4", count=n_total, offset=header_size + feat_bytes)
    return FeatureSet(
        features=features.astype(np.float64).reshape(n_total, dim),
        labels=labels.astype(np.int64),
    )


def load_features(path: str, fmt: str) -> FeatureSet:
    """Load and validate a feature file. ``fmt`` is ``"csv"`` or ``"umfe"``."""
    if fmt == "csv":
        return _load_csv(path)
    if fmt == "umfe":
        return _load_umfe(path)
    raise InvalidInputError(f"unknown feature format {fmt!r}")


def save_features(fs: FeatureSet, path: str, fmt: str) -> None:
    """Serialize a FeatureSet. UMFE casts features to float32 and labels to u32."""
    if fmt == "csv":
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("label," + ",".join(f"f{i}" for i in range(fs.dim)) + "\n")
            for label, row in zip(fs.labels, fs.features):
                fh.write(str(int(label)) + "," + ",".join(repr(float(v)) for v in row) + "\n")
        return
    if fmt == "umfe":
        if fs.labels.size and fs.labels.max() >= 2**32:
            raise InvalidInputError("labels do not fit in u32")
        with open(path, "wb") as fh:
            fh.write(UMFE_MAGIC)
            fh.write(struct.pack("<HII", UMFE_VERSION, fs.n_total, fs.dim))
            fh.write(np.ascontiguousarray(fs.features, dtype="<f4").tobytes())
            fh.write(np.ascontiguousarray(fs.labels, dtype="<u4").tobytes())
        return
    raise InvalidInputError(f"unknown feature format {fmt!r}")
