"""Datasets, label similarity, bit-packed codes, and on-disk formats.

Sample ids are row indices into the feature matrix. All binary formats are
little-endian regardless of host byte order.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass

import numpy as np

from dadh.errors import DataError

WORD_BITS = 64
FORMAT_VERSION = 1
FEATURE_MAGIC = b"DADH"
CODES_MAGIC = b"DADHCODE"

_WORD_DTYPE = np.dtype("<u8")


def sign_pm1(x):
    """Elementwise sign into {-1.0, +1.0}, with sign(0) = +1."""
    return np.where(np.asarray(x, dtype=np.float64) >= 0.0, 1.0, -1.0)


def _as_label_sets(labels) -> tuple[frozenset, ...]:
    out = []
    for i, ls in enumerate(labels):
        s = frozenset(int(v) for v in ls)
        if not s:
            raise DataError(f"sample {i} has no labels")
        if any(v < 0 for v in s):
            raise DataError(f"sample {i} has a negative label")
        out.append(s)
    return tuple(out)


class FeatureDataset:
    """Real-valued feature rows paired with non-empty label sets."""

    def __init__(self, features, labels):
        features = np.array(features, dtype=np.float64, order="C")
        if features.ndim != 2 or min(features.shape) < 1:
            raise ValueError(f"features must be a non-empty 2-d matrix, got shape {features.shape}")
        if not np.isfinite(features).all():
            raise DataError("features contain non-finite values")
        self.labels = _as_label_sets(labels)
        if len(self.labels) != features.shape[0]:
            raise DataError(
                f"{features.shape[0]} feature rows but {len(self.labels)} label sets"
            )
        features.setflags(write=False)
        self.features = features

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def ids(self) -> np.ndarray:
        return np.arange(self.n, dtype=np.int64)


def _check_ids(ids, n) -> np.ndarray:
    ids = np.asarray(ids, dtype=np.int64)
    if ids.ndim != 1:
        raise ValueError("id list must be 1-d")
    if ids.size and (ids.min() < 0 or ids.max() >= n):
        raise IndexError(f"sample id out of range [0, {n})")
    return ids


class SimilarityOracle:
    """Pairwise +1/-1 similarity: +1 iff two samples share at least one label.

    Holds an n-by-vocabulary membership table and materializes similarity
    blocks on demand, never the full n-by-n matrix.
    """

    def __init__(self, labels):
        self.labels = _as_label_sets(labels)
        vocab = sorted(set().union(*self.labels))
        col = {v: i for i, v in enumerate(vocab)}
        members = np.zeros((len(self.labels), len(vocab)), dtype=np.float64)
        for i, ls in enumerate(self.labels):
            for v in ls:
                members[i, col[v]] = 1.0
        members.setflags(write=False)
        self._members = members

    @property
    def n(self) -> int:
        return len(self.labels)

    @classmethod
    def from_dataset(cls, ds: FeatureDataset, ids=None) -> "SimilarityOracle":
        if ids is None:
            return cls(ds.labels)
        ids = _check_ids(ids, ds.n)
        return cls([ds.labels[i] for i in ids])

    def similarity(self, a: int, b: int) -> float:
        a, b = int(a), int(b)
        for i in (a, b):
            if not 0 <= i < self.n:
                raise IndexError(f"sample id {i} out of range [0, {self.n})")
        return 1.0 if self.labels[a] & self.labels[b] else -1.0

    def block(self, rows=None, cols=None) -> np.ndarray:
        """Similarity sub-matrix for the given row/column ids (all when None)."""
        rows = np.arange(self.n) if rows is None else _check_ids(rows, self.n)
        cols = np.arange(self.n) if cols is None else _check_ids(cols, self.n)
        counts = self._members[rows] @ self._members[cols].T
        return np.where(counts > 0.0, 1.0, -1.0)


@dataclass(frozen=True)
class CodeMatrix:
    """n binary codes of k bits packed into little-endian uint64 words.

    Bit value 1 means +1 and 0 means -1. Bit j of row word w addresses code
    column w * 64 + j; bits past k in the last word are zero.
    """

    n: int
    k: int
    words: np.ndarray

    def __post_init__(self):
        if self.n < 0 or self.k < 1:
            raise ValueError(f"bad code shape n={self.n}, k={self.k}")
        if self.words.dtype != _WORD_DTYPE or self.words.shape != (self.n, self.words_per_row):
            raise ValueError("words must be a little-endian uint64 matrix of packed rows")
        pad = self.words_per_row * WORD_BITS - self.k
        if pad and self.n and int(self.words[:, -1].max()) >> (WORD_BITS - pad):
            raise DataError("padding bits past k must be zero")
        self.words.setflags(write=False)

    @property
    def words_per_row(self) -> int:
        return (self.k + WORD_BITS - 1) // WORD_BITS

    def unpack(self) -> np.ndarray:
        """Expand back to a dense n-by-k matrix of -1.0 / +1.0."""
        raw = np.ascontiguousarray(self.words).view(np.uint8).reshape(self.n, -1)
        bits = np.unpackbits(raw, axis=1, bitorder="little")[:, : self.k]
        return bits.astype(np.float64) * 2.0 - 1.0


def pack_codes(signs) -> CodeMatrix:
    """Pack a dense matrix with entries in {-1, +1} into a CodeMatrix."""
    signs = np.asarray(signs, dtype=np.float64)
    if signs.ndim != 2 or signs.shape[1] < 1:
        raise ValueError(f"expected a 2-d sign matrix, got shape {signs.shape}")
    if signs.size and not np.all(np.abs(signs) == 1.0):
        raise ValueError("code entries must be -1 or +1")
    n, k = signs.shape
    wpr = (k + WORD_BITS - 1) // WORD_BITS
    bits = np.zeros((n, wpr * WORD_BITS), dtype=np.uint8)
    bits[:, :k] = signs > 0
    packed = np.packbits(bits, axis=1, bitorder="little")
    words = np.ascontiguousarray(packed).view(_WORD_DTYPE).reshape(n, wpr)
    return CodeMatrix(n=n, k=k, words=words)


@dataclass(frozen=True)
class Split:
    """Disjoint query set plus a retrieval database; train ids come from the
    retrieval side."""

    train_ids: np.ndarray
    retrieval_ids: np.ndarray
    query_ids: np.ndarray

    def __post_init__(self):
        for name in ("train_ids", "retrieval_ids", "query_ids"):
            ids = np.asarray(getattr(self, name), dtype=np.int64)
            if ids.ndim != 1 or ids.size < 1:
                raise ValueError(f"{name} must be a non-empty 1-d id list")
            if ids.min() < 0:
                raise ValueError(f"{name} contains a negative id")
            if np.unique(ids).size != ids.size:
                raise ValueError(f"{name} contains duplicate ids")
            ids.setflags(write=False)
            object.__setattr__(self, name, ids)
        if np.intersect1d(self.query_ids, self.retrieval_ids).size:
            raise ValueError("query and retrieval sets overlap")
        if np.setdiff1d(self.train_ids, self.retrieval_ids).size:
            raise ValueError("train ids must be a subset of the retrieval ids")


def split_dataset(ds: FeatureDataset, n_query: int, n_train: int, seed: int) -> Split:
    """Sample a query/retrieval partition and a training subset of the
    retrieval side. Reproducible for a fixed seed."""
    if not 1 <= n_query <= ds.n - 1:
        raise ValueError(f"n_query must be in [1, {ds.n - 1}], got {n_query}")
    if not 1 <= n_train <= ds.n - n_query:
        raise ValueError(f"n_train must be in [1, {ds.n - n_query}], got {n_train}")
    rng = np.random.default_rng(seed)
    order = rng.permutation(ds.n)
    query = np.sort(order[:n_query])
    retrieval = np.sort(order[n_query:])
    train = np.sort(rng.choice(retrieval, size=n_train, replace=False))
    return Split(train_ids=train, retrieval_ids=retrieval, query_ids=query)


@dataclass(frozen=True)
class HyperParams:
    """Training weights and sizes. tau scales the pairwise likelihood, gamma
    the quantization penalty, eta the bit-balance penalty."""

    k: int
    tau: float = 10.0
    gamma: float = 100.0
    eta: float = 10.0
    batch: int = 64
    outer_iters: int = 150
    lr_start: float = 1e-4
    lr_end: float = 1e-6
    b_sweeps: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.k < 1:
            raise ValueError(f"k must be >= 1, got {self.k}")
        for name in ("tau", "gamma", "eta"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        for name in ("batch", "outer_iters", "b_sweeps"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if not 0 < self.lr_end <= self.lr_start:
            raise ValueError("need 0 < lr_end <= lr_start")


def _read_exact(fh, count: int, what: str) -> bytes:
    buf = fh.read(count)
    if len(buf) != count:
        raise DataError(f"truncated file while reading {what}")
    return buf


def write_features(path, features) -> None:
    """Feature matrix file: magic, version, n, d as u32, then float32 rows."""
    features = np.asarray(features)
    if features.ndim != 2:
        raise ValueError("features must be 2-d")
    n, d = features.shape
    with open(path, "wb") as fh:
        fh.write(struct.pack("<4sIII", FEATURE_MAGIC, FORMAT_VERSION, n, d))
        fh.write(np.ascontiguousarray(features, dtype="<f4").tobytes())


def read_features(path) -> np.ndarray:
    """Read a feature matrix file; returns float64 copies of the stored
    float32 values."""
    with open(path, "rb") as fh:
        magic, version, n, d = struct.unpack("<4sIII", _read_exact(fh, 16, "feature header"))
        if magic != FEATURE_MAGIC:
            raise DataError(f"not a feature file: bad magic {magic!r}")
        if version != FORMAT_VERSION:
            raise DataError(f"unsupported feature format version {version}")
        if n < 1 or d < 1:
            raise DataError(f"bad feature shape n={n}, d={d}")
        body = _read_exact(fh, 4 * n * d, "feature rows")
        if fh.read(1):
            raise DataError("trailing bytes after feature rows")
    mat = np.frombuffer(body, dtype="<f4").reshape(n, d).astype(np.float64)
    if not np.isfinite(mat).all():
        raise DataError("features contain non-finite values")
    return mat


def write_labels(path, labels) -> None:
    """Label file: line i holds the space-separated integer labels of sample i."""
    sets = _as_label_sets(labels)
    with open(path, "w", encoding="ascii") as fh:
        for ls in sets:
            fh.write(" ".join(str(v) for v in sorted(ls)) + "\n")


def read_labels(path) -> tuple[frozenset, ...]:
    with open(path, "r", encoding="ascii") as fh:
        lines = fh.read().splitlines()
    while lines and not lines[-1].strip():
        lines.pop()
    sets = []
    for i, line in enumerate(lines):
        parts = line.split()
        if not parts:
            raise DataError(f"label line {i} is empty")
        try:
            sets.append([int(p) for p in parts])
        except ValueError as exc:
            raise DataError(f"label line {i} is not integers: {line!r}") from exc
    if not sets:
        raise DataError("label file is empty")
    return _as_label_sets(sets)


def write_codes(path, codes: CodeMatrix) -> None:
    """Codes dump: magic, version, n, k as u32, then packed rows of u64 words."""
    with open(path, "wb") as fh:
        fh.write(struct.pack("<8sIII", CODES_MAGIC, FORMAT_VERSION, codes.n, codes.k))
        fh.write(np.ascontiguousarray(codes.words, dtype=_WORD_DTYPE).tobytes())


def read_codes(path) -> CodeMatrix:
    with open(path, "rb") as fh:
        magic, version, n, k = struct.unpack("<8sIII", _read_exact(fh, 20, "codes header"))
        if magic != CODES_MAGIC:
            raise DataError(f"not a codes file: bad magic {magic!r}")
        if version != FORMAT_VERSION:
            raise DataError(f"unsupported codes format version {version}")
        if n < 1 or k < 1:
            raise DataError(f"bad codes shape n={n}, k={k}")
        wpr = (k + WORD_BITS - 1) // WORD_BITS
        body = _read_exact(fh, 8 * n * wpr, "code words")
        if fh.read(1):
            raise DataError("trailing bytes after code words")
    words = np.frombuffer(body, dtype=_WORD_DTYPE).reshape(n, wpr).copy()
    try:
        return CodeMatrix(n=n, k=k, words=words)
    except ValueError as exc:
        raise DataError(str(exc)) from exc


def write_split(path, split: Split) -> None:
    payload = {
        "train": [int(i) for i in split.train_ids],
        "retrieval": [int(i) for i in split.retrieval_ids],
        "query": [int(i) for i in split.query_ids],
    }
    with open(path, "w", encoding="ascii") as fh:
        json.dump(payload, fh)
        fh.write("\n")


def read_split(path) -> Split:
    with open(path, "r", encoding="ascii") as fh:
        try:
            payload = json.load(fh)
        except json.JSONDecodeError as exc:
            raise DataError(f"split file is not valid JSON: {exc}") from exc
    if not isinstance(payload, dict):
        raise DataError("split file must hold a JSON object")
    missing = {"train", "retrieval", "query"} - set(payload)
    if missing:
        raise DataError(f"split file missing keys: {sorted(missing)}")
    try:
        return Split(
            train_ids=np.asarray(payload["train"], dtype=np.int64),
            retrieval_ids=np.asarray(payload["retrieval"], dtype=np.int64),
            query_ids=np.asarray(payload["query"], dtype=np.int64),
        )
    except (TypeError, ValueError) as exc:
        raise DataError(f"bad split file: {exc}") from exc


def load_dataset(features_path, labels_path) -> FeatureDataset:
    features = read_features(features_path)
    labels = read_labels(labels_path)
    if len(labels) != features.shape[0]:
        raise DataError(
            f"{features.shape[0]} feature rows but {len(labels)} label lines"
        )
    return FeatureDataset(features, labels)
