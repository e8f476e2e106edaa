"""Bit-packed Hamming search and ranking metrics.

Distances come from XOR plus popcount over the packed words; zero padding
past k never contributes. Rankings break distance ties by ascending id so
results are reproducible across runs and platforms.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from dadh.data import CodeMatrix, _as_label_sets, sign_pm1
from dadh.encoder import MlpEncoder, forward
from dadh.errors import DataError

_QUERY_CHUNK = 256


def encode_queries(xs, enc_f: MlpEncoder, enc_g: MlpEncoder, stream: str = "fused") -> np.ndarray:
    """Out-of-sample codes as a dense sign matrix. The fused stream takes the
    sign of the averaged raw outputs; "f" and "g" use a single stream."""
    if enc_f.input_dim != enc_g.input_dim or enc_f.output_dim != enc_g.output_dim:
        raise ValueError("encoder streams disagree on input or output width")
    xs = np.atleast_2d(np.asarray(xs, dtype=np.float64))
    if stream == "fused":
        scores = 0.5 * (forward(enc_f, xs)[0] + forward(enc_g, xs)[0])
    elif stream == "f":
        scores = forward(enc_f, xs)[0]
    elif stream == "g":
        scores = forward(enc_g, xs)[0]
    else:
        raise ValueError(f"stream must be 'fused', 'f', or 'g', got {stream!r}")
    return sign_pm1(scores)


def encode_query(x, enc_f: MlpEncoder, enc_g: MlpEncoder, stream: str = "fused") -> np.ndarray:
    """Single-sample convenience wrapper; returns a length-k sign vector."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise ValueError(f"expected a single feature vector, got shape {x.shape}")
    return encode_queries(x[None, :], enc_f, enc_g, stream)[0]


def hamming_distance(a: CodeMatrix, b: CodeMatrix) -> int:
    """Distance between two single packed codes of equal width."""
    if a.k != b.k:
        raise ValueError(f"code widths differ: {a.k} vs {b.k}")
    if a.n != 1 or b.n != 1:
        raise ValueError("hamming_distance takes single-row code matrices")
    return int(np.bitwise_count(a.words[0] ^ b.words[0]).sum())


def cross_distances(queries: CodeMatrix, db: CodeMatrix) -> np.ndarray:
    """All pairwise Hamming distances as an (n_queries, n_db) int64 matrix,
    chunked over queries to bound memory."""
    if queries.k != db.k:
        raise ValueError(f"code widths differ: {queries.k} vs {db.k}")
    out = np.empty((queries.n, db.n), dtype=np.int64)
    for lo in range(0, queries.n, _QUERY_CHUNK):
        hi = min(lo + _QUERY_CHUNK, queries.n)
        xor = queries.words[lo:hi, None, :] ^ db.words[None, :, :]
        out[lo:hi] = np.bitwise_count(xor).sum(axis=2, dtype=np.int64)
    return out


@dataclass(frozen=True)
class HammingIndex:
    """Packed database codes with stable integer ids (row order by default)."""

    codes: CodeMatrix
    ids: np.ndarray

    @classmethod
    def build(cls, codes: CodeMatrix, ids=None) -> "HammingIndex":
        if ids is None:
            ids = np.arange(codes.n, dtype=np.int64)
        else:
            ids = np.asarray(ids, dtype=np.int64)
            if ids.shape != (codes.n,):
                raise ValueError(f"need {codes.n} ids, got shape {ids.shape}")
            if np.unique(ids).size != ids.size:
                raise ValueError("ids must be unique")
        ids = ids.copy()
        ids.setflags(write=False)
        return cls(codes=codes, ids=ids)


@dataclass(frozen=True)
class RetrievalResult:
    ids: np.ndarray
    distances: np.ndarray


def search(index: HammingIndex, query: CodeMatrix, topk: int) -> RetrievalResult:
    """Top matches for one packed query, ordered by (distance, id) ascending.
    topk larger than the database returns everything."""
    if query.n != 1:
        raise ValueError("search takes a single-row query code")
    if topk < 1:
        raise ValueError(f"topk must be >= 1, got {topk}")
    d = cross_distances(query, index.codes)[0]
    order = np.lexsort((index.ids, d))[: min(topk, index.codes.n)]
    return RetrievalResult(ids=index.ids[order], distances=d[order])


def _relevance(query_labels, db_labels) -> np.ndarray:
    """Boolean matrix: query i relevant to db j iff their label sets meet."""
    qsets = _as_label_sets(query_labels)
    dsets = _as_label_sets(db_labels)
    vocab = sorted(set().union(*qsets, *dsets))
    col = {v: i for i, v in enumerate(vocab)}
    qm = np.zeros((len(qsets), len(vocab)))
    dm = np.zeros((len(dsets), len(vocab)))
    for i, ls in enumerate(qsets):
        for v in ls:
            qm[i, col[v]] = 1.0
    for j, ls in enumerate(dsets):
        for v in ls:
            dm[j, col[v]] = 1.0
    return (qm @ dm.T) > 0.0


def _check_labels(labels, n, what) -> list:
    labels = list(labels)
    if len(labels) < n:
        raise DataError(f"{len(labels)} {what} label sets but {n} codes")
    return labels[:n]


def average_precision(rel) -> float:
    """AP of one ranked relevance list: mean of precision at each relevant
    rank, divided by the number of relevant items in the list; 0 when the
    list holds none."""
    rel = np.asarray(rel, dtype=bool).astype(np.float64)
    if rel.ndim != 1:
        raise ValueError("relevance list must be 1-d")
    hits = rel.sum()
    if hits == 0:
        return 0.0
    prec = np.cumsum(rel) / np.arange(1, rel.size + 1)
    return float((prec * rel).sum() / hits)


def _ranked_relevance(query_codes, db_codes, query_labels, db_labels, depth):
    if query_codes.k != db_codes.k:
        raise ValueError(f"code widths differ: {query_codes.k} vs {db_codes.k}")
    if query_codes.n < 1 or db_codes.n < 1:
        raise DataError("need at least one query and one database code")
    qlab = _check_labels(query_labels, query_codes.n, "query")
    dlab = _check_labels(db_labels, db_codes.n, "database")
    rel = _relevance(qlab, dlab)
    d = cross_distances(query_codes, db_codes)
    db_pos = np.arange(db_codes.n)
    depth = db_codes.n if depth is None else min(int(depth), db_codes.n)
    if depth < 1:
        raise ValueError(f"depth must be >= 1, got {depth}")
    ranked = np.empty((query_codes.n, depth), dtype=bool)
    for qi in range(query_codes.n):
        order = np.lexsort((db_pos, d[qi]))[:depth]
        ranked[qi] = rel[qi, order]
    return ranked, rel, d


def mean_average_precision(query_codes: CodeMatrix, db_codes: CodeMatrix,
                           query_labels, db_labels, depth=None) -> float:
    """Mean AP over all queries; depth truncates each ranked list."""
    ranked, _, _ = _ranked_relevance(query_codes, db_codes, query_labels, db_labels, depth)
    return float(np.mean([average_precision(row) for row in ranked]))


def top_k_precision(query_codes: CodeMatrix, db_codes: CodeMatrix,
                    query_labels, db_labels, k: int) -> float:
    """Mean fraction of relevant items within the first k ranked results."""
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    ranked, _, _ = _ranked_relevance(query_codes, db_codes, query_labels, db_labels, k)
    return float(ranked.mean())


@dataclass(frozen=True)
class PrCurve:
    """Micro-averaged precision/recall per Hamming radius 0..k. Queries with
    no relevant database item are skipped; n_excluded counts them."""

    radii: np.ndarray
    precisions: np.ndarray
    recalls: np.ndarray
    n_queries: int
    n_excluded: int

    def write_csv(self, path) -> None:
        with open(path, "w", encoding="ascii", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["radius", "recall", "precision"])
            for r, rc, pr in zip(self.radii, self.recalls, self.precisions):
                writer.writerow([int(r), repr(float(rc)), repr(float(pr))])


def precision_recall_curve(query_codes: CodeMatrix, db_codes: CodeMatrix,
                           query_labels, db_labels) -> PrCurve:
    """Sweep retrieval radius over 0..k, pooling hits and retrieved counts
    across queries. Radii that retrieve nothing report precision 1.0."""
    _, rel, d = _ranked_relevance(query_codes, db_codes, query_labels, db_labels, depth=1)
    included = rel.sum(axis=1) > 0
    n_excluded = int(query_codes.n - included.sum())
    if not included.any():
        raise DataError("every query has zero relevant database items")
    d_inc = d[included]
    rel_inc = rel[included]
    m = d_inc.shape[0]
    k = query_codes.k
    ret_hist = np.zeros((m, k + 1))
    tp_hist = np.zeros((m, k + 1))
    np.add.at(ret_hist, (np.arange(m)[:, None], d_inc), 1.0)
    rows, cols = np.nonzero(rel_inc)
    np.add.at(tp_hist, (rows, d_inc[rows, cols]), 1.0)
    ret_cum = ret_hist.cumsum(axis=1).sum(axis=0)
    tp_cum = tp_hist.cumsum(axis=1).sum(axis=0)
    total_rel = float(rel_inc.sum())
    precisions = np.where(ret_cum > 0, tp_cum / np.maximum(ret_cum, 1.0), 1.0)
    recalls = tp_cum / total_rel
    return PrCurve(
        radii=np.arange(k + 1),
        precisions=precisions,
        recalls=recalls,
        n_queries=int(query_codes.n),
        n_excluded=n_excluded,
    )
