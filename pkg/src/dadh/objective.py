"""Training objective and its analytic gradients.

Writing A_f = tanh(F) and A_g = tanh(G) for the two streams' raw outputs over
the n training rows, B for the n-by-k sign codes, and S for the +1/-1
similarity signs, the total loss is

    ||A_f B^T - k S||^2 + ||A_g B^T - k S||^2
    + tau * nll(A_f, A_g, S)
    + gamma * (||A_f - B||^2 + ||A_g - B||^2)
    + eta * (||column sums of A_f||^2 + ||column sums of A_g||^2)

where nll is the negative Bernoulli log likelihood of the 0/1 similarity
under p(similar) = sigmoid of half the cross-stream inner product. Similarity
blocks stay row-chunked so the dense n-by-n matrix is never materialized.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from dadh.data import HyperParams, SimilarityOracle
from dadh.errors import NumericError

_CHUNK = 512


def stable_sigmoid(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def softplus(x) -> np.ndarray:
    """log(1 + exp(x)) without overflow for large |x|."""
    x = np.asarray(x, dtype=np.float64)
    return np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))


def pair_logit(u_row, v_row) -> float:
    """Half the inner product of two relaxed code rows; the logit of the
    similarity likelihood."""
    u_row = np.asarray(u_row, dtype=np.float64)
    v_row = np.asarray(v_row, dtype=np.float64)
    if u_row.shape != v_row.shape or u_row.ndim != 1:
        raise ValueError(f"rows must share a 1-d shape, got {u_row.shape} and {v_row.shape}")
    return 0.5 * float(u_row @ v_row)


def _check_streams(act_f, act_g):
    act_f = np.asarray(act_f, dtype=np.float64)
    act_g = np.asarray(act_g, dtype=np.float64)
    if act_f.ndim != 2 or act_f.shape != act_g.shape:
        raise ValueError(
            f"stream activations must share a 2-d shape, got {act_f.shape} and {act_g.shape}"
        )
    return act_f, act_g


def pairwise_nll(act_f, act_g, sim: SimilarityOracle) -> float:
    """Negative log likelihood of all n^2 similarity signs."""
    act_f, act_g = _check_streams(act_f, act_g)
    n = act_f.shape[0]
    if sim.n != n:
        raise ValueError(f"similarity oracle covers {sim.n} rows, activations {n}")
    total = 0.0
    for lo in range(0, n, _CHUNK):
        rows = np.arange(lo, min(lo + _CHUNK, n))
        logits = 0.5 * act_f[rows] @ act_g.T
        s01 = 0.5 * (sim.block(rows) + 1.0)
        total += float((softplus(logits) - s01 * logits).sum())
    return total


@dataclass(frozen=True)
class LossBreakdown:
    """Per-term values before weighting, plus the weighted total."""

    asym_f: float
    asym_g: float
    pairwise: float
    quant_f: float
    quant_g: float
    balance: float
    total: float

    def as_dict(self) -> dict:
        return {
            "asym_f": self.asym_f,
            "asym_g": self.asym_g,
            "pairwise": self.pairwise,
            "quant_f": self.quant_f,
            "quant_g": self.quant_g,
            "balance": self.balance,
            "total": self.total,
        }


def loss_total(act_f, act_g, codes, sim: SimilarityOracle, hp: HyperParams,
               include_asym: bool = True) -> LossBreakdown:
    """Evaluate every term over the full training set."""
    act_f, act_g = _check_streams(act_f, act_g)
    codes = np.asarray(codes, dtype=np.float64)
    n, k = act_f.shape
    if codes.shape != (n, k):
        raise ValueError(f"codes shape {codes.shape} != {(n, k)}")
    if sim.n != n:
        raise ValueError(f"similarity oracle covers {sim.n} rows, activations {n}")
    if hp.k != k:
        raise ValueError(f"hp.k = {hp.k} but activations have {k} columns")
    asym_f = asym_g = pairwise = 0.0
    for lo in range(0, n, _CHUNK):
        rows = np.arange(lo, min(lo + _CHUNK, n))
        s = sim.block(rows)
        if include_asym:
            asym_f += float(((act_f[rows] @ codes.T - k * s) ** 2).sum())
            asym_g += float(((act_g[rows] @ codes.T - k * s) ** 2).sum())
        logits = 0.5 * act_f[rows] @ act_g.T
        s01 = 0.5 * (s + 1.0)
        pairwise += float((softplus(logits) - s01 * logits).sum())
    quant_f = float(((act_f - codes) ** 2).sum())
    quant_g = float(((act_g - codes) ** 2).sum())
    balance = float((act_f.sum(axis=0) ** 2).sum() + (act_g.sum(axis=0) ** 2).sum())
    total = (
        asym_f + asym_g
        + hp.tau * pairwise
        + hp.gamma * (quant_f + quant_g)
        + hp.eta * balance
    )
    if not np.isfinite(total):
        raise NumericError("loss is non-finite")
    return LossBreakdown(
        asym_f=asym_f, asym_g=asym_g, pairwise=pairwise,
        quant_f=quant_f, quant_g=quant_g, balance=balance, total=total,
    )


def _grad_rows(batch_ids, act_self, act_other, codes, sim, hp, include_asym):
    batch_ids = np.asarray(batch_ids, dtype=np.int64)
    act_self, act_other = _check_streams(act_self, act_other)
    codes = np.asarray(codes, dtype=np.float64)
    n, k = act_self.shape
    if batch_ids.ndim != 1:
        raise ValueError("batch_ids must be 1-d")
    if batch_ids.size and (batch_ids.min() < 0 or batch_ids.max() >= n):
        raise IndexError(f"batch id out of range [0, {n})")
    if codes.shape != (n, k):
        raise ValueError(f"codes shape {codes.shape} != {(n, k)}")
    if hp.k != k:
        raise ValueError(f"hp.k = {hp.k} but activations have {k} columns")
    a = act_self[batch_ids]
    s = sim.block(batch_ids)
    pre = np.zeros_like(a)
    if include_asym:
        pre += 2.0 * (a @ codes.T - k * s) @ codes
    logits = 0.5 * a @ act_other.T
    s01 = 0.5 * (s + 1.0)
    pre += 0.5 * hp.tau * (stable_sigmoid(logits) - s01) @ act_other
    pre += 2.0 * hp.gamma * (a - codes[batch_ids])
    pre += 2.0 * hp.eta * act_self.sum(axis=0)
    return pre * (1.0 - a * a)


def grad_f_rows(batch_ids, act_f, act_g, codes, sim: SimilarityOracle, hp: HyperParams,
                include_asym: bool = True) -> np.ndarray:
    """d(total loss)/d(raw stream-f outputs) for the given training rows,
    holding the other stream and the codes fixed."""
    return _grad_rows(batch_ids, act_f, act_g, codes, sim, hp, include_asym)


def grad_g_rows(batch_ids, act_f, act_g, codes, sim: SimilarityOracle, hp: HyperParams,
                include_asym: bool = True) -> np.ndarray:
    """Mirror of grad_f_rows for the g stream; the likelihood part pairs each
    g row against every f row."""
    return _grad_rows(batch_ids, act_g, act_f, codes, sim, hp, include_asym)


class ActivationCache:
    """tanh outputs of both streams over the training rows, refreshed in
    place batch by batch. Stamp arrays count refreshes per row, so rows mix
    activations from different parameter versions within an epoch."""

    def __init__(self, n: int, k: int):
        if n < 1 or k < 1:
            raise ValueError(f"bad cache shape n={n}, k={k}")
        self.f = np.zeros((n, k))
        self.g = np.zeros((n, k))
        self.f_stamp = np.zeros(n, dtype=np.int64)
        self.g_stamp = np.zeros(n, dtype=np.int64)

    @property
    def n(self) -> int:
        return self.f.shape[0]

    def refresh_f(self, ids, rows) -> None:
        ids = np.asarray(ids, dtype=np.int64)
        rows = np.asarray(rows, dtype=np.float64)
        if rows.shape != (ids.size, self.f.shape[1]):
            raise ValueError(f"row block shape {rows.shape} does not match ids")
        self.f[ids] = rows
        self.f_stamp[ids] += 1

    def refresh_g(self, ids, rows) -> None:
        ids = np.asarray(ids, dtype=np.int64)
        rows = np.asarray(rows, dtype=np.float64)
        if rows.shape != (ids.size, self.g.shape[1]):
            raise ValueError(f"row block shape {rows.shape} does not match ids")
        self.g[ids] = rows
        self.g_stamp[ids] += 1
