"""Discrete code optimization.

With both streams' activations fixed, the code-dependent part of the loss is

    L(B) = ||A_f B^T - k S||^2 + ||A_g B^T - k S||^2
           + gamma * (||A_f - B||^2 + ||A_g - B||^2).

Each code column is updated in closed form while the others stay fixed; the
quadratic piece contributed by the column itself is constant because code
entries square to one, so the column subproblem is linear in its signs.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from dadh.data import HyperParams, SimilarityOracle, sign_pm1
from dadh.objective import _check_streams

_CHUNK = 512


def _check_codes(codes, n, k):
    codes = np.asarray(codes, dtype=np.float64)
    if codes.shape != (n, k):
        raise ValueError(f"codes shape {codes.shape} != {(n, k)}")
    if not np.all(np.abs(codes) == 1.0):
        raise ValueError("code entries must be -1 or +1")
    return codes


def code_objective(codes, act_f, act_g, sim: SimilarityOracle, n_bits: int,
                   quant_weight: float) -> float:
    """Evaluate L(B) above, chunked over similarity rows."""
    act_f, act_g = _check_streams(act_f, act_g)
    n, k = act_f.shape
    if k != n_bits:
        raise ValueError(f"activations have {k} columns but n_bits = {n_bits}")
    codes = _check_codes(codes, n, k)
    total = quant_weight * float(((act_f - codes) ** 2).sum() + ((act_g - codes) ** 2).sum())
    for lo in range(0, n, _CHUNK):
        rows = np.arange(lo, min(lo + _CHUNK, n))
        target = n_bits * sim.block(rows)
        total += float(((act_f[rows] @ codes.T - target) ** 2).sum())
        total += float(((act_g[rows] @ codes.T - target) ** 2).sum())
    return total


def code_linear_term(act_f, act_g, sim: SimilarityOracle, n_bits: int,
                     quant_weight: float) -> np.ndarray:
    """Coefficient matrix of the linear part of L(B):
    -2k S^T (A_f + A_g) - 2 gamma (A_f + A_g), built without a dense S."""
    act_f, act_g = _check_streams(act_f, act_g)
    n, k = act_f.shape
    if k != n_bits:
        raise ValueError(f"activations have {k} columns but n_bits = {n_bits}")
    if sim.n != n:
        raise ValueError(f"similarity oracle covers {sim.n} rows, activations {n}")
    both = act_f + act_g
    lin = -2.0 * quant_weight * both
    for lo in range(0, n, _CHUNK):
        rows = np.arange(lo, min(lo + _CHUNK, n))
        lin -= 2.0 * n_bits * sim.block(rows).T @ both[rows]
    return lin


def update_code_column(codes, col: int, act_f, act_g, lin) -> int:
    """Optimal in-place update of one code column given the others.

    The column minimizer is -sign of (2 B_rest (A_rest^T a_col summed over
    streams) + lin_col); entries whose argument is exactly zero keep their
    previous sign. Returns the number of flipped entries."""
    n, k = codes.shape
    if not 0 <= col < k:
        raise IndexError(f"column {col} out of range [0, {k})")
    rest = np.ones(k, dtype=bool)
    rest[col] = False
    coeff = act_f[:, rest].T @ act_f[:, col] + act_g[:, rest].T @ act_g[:, col]
    arg = 2.0 * codes[:, rest] @ coeff + lin[:, col]
    old = codes[:, col].copy()
    codes[:, col] = np.where(arg > 0.0, -1.0, np.where(arg < 0.0, 1.0, old))
    return int(np.count_nonzero(codes[:, col] != old))


@dataclass
class SweepTrace:
    """Objective value after every column update, for monotonicity checks."""

    initial: float | None = None
    objectives: list = field(default_factory=list)
    flips: list = field(default_factory=list)

    def count_increases(self, rel_tol: float = 1e-9) -> int:
        prev = self.initial
        bad = 0
        for val in self.objectives:
            if prev is not None and val - prev > rel_tol * (1.0 + abs(prev)):
                bad += 1
            prev = val
        return bad


def optimize_codes(codes, act_f, act_g, sim: SimilarityOracle, hp: HyperParams,
                   trace: SweepTrace | None = None) -> int:
    """Run hp.b_sweeps cyclic sweeps over the columns in ascending order,
    updating codes in place. The linear term is rebuilt once per sweep.
    Returns the total number of flipped entries."""
    act_f, act_g = _check_streams(act_f, act_g)
    n, k = act_f.shape
    if not (isinstance(codes, np.ndarray) and codes.dtype == np.float64):
        raise ValueError("codes must be a float64 array; it is updated in place")
    codes_arr = codes
    _check_codes(codes_arr, n, k)
    if hp.k != k:
        raise ValueError(f"hp.k = {hp.k} but activations have {k} columns")
    if trace is not None and trace.initial is None:
        trace.initial = code_objective(codes_arr, act_f, act_g, sim, hp.k, hp.gamma)
    flips = 0
    for _ in range(hp.b_sweeps):
        lin = code_linear_term(act_f, act_g, sim, hp.k, hp.gamma)
        for col in range(k):
            changed = update_code_column(codes_arr, col, act_f, act_g, lin)
            flips += changed
            if trace is not None:
                trace.flips.append(changed)
                trace.objectives.append(
                    code_objective(codes_arr, act_f, act_g, sim, hp.k, hp.gamma)
                )
    return flips


def sign_code_update(act_f, act_g, quant_weight: float) -> np.ndarray:
    """Quantization-only code update: elementwise sign of the weighted stream
    sum, with sign(0) = +1. Globally minimizes the quantization terms alone."""
    act_f, act_g = _check_streams(act_f, act_g)
    if quant_weight < 0:
        raise ValueError(f"quant_weight must be non-negative, got {quant_weight}")
    return sign_pm1(quant_weight * (act_f + act_g))
