"""Alternating optimization: per-stream SGD epochs and a discrete code step.

Each outer iteration runs one minibatch epoch on the f stream, one on the g
stream, then re-solves the codes with both streams fixed. Activation rows are
refreshed in the shared cache at batch-forward time, so within an epoch the
cache mixes rows from different parameter versions; the code step and the
loss record use the cache as is.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from dadh.data import FeatureDataset, HyperParams, SimilarityOracle, Split
from dadh.encoder import MlpEncoder, backward, forward, init_encoder, sgd_step
from dadh.errors import NumericError
from dadh.objective import ActivationCache, grad_f_rows, grad_g_rows, loss_total
from dadh.solver import SweepTrace, optimize_codes, sign_code_update

EARLY_STOP_REL = 1e-4
EARLY_STOP_PATIENCE = 5
DEFAULT_HIDDEN_DIMS = (512,)


@dataclass(frozen=True)
class LrSchedule:
    """Geometric decay from lr_start at t=0 to lr_end at the last iteration."""

    lr_start: float
    lr_end: float
    outer_iters: int

    @classmethod
    def from_hyperparams(cls, hp: HyperParams) -> "LrSchedule":
        return cls(lr_start=hp.lr_start, lr_end=hp.lr_end, outer_iters=hp.outer_iters)


def lr_at(schedule: LrSchedule, t: int) -> float:
    if not 0 <= t < schedule.outer_iters:
        raise ValueError(f"iteration {t} outside [0, {schedule.outer_iters})")
    if schedule.outer_iters == 1:
        return schedule.lr_start
    frac = t / (schedule.outer_iters - 1)
    return schedule.lr_start * (schedule.lr_end / schedule.lr_start) ** frac


@dataclass
class TrainState:
    """Everything a run produces, growing in place as iterations finish."""

    encoder_f: MlpEncoder
    encoder_g: MlpEncoder
    codes: np.ndarray
    cache: ActivationCache
    train_ids: np.ndarray
    iterations: int = 0
    history: list = field(default_factory=list)
    lr_history: list = field(default_factory=list)
    code_flips: list = field(default_factory=list)
    code_violations: list = field(default_factory=list)
    phase_seconds: list = field(default_factory=list)
    stopped_early: bool = False


def _epoch(enc, x, rng, batch_size, refresh, make_grad, lr):
    n = x.shape[0]
    order = rng.permutation(n)
    for lo in range(0, n, batch_size):
        batch = order[lo : lo + batch_size]
        out, fc = forward(enc, x[batch])
        refresh(batch, np.tanh(out))
        d_rows = make_grad(batch)
        grads = backward(enc, fc, d_rows)
        sgd_step(enc, grads, lr)


def _run(ds, split, hp, hidden_dims, on_iteration, ablate):
    train_ids = np.asarray(split.train_ids, dtype=np.int64)
    x = ds.features[train_ids]
    sim = SimilarityOracle.from_dataset(ds, train_ids)
    n = train_ids.size
    dims = (ds.dim, *tuple(int(d) for d in hidden_dims), hp.k)
    seed_f, seed_g, seed_batch = np.random.SeedSequence(hp.seed).spawn(3)
    enc_f = init_encoder(dims, seed_f)
    enc_g = init_encoder(dims, seed_g)
    rng = np.random.default_rng(seed_batch)
    schedule = LrSchedule.from_hyperparams(hp)

    # Codes start at zero so the first two encoder epochs see no code pull;
    # the zero rows enter the first code step as their packed +1 stand-in.
    codes = np.zeros((n, hp.k))
    cache = ActivationCache(n, hp.k)
    all_rows = np.arange(n)
    cache.refresh_f(all_rows, np.tanh(forward(enc_f, x)[0]))
    cache.refresh_g(all_rows, np.tanh(forward(enc_g, x)[0]))
    state = TrainState(
        encoder_f=enc_f, encoder_g=enc_g, codes=codes, cache=cache, train_ids=train_ids
    )

    include_asym = not ablate
    flat_count = 0
    prev_total = None
    for t in range(hp.outer_iters):
        lr = lr_at(schedule, t)
        t0 = time.perf_counter()
        _epoch(
            enc_f, x, rng, hp.batch, cache.refresh_f,
            lambda batch: grad_f_rows(batch, cache.f, cache.g, codes, sim, hp, include_asym),
            lr,
        )
        t1 = time.perf_counter()
        _epoch(
            enc_g, x, rng, hp.batch, cache.refresh_g,
            lambda batch: grad_g_rows(batch, cache.f, cache.g, codes, sim, hp, include_asym),
            lr,
        )
        t2 = time.perf_counter()
        if t == 0:
            codes[:] = 1.0
        if ablate:
            new_codes = sign_code_update(cache.f, cache.g, hp.gamma)
            flips = int(np.count_nonzero(new_codes != codes))
            codes[:] = new_codes
            violations = 0
        else:
            trace = SweepTrace()
            flips = optimize_codes(codes, cache.f, cache.g, sim, hp, trace)
            violations = trace.count_increases()
            if violations:
                raise AssertionError(
                    f"iteration {t}: code step increased its objective {violations} times"
                )
        t3 = time.perf_counter()

        breakdown = loss_total(cache.f, cache.g, codes, sim, hp, include_asym)
        if not np.isfinite(breakdown.total):
            raise NumericError(f"iteration {t}: loss became non-finite")
        state.history.append(breakdown)
        state.lr_history.append(lr)
        state.code_flips.append(flips)
        state.code_violations.append(violations)
        state.phase_seconds.append(
            {"stream_f": t1 - t0, "stream_g": t2 - t1, "codes": t3 - t2}
        )
        state.iterations = t + 1
        if on_iteration is not None:
            on_iteration(state)

        if prev_total is not None:
            rel = abs(breakdown.total - prev_total) / max(abs(prev_total), 1e-12)
            flat_count = flat_count + 1 if rel < EARLY_STOP_REL else 0
            if flat_count >= EARLY_STOP_PATIENCE:
                state.stopped_early = True
                break
        prev_total = breakdown.total
    return state


def train(ds: FeatureDataset, split: Split, hp: HyperParams,
          hidden_dims=DEFAULT_HIDDEN_DIMS, on_iteration=None) -> TrainState:
    """Full alternating run; the code step minimizes the code objective by
    cyclic column descent."""
    return _run(ds, split, hp, hidden_dims, on_iteration, ablate=False)


def train_ablated(ds: FeatureDataset, split: Split, hp: HyperParams,
                  hidden_dims=DEFAULT_HIDDEN_DIMS, on_iteration=None) -> TrainState:
    """Diagnostic variant: drops both code-fitting terms from the loss and
    replaces the code step with the quantization-only sign update."""
    return _run(ds, split, hp, hidden_dims, on_iteration, ablate=True)


def run_summary(state: TrainState) -> dict:
    """JSON-ready record of a finished run."""
    return {
        "iterations": state.iterations,
        "stopped_early": state.stopped_early,
        "loss_history": [b.as_dict() for b in state.history],
        "lr_history": state.lr_history,
        "code_flips": state.code_flips,
        "code_violations": state.code_violations,
        "phase_seconds": state.phase_seconds,
    }
