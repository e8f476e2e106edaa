import itertools

import numpy as np
import pytest

from dadh.data import HyperParams, SimilarityOracle
from dadh.solver import (
    SweepTrace,
    code_linear_term,
    code_objective,
    optimize_codes,
    sign_code_update,
    update_code_column,
)


def dense_code_objective(codes, act_f, act_g, s, n_bits, gamma):
    # independent dense evaluation of the code objective
    return float(
        np.sum((act_f @ codes.T - n_bits * s) ** 2)
        + np.sum((act_g @ codes.T - n_bits * s) ** 2)
        + gamma * (np.sum((act_f - codes) ** 2) + np.sum((act_g - codes) ** 2))
    )


def random_instance(rng, n, k):
    act_f = np.tanh(rng.standard_normal((n, k)))
    act_g = np.tanh(rng.standard_normal((n, k)))
    codes = np.where(rng.random((n, k)) < 0.5, -1.0, 1.0)
    sim = SimilarityOracle([[int(rng.integers(3))] for _ in range(n)])
    return act_f, act_g, codes, sim


def test_code_objective_matches_dense():
    rng = np.random.default_rng(3)
    for _ in range(5):
        n, k = int(rng.integers(2, 9)), int(rng.integers(1, 5))
        act_f, act_g, codes, sim = random_instance(rng, n, k)
        gamma = float(rng.uniform(0, 5))
        got = code_objective(codes, act_f, act_g, sim, k, gamma)
        expect = dense_code_objective(codes, act_f, act_g, sim.block(), k, gamma)
        assert got == pytest.approx(expect, rel=1e-12)


def test_linear_term_matches_dense():
    rng = np.random.default_rng(7)
    for _ in range(5):
        n, k = int(rng.integers(2, 9)), int(rng.integers(1, 5))
        act_f, act_g, _, sim = random_instance(rng, n, k)
        gamma = float(rng.uniform(0, 5))
        got = code_linear_term(act_f, act_g, sim, k, gamma)
        s = sim.block()
        both = act_f + act_g
        expect = -2.0 * k * s.T @ both - 2.0 * gamma * both
        assert np.allclose(got, expect, rtol=1e-12, atol=1e-12)


def test_linear_term_single_sample_hand_value():
    act_f = np.array([[0.5]])
    act_g = np.array([[0.5]])
    sim = SimilarityOracle([{0}])
    lin = code_linear_term(act_f, act_g, sim, n_bits=1, quant_weight=0.0)
    assert lin.shape == (1, 1)
    assert lin[0, 0] == pytest.approx(-2.0)


def enumerate_best_column(codes, col, act_f, act_g, s, n_bits, gamma):
    n = codes.shape[0]
    best = np.inf
    for signs in itertools.product((-1.0, 1.0), repeat=n):
        cand = codes.copy()
        cand[:, col] = signs
        best = min(best, dense_code_objective(cand, act_f, act_g, s, n_bits, gamma))
    return best


def test_column_update_reaches_enumerated_optimum():
    rng = np.random.default_rng(11)
    for _ in range(15):
        n, k = int(rng.integers(2, 7)), int(rng.integers(1, 5))
        act_f, act_g, codes, sim = random_instance(rng, n, k)
        gamma = float(rng.uniform(0, 5))
        col = int(rng.integers(k))
        best = enumerate_best_column(codes, col, act_f, act_g, sim.block(), k, gamma)
        lin = code_linear_term(act_f, act_g, sim, k, gamma)
        update_code_column(codes, col, act_f, act_g, lin)
        got = code_objective(codes, act_f, act_g, sim, k, gamma)
        assert got == pytest.approx(best, rel=1e-9)


def test_column_tie_keeps_previous_bit():
    # zero activations zero out both the coupling and the linear term
    n, k = 4, 3
    act_f = np.zeros((n, k))
    act_g = np.zeros((n, k))
    codes = np.array(
        [[1.0, -1.0, 1.0], [-1.0, 1.0, -1.0], [1.0, 1.0, -1.0], [-1.0, -1.0, 1.0]]
    )
    sim = SimilarityOracle([[0]] * n)
    lin = code_linear_term(act_f, act_g, sim, k, quant_weight=0.0)
    before = codes.copy()
    flips = update_code_column(codes, 1, act_f, act_g, lin)
    assert flips == 0
    assert np.array_equal(codes, before)


def test_single_bit_column_uses_linear_term_only():
    rng = np.random.default_rng(13)
    act_f, act_g, codes, sim = random_instance(rng, 5, 1)
    lin = code_linear_term(act_f, act_g, sim, 1, 2.0)
    update_code_column(codes, 0, act_f, act_g, lin)
    expect = np.where(lin[:, 0] > 0, -1.0, 1.0)  # no zeros in this draw
    assert np.array_equal(codes[:, 0], expect)


def test_optimize_codes_never_increases_objective():
    rng = np.random.default_rng(17)
    for _ in range(10):
        n, k = int(rng.integers(2, 10)), int(rng.integers(1, 6))
        act_f, act_g, codes, sim = random_instance(rng, n, k)
        hp = HyperParams(k=k, gamma=float(rng.uniform(0, 5)), b_sweeps=2)
        trace = SweepTrace()
        optimize_codes(codes, act_f, act_g, sim, hp, trace)
        assert trace.count_increases() == 0
        assert len(trace.objectives) == 2 * k


def test_optimize_codes_reaches_fixed_point():
    rng = np.random.default_rng(19)
    act_f, act_g, codes, sim = random_instance(rng, 8, 4)
    hp = HyperParams(k=4, gamma=2.0, b_sweeps=1)
    for _ in range(12):
        if optimize_codes(codes, act_f, act_g, sim, hp) == 0:
            break
    before = codes.copy()
    val = code_objective(codes, act_f, act_g, sim, 4, 2.0)
    assert optimize_codes(codes, act_f, act_g, sim, hp) == 0
    assert np.array_equal(codes, before)
    assert code_objective(codes, act_f, act_g, sim, 4, 2.0) == val


def test_optimize_codes_updates_in_place_and_validates():
    rng = np.random.default_rng(23)
    act_f, act_g, codes, sim = random_instance(rng, 5, 3)
    hp = HyperParams(k=3)
    same = codes
    optimize_codes(codes, act_f, act_g, sim, hp)
    assert same is codes
    with pytest.raises(ValueError):
        optimize_codes(codes.astype(np.int64), act_f, act_g, sim, hp)
    with pytest.raises(ValueError):
        optimize_codes(np.zeros((5, 3)), act_f, act_g, sim, hp)


def test_sign_update_formula_and_zero_convention():
    act_f = np.array([[0.3, -0.2, 0.0]])
    act_g = np.array([[0.1, -0.1, 0.0]])
    out = sign_code_update(act_f, act_g, 2.0)
    assert out.tolist() == [[1.0, -1.0, 1.0]]
    # zero weight collapses the argument to zero everywhere, so all +1
    assert sign_code_update(act_f, act_g, 0.0).tolist() == [[1.0, 1.0, 1.0]]
    with pytest.raises(ValueError):
        sign_code_update(act_f, act_g, -1.0)


def test_sign_update_minimizes_quantization_terms():
    rng = np.random.default_rng(29)
    act_f = np.tanh(rng.standard_normal((3, 2)))
    act_g = np.tanh(rng.standard_normal((3, 2)))
    got = sign_code_update(act_f, act_g, 1.5)
    best = np.inf
    for flat in itertools.product((-1.0, 1.0), repeat=6):
        cand = np.array(flat).reshape(3, 2)
        best = min(best, float(np.sum((act_f - cand) ** 2) + np.sum((act_g - cand) ** 2)))
    val = float(np.sum((act_f - got) ** 2) + np.sum((act_g - got) ** 2))
    assert val == pytest.approx(best, rel=1e-12)


def test_sweep_trace_counts_increases():
    trace = SweepTrace(initial=10.0, objectives=[9.0, 9.5, 8.0])
    assert trace.count_increases() == 1
    flat = SweepTrace(initial=5.0, objectives=[5.0, 5.0])
    assert flat.count_increases() == 0
