import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dadh.data import CodeMatrix, pack_codes
from dadh.encoder import MlpEncoder
from dadh.errors import DataError
from dadh.retrieval import (
    HammingIndex,
    average_precision,
    cross_distances,
    encode_queries,
    encode_query,
    hamming_distance,
    mean_average_precision,
    precision_recall_curve,
    search,
    top_k_precision,
)


def random_signs(rng, n, k):
    return np.where(rng.random((n, k)) < 0.5, -1.0, 1.0)


def one_row(cm, i):
    return CodeMatrix(n=1, k=cm.k, words=cm.words[i : i + 1])


def naive_hamming(a_signs, b_signs):
    return int(np.sum(a_signs != b_signs))


def test_hamming_matches_naive_disagreement_count():
    rng = np.random.default_rng(5)
    for k in (1, 16, 63, 64, 65, 128):
        a = random_signs(rng, 6, k)
        b = random_signs(rng, 6, k)
        pa, pb = pack_codes(a), pack_codes(b)
        for i in range(6):
            got = hamming_distance(one_row(pa, i), one_row(pb, i))
            assert got == naive_hamming(a[i], b[i])


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 130))
def test_hamming_identity_with_inner_product(seed, k):
    rng = np.random.default_rng(seed)
    a = random_signs(rng, 1, k)
    b = random_signs(rng, 1, k)
    d = hamming_distance(pack_codes(a), pack_codes(b))
    assert d == (k - int(a[0] @ b[0])) // 2


def test_hamming_rejects_width_mismatch():
    a = pack_codes(np.ones((1, 8)))
    b = pack_codes(np.ones((1, 9)))
    with pytest.raises(ValueError):
        hamming_distance(a, b)


def test_cross_distances_matches_double_loop():
    rng = np.random.default_rng(7)
    q = random_signs(rng, 5, 20)
    db = random_signs(rng, 9, 20)
    got = cross_distances(pack_codes(q), pack_codes(db))
    for i in range(5):
        for j in range(9):
            assert got[i, j] == naive_hamming(q[i], db[j])


def test_search_matches_naive_linear_scan():
    rng = np.random.default_rng(9)
    db = random_signs(rng, 200, 16)
    queries = random_signs(rng, 10, 16)
    index = HammingIndex.build(pack_codes(db))
    for qi in range(10):
        res = search(index, pack_codes(queries[qi : qi + 1]), topk=7)
        ranked = sorted((naive_hamming(queries[qi], row), j) for j, row in enumerate(db))
        expect_ids = [j for _, j in ranked[:7]]
        expect_d = [d for d, _ in ranked[:7]]
        assert res.ids.tolist() == expect_ids
        assert res.distances.tolist() == expect_d


def test_search_breaks_ties_by_id():
    db = np.array([[1.0, 1.0], [1.0, 1.0], [1.0, 1.0], [-1.0, -1.0]])
    index = HammingIndex.build(pack_codes(db))
    res = search(index, pack_codes(np.array([[1.0, 1.0]])), topk=3)
    assert res.ids.tolist() == [0, 1, 2]
    assert res.distances.tolist() == [0, 0, 0]


def test_search_clamps_topk():
    db = pack_codes(np.ones((3, 4)))
    index = HammingIndex.build(db)
    res = search(index, pack_codes(np.ones((1, 4))), topk=10)
    assert res.ids.size == 3


def test_search_rejects_multi_row_query():
    db = HammingIndex.build(pack_codes(np.ones((3, 4))))
    with pytest.raises(ValueError):
        search(db, pack_codes(np.ones((2, 4))), topk=1)


def test_index_rejects_duplicate_ids():
    with pytest.raises(ValueError):
        HammingIndex.build(pack_codes(np.ones((3, 4))), ids=np.array([0, 1, 1]))


def test_average_precision_hand_cases():
    assert average_precision([1, 0, 1, 0]) == pytest.approx(5.0 / 6.0, abs=1e-9)
    assert average_precision([0, 0, 0]) == 0.0
    assert average_precision([1]) == 1.0
    assert average_precision([0, 1]) == pytest.approx(0.5)
    assert average_precision([1, 1, 0]) == pytest.approx(1.0)


def test_average_precision_matches_loop_oracle():
    rng = np.random.default_rng(13)
    for _ in range(10):
        rel = (rng.random(20) < 0.3).astype(int)
        hits = 0
        acc = 0.0
        for r, flag in enumerate(rel, start=1):
            if flag:
                hits += 1
                acc += hits / r
        expect = acc / hits if hits else 0.0
        assert average_precision(rel) == pytest.approx(expect, rel=1e-12)


def ranking_oracle(q_signs, db_signs, q_labels, db_labels, depth=None):
    # brute force: python sort on (distance, position), AP by explicit loop
    depth = len(db_signs) if depth is None else depth
    aps = []
    for qi in range(len(q_signs)):
        order = sorted(range(len(db_signs)),
                       key=lambda j: (naive_hamming(q_signs[qi], db_signs[j]), j))[:depth]
        rel = [1 if set(q_labels[qi]) & set(db_labels[j]) else 0 for j in order]
        hits, acc = 0, 0.0
        for r, flag in enumerate(rel, start=1):
            if flag:
                hits += 1
                acc += hits / r
        aps.append(acc / hits if hits else 0.0)
    return float(np.mean(aps))


def test_mean_average_precision_matches_oracle_fixture():
    rng = np.random.default_rng(17)
    db = random_signs(rng, 10, 8)
    queries = random_signs(rng, 2, 8)
    db_labels = [[i % 3] for i in range(10)]
    q_labels = [[0], [2]]
    got = mean_average_precision(pack_codes(queries), pack_codes(db), q_labels, db_labels)
    expect = ranking_oracle(queries, db, q_labels, db_labels)
    assert got == pytest.approx(expect, rel=1e-12)


def test_mean_average_precision_depth():
    rng = np.random.default_rng(19)
    db = random_signs(rng, 12, 8)
    queries = random_signs(rng, 3, 8)
    db_labels = [[i % 2] for i in range(12)]
    q_labels = [[0], [1], [0]]
    got = mean_average_precision(pack_codes(queries), pack_codes(db), q_labels, db_labels, depth=4)
    expect = ranking_oracle(queries, db, q_labels, db_labels, depth=4)
    assert got == pytest.approx(expect, rel=1e-12)


def test_top_k_precision_hand_case():
    db = np.array([[1.0, 1.0], [1.0, -1.0], [-1.0, -1.0]])
    q = np.array([[1.0, 1.0]])
    # ranked db order: 0 (d=0), 1 (d=1), 2 (d=2)
    got = top_k_precision(pack_codes(q), pack_codes(db), [[0]], [[0], [1], [0]], k=2)
    assert got == pytest.approx(0.5)


def test_labels_shorter_than_codes_raise():
    db = pack_codes(np.ones((3, 4)))
    q = pack_codes(np.ones((2, 4)))
    with pytest.raises(DataError):
        mean_average_precision(q, db, [[0]], [[0], [1], [2]])
    with pytest.raises(DataError):
        mean_average_precision(q, db, [[0], [1]], [[0], [1]])


def test_pr_curve_hand_case():
    db = np.array([[1.0, 1.0], [1.0, -1.0], [-1.0, -1.0]])
    q = np.array([[1.0, 1.0]])
    curve = precision_recall_curve(pack_codes(q), pack_codes(db), [[0]], [[0], [1], [0]])
    # relevant at distances 0 and 2; retrieved counts by radius: 1, 2, 3
    assert curve.radii.tolist() == [0, 1, 2]
    assert curve.precisions == pytest.approx([1.0, 0.5, 2.0 / 3.0])
    assert curve.recalls == pytest.approx([0.5, 0.5, 1.0])
    assert curve.n_excluded == 0


def test_pr_curve_recall_monotone_and_complete():
    rng = np.random.default_rng(23)
    db = random_signs(rng, 40, 12)
    q = random_signs(rng, 6, 12)
    db_labels = [[i % 4] for i in range(40)]
    q_labels = [[i % 4] for i in range(6)]
    curve = precision_recall_curve(pack_codes(q), pack_codes(db), q_labels, db_labels)
    assert np.all(np.diff(curve.recalls) >= 0)
    assert curve.recalls[-1] == pytest.approx(1.0)
    assert np.all((curve.precisions >= 0) & (curve.precisions <= 1))


def test_pr_curve_empty_radii_report_unit_precision():
    db = np.array([[-1.0, -1.0, -1.0]])
    q = np.array([[1.0, 1.0, 1.0]])
    curve = precision_recall_curve(pack_codes(q), pack_codes(db), [[0]], [[0]])
    # nothing lies within radius 0..2, the single relevant item sits at 3
    assert curve.precisions.tolist() == [1.0, 1.0, 1.0, 1.0]
    assert curve.recalls.tolist() == [0.0, 0.0, 0.0, 1.0]


def test_pr_curve_counts_excluded_queries():
    db = np.array([[1.0, 1.0]])
    q = np.array([[1.0, 1.0], [-1.0, -1.0]])
    curve = precision_recall_curve(pack_codes(q), pack_codes(db), [[0], [9]], [[0]])
    assert curve.n_excluded == 1
    with pytest.raises(DataError):
        precision_recall_curve(pack_codes(q), pack_codes(db), [[7], [9]], [[0]])


def bias_encoder(values):
    # zero weights, so the output equals the bias row for any input
    k = len(values)
    return MlpEncoder((3, k), [np.zeros((k, 3))], [np.asarray(values, dtype=float)])


def test_fused_query_signs_average_of_streams():
    enc_f = bias_encoder([0.3, -0.2])
    enc_g = bias_encoder([-0.1, -0.4])
    out = encode_query(np.zeros(3), enc_f, enc_g)
    assert out.tolist() == [1.0, -1.0]  # averages 0.1 and -0.3
    assert encode_query(np.zeros(3), enc_f, enc_g, stream="f").tolist() == [1.0, -1.0]
    assert encode_query(np.zeros(3), enc_f, enc_g, stream="g").tolist() == [-1.0, -1.0]


def test_fused_zero_average_is_positive():
    enc_f = bias_encoder([0.2, -0.5])
    enc_g = bias_encoder([-0.2, 0.5])
    assert encode_query(np.zeros(3), enc_f, enc_g).tolist() == [1.0, 1.0]


def test_encode_queries_batch_matches_single():
    rng = np.random.default_rng(29)
    enc_f = MlpEncoder((3, 4), [rng.standard_normal((4, 3))], [rng.standard_normal(4)])
    enc_g = MlpEncoder((3, 4), [rng.standard_normal((4, 3))], [rng.standard_normal(4)])
    xs = rng.standard_normal((5, 3))
    batch = encode_queries(xs, enc_f, enc_g)
    for i in range(5):
        assert np.array_equal(batch[i], encode_query(xs[i], enc_f, enc_g))


def test_encode_queries_rejects_unknown_stream():
    enc = bias_encoder([0.1])
    with pytest.raises(ValueError):
        encode_queries(np.zeros((1, 3)), enc, enc, stream="both")
