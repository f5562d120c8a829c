import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from dynspar.config import Constants
from dynspar.errors import CapacityError, FormatError, SketchMismatchError
from dynspar.graph_core import edge_pairs, incidence_row, num_pairs
from dynspar.hh_sketch import HHParams, HHSketch, sketch_vector


def edge_sketch(n, eta=0.3, seed=7, constants=Constants()):
    return HHSketch(HHParams.for_accuracy(num_pairs(n), eta, seed, constants), n, constants)


def add_edges(sk, edges, signs=None):
    u, v = edge_pairs(np.asarray(edges), sk.n)
    cols = np.stack([u, v], axis=1)
    vals = np.tile([1.0, -1.0], (len(edges), 1))
    sk.update_many(edges, cols, vals, signs)


# ---------------------------------------------------------------- params


def test_params_formula():
    p = HHParams.for_accuracy(10**6, 0.1, 0)
    assert p.buckets >= 32 * 100
    assert p.rows == math.ceil(8 * math.log2(10**6))
    assert p.satisfies()
    with pytest.raises(ValueError):
        HHParams(N=10, eta=1.5, rows=1, buckets=1, seed=0)


def test_capacity_error():
    tiny = Constants(memory_cap=1000)
    with pytest.raises(CapacityError):
        HHSketch(HHParams.for_accuracy(100, 0.1, 0), 50, tiny)


# ---------------------------------------------------------------- new / determinism


def test_empty_sketch_queries_zero(rng):
    sk = edge_sketch(10)
    assert sk.is_empty()
    assert np.all(sk.point_query_many(np.arange(45), rng.standard_normal((45, 10))) == 0)


def test_same_seed_same_hashes():
    a, b = edge_sketch(30, seed=3), edge_sketch(30, seed=3)
    ids = np.arange(num_pairs(30))
    for x, y in zip(a.hashes(ids), b.hashes(ids)):
        assert np.array_equal(x, y)
    c = edge_sketch(30, seed=4)
    assert not np.array_equal(a.hashes(ids)[0], c.hashes(ids)[0])


# ---------------------------------------------------------------- updates


def test_insert_delete_restores_empty():
    sk = edge_sketch(12)
    add_edges(sk, [5, 17])
    add_edges(sk, [5, 17], [-1.0, -1.0])
    assert sk.is_empty()
    assert sk.table_equal(edge_sketch(12))


def test_double_insert_accumulates():
    sk = edge_sketch(6)
    e = 3
    add_edges(sk, [e])
    add_edges(sk, [e])
    bucket, sigma = sk.hashes([e])
    table = sk.table()
    b = incidence_row(e, 6).dense()
    for r in range(sk.rows):
        assert np.array_equal(table[r, bucket[r, 0]], 2 * sigma[r, 0] * b)
    assert sk.nnz == 2 * sk.rows


def test_index_out_of_range():
    sk = edge_sketch(5)
    with pytest.raises(IndexError):
        sk.update(num_pairs(5), [0], [1.0])


@given(st.lists(st.tuples(st.integers(0, num_pairs(15) - 1), st.sampled_from([-1.0, 1.0])),
                max_size=60), st.randoms(use_true_random=False))
def test_permutation_invariance(updates, rnd):
    shuffled = list(updates)
    rnd.shuffle(shuffled)
    a, b = edge_sketch(15), edge_sketch(15)
    for sk, ups in ((a, updates), (b, shuffled)):
        for e, s in ups:
            add_edges(sk, [e], [s])
    assert a.table_equal(b)
    assert a.to_bytes() == b.to_bytes()


# ---------------------------------------------------------------- queries


def test_single_row_query_exact():
    n = 8
    sk = edge_sketch(n)
    e = 11
    add_edges(sk, [e])
    b = incidence_row(e, n).dense()
    assert sk.point_query(e, b) == 2.0


def test_untouched_index_small(rng):
    n = 20
    sk = edge_sketch(n, eta=0.2)
    add_edges(sk, [7])
    y = rng.standard_normal(n)
    x_norm = abs(incidence_row(7, n).dense() @ y)
    others = np.delete(np.arange(num_pairs(n)), 7)
    est = sk.point_query_many(others, np.tile(y, (others.size, 1)))
    assert np.mean(np.abs(est) <= 0.2 * x_norm + 1e-12) >= 0.99


def test_matches_dense_table_query(rng):
    n = 10
    sk = edge_sketch(n)
    edges = rng.choice(num_pairs(n), 20, replace=False)
    add_edges(sk, edges)
    Y = rng.standard_normal((edges.size, n))
    bucket, sigma = sk.hashes(edges)
    table = sk.table()
    brute = np.median(np.array([[sigma[r, j] * table[r, bucket[r, j]] @ Y[j] for j in range(edges.size)]
                                for r in range(sk.rows)]), axis=0)
    assert np.allclose(sk.point_query_many(edges, Y), brute)


def test_vector_sketch_accuracy():
    eta = 0.1
    x = np.random.default_rng(0).standard_normal(1000)
    bad = 0
    for seed in range(100):
        sk = sketch_vector(x, HHParams.for_accuracy(x.size, eta, seed))
        est = sk.point_query_many(np.arange(x.size), np.ones((x.size, 1)))
        bad += np.sum(np.abs(est - x) > eta * np.linalg.norm(x))
    assert bad == 0


def test_norm_estimate_constant_factor(rng):
    x = rng.standard_normal(500)
    sk = sketch_vector(x, HHParams.for_accuracy(x.size, 0.2, 9))
    est = sk.norm_sq_estimates(np.ones((1, 1)))[0]
    assert 0.5 * x @ x <= est <= 1.5 * x @ x


def test_project_is_count_sketch(rng):
    n = 7
    sk = edge_sketch(n)
    edges = np.arange(10)
    add_edges(sk, edges)
    y = rng.standard_normal(n)
    assert np.allclose(sk.project(y), sk.table() @ y)


# ---------------------------------------------------------------- merge


def test_merge_identity_and_commutes(rng):
    a, b = edge_sketch(14), edge_sketch(14)
    add_edges(a, rng.choice(num_pairs(14), 30, replace=False))
    add_edges(b, rng.choice(num_pairs(14), 30, replace=False))
    assert a.merge(edge_sketch(14)).table_equal(a)
    assert (a + b).table_equal(b + a)


def test_merge_split_stream(rng):
    n = 16
    ids = rng.integers(0, num_pairs(n), 200)
    signs = rng.choice([-1.0, 1.0], 200)
    cut = rng.integers(0, 200)
    whole, left, right = edge_sketch(n), edge_sketch(n), edge_sketch(n)
    add_edges(whole, ids, signs)
    add_edges(left, ids[:cut], signs[:cut])
    add_edges(right, ids[cut:], signs[cut:])
    assert left.merge(right).table_equal(whole)


def test_merge_mismatch():
    with pytest.raises(SketchMismatchError):
        edge_sketch(10, seed=1).merge(edge_sketch(10, seed=2))


# ---------------------------------------------------------------- storage


def test_dense_and_sparse_storage_agree(rng):
    n = 40
    dense_cfg = Constants(dense_limit=1 << 40)
    a = edge_sketch(n, eta=0.9, constants=dense_cfg)
    b = edge_sketch(n, eta=0.9, constants=Constants(dense_limit=0))
    ids = np.concatenate([np.arange(num_pairs(n)), rng.integers(0, num_pairs(n), 400)])
    add_edges(a, ids)
    add_edges(b, ids)
    a._compact()
    assert a._dense is not None and b._dense is None
    assert a.table_equal(b)
    assert a.to_bytes() == b.to_bytes()
    Y = rng.standard_normal((5, n))
    assert np.allclose(a.point_query_many(ids[:5], Y), b.point_query_many(ids[:5], Y))
    assert a.nbytes <= 2 * a.params.dense_bytes(n)


def test_serialization_round_trip(rng):
    sk = edge_sketch(11)
    add_edges(sk, rng.choice(num_pairs(11), 25, replace=False))
    blob = sk.to_bytes()
    back, end = HHSketch.from_bytes(blob)
    assert end == len(blob)
    assert back.table_equal(sk) and back.params == sk.params
    with pytest.raises(FormatError):
        HHSketch.from_bytes(b"XXXX" + blob[4:])
    with pytest.raises(FormatError):
        HHSketch.from_bytes(blob[:-8])
