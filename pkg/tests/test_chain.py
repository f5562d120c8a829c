import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from dynspar.chain import (ChainSchedule, build_schedule, ingest_all, make_stacks,
                           recover_sparsifier, schedule_from_bounds, stack_seed,
                           verify_chain_relations)
from dynspar.config import SolveConfig
from dynspar.errors import RecoveryError, SolverError
from dynspar.graph_core import (count_zero_eigenvalues, edge_index,
                                exact_laplacian, random_graph, spectral_certify)


def test_schedule_examples():
    s = build_schedule(4)
    assert (s.lambda_u, s.lambda_l, s.d) == (8.0, 0.5, 4)
    assert build_schedule(100).d == 18
    assert s.gamma(0) == s.lambda_u
    assert s.gammas == [8.0, 4.0, 2.0, 1.0, 0.5, 0.0]
    assert s.num_stacks == 6


@given(st.integers(2, 5000))
def test_schedule_invariants(n):
    s = build_schedule(n)
    assert s.d == math.ceil(math.log2(n**3 / 4))
    assert s.gamma(s.d) <= s.lambda_l
    assert s.gamma(s.d + 1) == 0.0
    g = s.gammas
    assert all(a == 2 * b for a, b in zip(g[:-2], g[1:-1]))


def test_schedule_errors():
    with pytest.raises(IndexError):
        build_schedule(5).gamma(-1)
    with pytest.raises(ValueError):
        ChainSchedule(1.0, 2.0, 3)
    with pytest.raises(ValueError):
        build_schedule(1)


def test_schedule_from_bounds():
    s = schedule_from_bounds(10.0, 1000.0)
    assert s.d == 10 and s.lambda_l == pytest.approx(0.01)
    assert schedule_from_bounds(10.0, 1000.0, levels=3).d == 3


def test_stack_seeds_independent():
    seeds = {stack_seed(1, level) for level in range(20)} | {stack_seed(1, 0, "bit1")}
    assert len(seeds) == 21
    stacks = make_stacks(8, 0.5, 1, build_schedule(8))
    assert [s.gamma for s in stacks] == build_schedule(8).gammas
    assert len({s.seed for s in stacks}) == len(stacks)


# ---------------------------------------------------------------- relations


@given(st.integers(3, 50), st.floats(0.02, 1.0), st.integers(0, 2**32 - 1))
def test_chain_relations_random(n, p, seed):
    edges = random_graph(n, p, np.random.default_rng(seed))
    K = exact_laplacian(edges, n)
    report = verify_chain_relations(K, build_schedule(n))
    assert report.range_relation and report.consecutive and report.base
    assert report.all_pass


def test_eigenvalue_bound_tight_at_two_vertices():
    # a single edge has lambda = 2 = 8 / n^2: the strict bound needs n >= 3
    report = verify_chain_relations(exact_laplacian([0], 2), build_schedule(2))
    assert report.range_relation and report.consecutive and report.base
    assert report.lambda_min == pytest.approx(report.lambda_bound)


def test_relation_two_bounds():
    n = 20
    K = exact_laplacian(random_graph(n, 0.3, np.random.default_rng(0)), n)
    report = verify_chain_relations(K, build_schedule(n))
    lo, hi = report.worst["consecutive"]
    assert 1 - 1e-9 <= lo and hi <= 2 + 1e-9


def test_disconnected_range_only():
    n = 10
    edges = [edge_index(0, 1, n), edge_index(2, 3, n)]
    K = exact_laplacian(edges, n)
    sched = build_schedule(n)
    assert verify_chain_relations(K, sched).range_relation
    # outside range(K) the shifted operator is not bounded by 2K
    x = np.ones(n)
    assert x @ (K + sched.gamma(sched.d) * np.eye(n)) @ x > 2 * (x @ K @ x)


def test_smallest_eigenvalue_bound_n30():
    n = 30
    for seed in range(5):
        K = exact_laplacian(random_graph(n, 0.2, np.random.default_rng(seed)), n)
        report = verify_chain_relations(K, build_schedule(n))
        assert report.lambda_min > 8 / 900


# ---------------------------------------------------------------- recovery


def run(n, edges, seed=0, eps=0.5, **kw):
    stacks = make_stacks(n, eps, seed, build_schedule(n))
    ingest_all(stacks, edges, np.ones(len(edges)))
    return recover_sparsifier(stacks, eps, **kw)


def test_empty_graph_chain():
    n = 12
    H, report = run(n, np.zeros(0, dtype=np.int64), K_exact=np.zeros((n, n)))
    assert H.num_edges == 0 and H.gamma == 0.0
    assert all(m == 0 for m in report.edge_counts)
    assert all(c.passed for c in report.certificates)


def test_every_level_certifies():
    n = 30
    edges = random_graph(n, 0.3, np.random.default_rng(4))
    K = exact_laplacian(edges, n)
    H, report = run(n, edges, seed=4, K_exact=K)
    assert all(c.passed for c in report.certificates)
    assert len(report.lines()) == build_schedule(n).num_stacks
    assert spectral_certify(K, H.laplacian(), 0.5).passed


def test_kernel_preserved_on_disconnected_graph():
    n = 24
    rng = np.random.default_rng(8)
    # two dense blocks with no edges between them
    block = [edge_index(u, v, n) for u in range(12) for v in range(u + 1, 12) if rng.random() < 0.6]
    block += [edge_index(u, v, n) for u in range(12, 24) for v in range(u + 1, 24) if rng.random() < 0.6]
    block = np.array(sorted(block))
    K = exact_laplacian(block, n)
    H, _ = run(n, block, seed=2)
    assert count_zero_eigenvalues(H.laplacian()) == count_zero_eigenvalues(K) == 2
    assert spectral_certify(K, H.laplacian(), 0.5).passed


def test_recovery_error_names_level():
    # level 0 solves against gamma I and converges in one step; level 1 cannot
    n = 15
    edges = random_graph(n, 0.5, np.random.default_rng(0))
    with pytest.raises(RecoveryError) as info:
        run(n, edges, solve=SolveConfig(max_iters=1))
    assert info.value.level == 1
    assert isinstance(info.value.cause, SolverError)


def test_last_stack_must_be_unshifted():
    n = 6
    stacks = make_stacks(n, 0.5, 0, build_schedule(n))[:-1]
    with pytest.raises(ValueError):
        recover_sparsifier(stacks, 0.5)


def test_deterministic_recovery():
    n = 20
    edges = random_graph(n, 0.3, np.random.default_rng(1))
    a, _ = run(n, edges, seed=9)
    b, _ = run(n, edges, seed=9)
    assert a == b
