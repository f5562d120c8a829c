import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, strategies as st

from dynspar.config import SolveConfig
from dynspar.errors import DimensionError, SolverError
from dynspar.graph_core import (complete_graph, connected_components, edge_index, exact_laplacian,
                                incidence_matrix, num_pairs, path_graph, random_graph)
from dynspar.sdd_solve import (CoarseOperator, approx_leverage, approx_leverages,
                               dense_pinv_leverages, edge_leverages, solve_pinv)


def connected_graph(n, p, rng):
    while True:
        edges = random_graph(n, p, rng)
        if np.unique(connected_components(n, edges)).size == 1:
            return edges


# ---------------------------------------------------------------- apply


def test_apply_identity(rng):
    x = rng.standard_normal(7)
    assert np.array_equal(CoarseOperator.identity(7, 1.0).apply(x), x)


def test_apply_single_edge():
    op = CoarseOperator.from_edges(4, [edge_index(0, 1, 4)])
    assert np.array_equal(op.apply(np.array([1.0, 0, 0, 0])), [1, -1, 0, 0])


def test_apply_matches_dense(rng):
    n = 50
    edges = random_graph(n, 0.1, rng)
    w = rng.uniform(0.5, 3.0, edges.size)
    op = CoarseOperator.from_edges(n, edges, w, gamma=0.3)
    K = exact_laplacian(edges, n, w) + 0.3 * np.eye(n)
    X = rng.standard_normal((n, 4))
    assert np.allclose(op.apply(X), K @ X, rtol=1e-12, atol=1e-12)
    assert np.allclose(op.dense(), K)


@given(st.integers(0, 2**32 - 1))
def test_apply_linear(seed):
    rng = np.random.default_rng(seed)
    n = 15
    op = CoarseOperator.from_edges(n, random_graph(n, 0.3, rng), gamma=float(rng.uniform(0, 2)))
    x, y = rng.standard_normal(n), rng.standard_normal(n)
    assert np.allclose(op.apply(x + y), op.apply(x) + op.apply(y), atol=1e-12)


def test_scaled_operator():
    op = CoarseOperator.from_edges(5, complete_graph(5), gamma=2.0).scaled(0.25)
    assert np.allclose(op.dense(), 0.25 * (exact_laplacian(complete_graph(5), 5) + 2 * np.eye(5)))
    assert op.gamma == 0.5


def test_dimension_checks():
    op = CoarseOperator.identity(4, 1.0)
    with pytest.raises(DimensionError):
        op.apply(np.ones(5))
    with pytest.raises(DimensionError):
        solve_pinv(op, np.ones(3))


# ---------------------------------------------------------------- solve


def test_solve_identity_exact(rng):
    b = rng.standard_normal(9)
    assert np.allclose(solve_pinv(CoarseOperator.identity(9, 1.0), b), b, rtol=0, atol=1e-14)


def test_solve_path_with_shift():
    n = 3
    op = CoarseOperator.from_edges(n, path_graph(n), gamma=0.5)
    b = incidence_matrix([edge_index(0, 2, n)], n).toarray().ravel()
    K = exact_laplacian(path_graph(n), n) + 0.5 * np.eye(n)
    assert np.allclose(solve_pinv(op, b), np.linalg.solve(K, b), rtol=1e-7)


def test_tree_bridges_have_unit_leverage(rng):
    n = 30
    parents = [int(rng.integers(0, v)) for v in range(1, n)]
    tree = np.array([edge_index(p, v, n) for v, p in zip(range(1, n), parents)])
    lev = edge_leverages(CoarseOperator.from_edges(n, tree), tree)
    assert np.allclose(lev, 1.0, atol=1e-6)


@given(st.integers(0, 2**32 - 1), st.sampled_from([0.0, 0.1, 1.0]))
def test_solve_then_apply_reproduces(seed, gamma):
    rng = np.random.default_rng(seed)
    n = 20
    edges = random_graph(n, 0.25, rng)
    op = CoarseOperator.from_edges(n, edges, rng.uniform(0.5, 2.0, edges.size), gamma)
    b = rng.standard_normal(n)
    cfg = SolveConfig(rel_tol=1e-8)
    y = solve_pinv(op, b, cfg)
    b_range = op.project_range(b)
    assert np.linalg.norm(op.apply(y) - b_range) <= 2 * cfg.rel_tol * np.linalg.norm(b_range) + 1e-14
    if gamma == 0:  # solution orthogonal to the kernel
        labels = op.component_labels()
        for comp in np.unique(labels):
            assert abs(y[labels == comp].sum()) < 1e-8


def test_disconnected_pseudoinverse(rng):
    n = 12
    edges = np.concatenate([complete_graph(6), [edge_index(6 + i, 7 + i, n) for i in range(5)]])
    op = CoarseOperator.from_edges(n, edges)
    b = rng.standard_normal(n)
    expected = np.linalg.pinv(exact_laplacian(edges, n)) @ b
    assert np.allclose(solve_pinv(op, b), expected, atol=1e-6)


def test_non_convergence_raises():
    n = 200
    op = CoarseOperator.from_edges(n, path_graph(n), gamma=1e-9)
    with pytest.raises(SolverError) as info:
        solve_pinv(op, np.random.default_rng(0).standard_normal(n), SolveConfig(max_iters=3))
    assert info.value.residual > 0


# ---------------------------------------------------------------- leverage


@pytest.mark.parametrize("n", range(5, 21))
def test_complete_graph_leverage(n):
    op = CoarseOperator.from_edges(n, complete_graph(n))
    assert np.allclose(edge_leverages(op, complete_graph(n)), 2.0 / n, atol=1e-9)


def test_large_gamma_leverage():
    n = 10
    op = CoarseOperator.from_edges(n, complete_graph(n), gamma=1e6)
    tau = approx_leverage(op, 3, c=1.0)
    assert tau == pytest.approx(2e-6, rel=0.01)


def test_identity_row_leverage():
    n, gamma = 6, 3.0
    op = CoarseOperator.from_edges(n, complete_graph(n), gamma=gamma)
    K = op.dense()
    for v in range(n):
        row = np.zeros(n)
        row[v] = np.sqrt(gamma)
        assert approx_leverage(op, num_pairs(n) + v) == pytest.approx(dense_pinv_leverages(K, row)[0])
    with pytest.raises(IndexError):
        approx_leverage(op, num_pairs(n) + n)


@given(st.integers(0, 2**32 - 1))
def test_leverages_sum_to_rank(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(5, 30))
    edges = random_graph(n, 0.4, rng)
    comps = np.unique(connected_components(n, edges)).size
    lev = edge_leverages(CoarseOperator.from_edges(n, edges), edges)
    assert lev.sum() == pytest.approx(n - comps, abs=1e-6)


@given(st.integers(0, 2**32 - 1))
def test_leverage_sandwich(seed):
    """``c K <= K~ <= K`` implies ``tau <= tau~ <= tau / c``."""
    rng = np.random.default_rng(seed)
    n, c = int(rng.integers(5, 40)), 0.5
    edges = connected_graph(n, 0.3, rng)
    coarse = CoarseOperator.from_edges(n, edges, rng.uniform(c, 1.0, edges.size))
    tau_true = dense_pinv_leverages(exact_laplacian(edges, n), incidence_matrix(edges, n).toarray())
    tau = edge_leverages(coarse, edges, c=c)
    assert np.all(tau >= tau_true - 1e-9)
    assert np.all(tau <= tau_true / c + 1e-6)
    # pairs outside the graph may have resistance above 1/c and are clamped
    ids = np.arange(num_pairs(n))
    exact = dense_pinv_leverages(coarse.dense(), incidence_matrix(ids, n).toarray())
    assert np.allclose(edge_leverages(coarse, ids, c=c), np.minimum(exact, 1 / c), atol=1e-7)


def test_clamp_to_inverse_c():
    # a coarse operator violating K~ >= c K gives leverages above 1/c, which are clamped
    n = 4
    op = CoarseOperator.from_edges(n, path_graph(n), np.full(3, 0.01))
    assert np.all(edge_leverages(op, path_graph(n), c=0.5) == 2.0)


def test_general_rows(rng):
    A = sp.random(30, 8, density=0.4, random_state=1, format="csr") + sp.eye(30, 8)
    op = CoarseOperator(8, A, np.ones(30), 0.0)
    lev = approx_leverages(op, A)
    assert np.allclose(lev, dense_pinv_leverages((A.T @ A).toarray(), A.toarray()), atol=1e-7)
    assert lev.sum() == pytest.approx(8, abs=1e-6)
