import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from dynspar.config import Constants
from dynspar.errors import FormatError
from dynspar.graph_core import (complete_graph, edge_index, exact_laplacian, incidence_matrix,
                                num_pairs, random_graph, spectral_certify)
from dynspar.refine import (SKIPPED, Sparsifier, edge_count_bound, edge_presence_value,
                            exact_sample_norms, refine_sparsifier, sampling_level,
                            sampling_marginals, sampling_probability)
from dynspar.sampling_levels import LevelStack
from dynspar.sdd_solve import CoarseOperator, solve_pinv


def sketched(n, edges, gamma=0.0, seed=0, constants=Constants(), eps=0.5):
    stack = LevelStack(n, eps, gamma, seed, constants)
    stack.ingest_many(edges, np.ones(len(edges)))
    return stack


# ---------------------------------------------------------------- sampling level


@given(st.floats(1e-12, 1e6, allow_nan=False))
def test_sampling_level_bracket(p):
    s = int(sampling_level(p))
    rate = 2.0**-s
    assert min(1.0, p) <= rate <= min(1.0, 2 * p)


def test_sampling_level_exact_powers():
    assert list(sampling_level([1.0, 0.5, 0.25, 0.3, 2.0])) == [0, 1, 2, 1, 0]
    assert list(sampling_level([0.0, -1.0])) == [SKIPPED, SKIPPED]


def test_sampling_probability_formula():
    assert sampling_probability(0.1, 16, 0.5, Constants(c2=4)) == pytest.approx(4 * 0.1 * 4 / 0.25)


# ---------------------------------------------------------------- presence value


def test_presence_value_single_edge():
    n, gamma = 8, 0.5
    e = edge_index(2, 5, n)
    stack = sketched(n, [e], gamma)
    op = CoarseOperator.from_edges(n, [e], gamma=gamma)
    b = incidence_matrix([e], n).toarray().ravel()
    y = solve_pinv(op, b)
    tau = b @ y
    x_norm = np.linalg.norm(incidence_matrix([e], n) @ y)
    assert abs(edge_presence_value(stack, e, y, 0) - tau) <= stack.eta * x_norm + 1e-12


def test_presence_value_after_deletion(rng):
    n = 10
    e = 7
    stack = sketched(n, [e, 3])
    stack.ingest_many([e], [-1])
    y = rng.standard_normal(n)
    fresh = sketched(n, [3])
    assert edge_presence_value(stack, e, y, 0) == edge_presence_value(fresh, e, y, 0)
    with pytest.raises(ValueError):
        edge_presence_value(stack, e, y, stack.S + 1)


@given(st.integers(0, 2**32 - 1), st.floats(0.1, 1.0))
def test_sampled_norm_bounded_by_leverage(seed, c):
    """``c B^T B <= K~`` implies ``||B K~^+ b_e||^2 <= tau_e / c``."""
    rng = np.random.default_rng(seed)
    n, gamma = 12, 0.2
    edges = random_graph(n, 0.4, rng)
    if edges.size == 0:
        return
    B = np.vstack([incidence_matrix(edges, n).toarray(), math.sqrt(gamma) * np.eye(n)])
    K_tilde = c * B.T @ B * rng.uniform(1.0, 1.5)
    if np.linalg.eigvalsh(K_tilde - c * B.T @ B).min() < -1e-9:
        return
    P = np.linalg.pinv(K_tilde)
    for e in edges:
        b = incidence_matrix([e], n).toarray().ravel()
        x = B @ P @ b
        assert x @ x <= (b @ P @ b) / c * (1 + 1e-9)


@given(st.integers(0, 2**32 - 1), st.floats(0.0, 2.0))
def test_cross_term_monotonicity(seed, gamma):
    """For SDD ``K~``, ``b_f^T K~^+ b_e <= b_e^T K~^+ b_e``."""
    rng = np.random.default_rng(seed)
    n = 10
    edges = random_graph(n, 0.5, rng)
    K = exact_laplacian(edges, n, rng.uniform(0.5, 2, edges.size)) + gamma * np.eye(n)
    P = np.linalg.pinv(K, hermitian=True)
    Bfull = incidence_matrix(np.arange(num_pairs(n)), n).toarray()
    M = Bfull @ P @ Bfull.T
    assert np.all(M <= np.diag(M)[:, None] + 1e-9)


# ---------------------------------------------------------------- refine


def test_uncapped_edges_recovered_exactly():
    n = 20
    edges = complete_graph(n)[::3]
    stack = sketched(n, edges)
    H, table = refine_sparsifier(stack, CoarseOperator.from_edges(n, edges), 0.0, 0.5, 1.0,
                                 record=True)
    present = np.isin(table.edges, edges)
    assert np.all(table.s[present] == 0)
    assert np.array_equal(H.edges, np.sort(edges)) and np.all(H.weights == 1.0)
    assert not table.recovered[~present].any()
    assert spectral_certify(exact_laplacian(edges, n), H.laplacian(), 1e-9).passed


def test_decision_invariants(rng):
    n = 30
    edges = random_graph(n, 0.3, rng)
    constants = Constants(c2=0.2)
    stack = sketched(n, edges, constants=constants, seed=5)
    H, table = refine_sparsifier(stack, CoarseOperator.from_edges(n, edges), 0.0, 0.5, 1.0,
                                 constants, record=True)
    ok = table.s != SKIPPED
    rate = np.ldexp(1.0, -table.s[ok])
    assert np.all(np.minimum(1, table.p[ok]) <= rate) and np.all(rate <= np.minimum(1, 2 * table.p[ok]))
    assert np.array_equal(table.recovered, ok & (table.estimate > table.tau / 2))
    d = table.lookup(int(H.edges[0]))
    assert d.recovered and H.weights[0] == 2.0**d.s
    # weights are inverse sampling rates, and recovered edges sit in their level
    assert np.all(np.log2(H.weights) == np.round(np.log2(H.weights)))
    assert np.all(stack.edge_levels(H.edges) >= np.log2(H.weights))
    assert set(H.edges) <= set(edges)


def test_gamma_appended_exactly():
    n, gamma = 10, 0.37
    edges = complete_graph(n)[:12]
    stack = sketched(n, edges, gamma)
    H = refine_sparsifier(stack, CoarseOperator.from_edges(n, edges, gamma=gamma), gamma, 0.5, 1.0)
    assert H.gamma == gamma
    assert np.allclose(np.diag(H.laplacian()) - np.diag(H.laplacian(False)), gamma)


def test_gamma_mismatch_rejected():
    stack = sketched(6, [0], 1.0)
    with pytest.raises(ValueError):
        refine_sparsifier(stack, CoarseOperator.identity(6, 1.0), 0.5, 0.5, 1.0)


def test_empty_graph():
    stack = sketched(9, [])
    H = refine_sparsifier(stack, CoarseOperator.identity(9, 1.0), 0.0, 0.5, 1.0)
    assert H.num_edges == 0


def test_refine_certifies_on_random_graphs():
    passes = 0
    for seed in range(10):
        rng = np.random.default_rng(seed)
        n = 60
        edges = random_graph(n, 0.2, rng)
        stack = sketched(n, edges, seed=seed)
        H = refine_sparsifier(stack, CoarseOperator.from_edges(n, edges), 0.0, 0.5, 1.0)
        passes += spectral_certify(exact_laplacian(edges, n), H.laplacian(), 0.5).passed
    assert passes >= 9


def test_no_phantom_edges():
    phantoms = 0
    for seed in range(10):
        rng = np.random.default_rng(100 + seed)
        n = 40
        edges = random_graph(n, 0.15, rng)
        constants = Constants(c2=0.3)
        stack = sketched(n, edges, seed=seed, constants=constants)
        H = refine_sparsifier(stack, CoarseOperator.from_edges(n, edges), 0.0, 0.5, 1.0, constants)
        phantoms += np.setdiff1d(H.edges, edges).size > 0
    assert phantoms <= 1


def test_exact_sample_norms(rng):
    n = 12
    edges = random_graph(n, 0.5, rng)
    stack = sketched(n, edges)
    Y = rng.standard_normal((n, 3))
    levels = np.array([0, 1, 2])
    got = exact_sample_norms(edges, stack, Y, levels)
    for j, s in enumerate(levels):
        members = edges[stack.edge_levels(edges) >= s]
        x = incidence_matrix(members, n) @ Y[:, j]
        assert got[j] == pytest.approx(x @ x)


# ---------------------------------------------------------------- marginals


def test_marginals_trivial_at_default_c2():
    report = sampling_marginals(20, 10, complete_graph(10), 0.5)
    assert np.all(report.levels == 0) and np.all(report.frequency == 1.0)


def test_marginals_subsampled():
    report = sampling_marginals(200, 10, complete_graph(10), 0.5, seed=3, constants=Constants(c2=0.1))
    assert np.all(report.levels == 1)
    assert report.within(3.0).mean() >= 0.95
    assert report.concentration_violations < 0.01


# ---------------------------------------------------------------- output format


def test_sparsifier_text_round_trip():
    H = Sparsifier(5, [3, 0, 7], [2.0, 1.0, 0.1], 0.25)
    assert list(H.edges) == [0, 3, 7]
    text = H.to_text()
    assert text.splitlines()[0] == "5 0.25"
    assert Sparsifier.from_text(text) == H
    with pytest.raises(FormatError):
        Sparsifier.from_text("5 0.0\n0 1\n")
    with pytest.raises(ValueError):
        Sparsifier(5, [1, 1], [1.0, 1.0])


def test_edge_count_bound():
    assert edge_count_bound(100, 0.5, 1.0, 1.0) == pytest.approx(100 * math.log2(100) * 4)
