"""Recovery of a refined sparsifier from one level stack and a coarse operator.

For each candidate edge ``e`` the coarse operator gives a leverage estimate
``tau_e = b_e^T K^+ b_e`` and a sampling level ``s(e)`` with
``2^-s(e)`` within a factor two of ``p_e = c2 * tau_e * log2(n) / eps^2``.
The vector ``x_e = B_s K^+ b_e`` has ``x_e(e) = tau_e`` exactly when ``e`` is
in level ``s`` and ``0`` otherwise, so one point query against the level-``s``
sketch (with query vector ``K^+ b_e``) decides membership with threshold
``tau_e / 2``.  Recovered edges get weight ``2^s(e)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, TextIO, Union

import numpy as np

from .config import DEFAULT_CONSTANTS, DEFAULT_SOLVE, Constants, SolveConfig
from .errors import FormatError
from .graph_core import edge_indices, edge_pairs, exact_laplacian, incidence_matrix, num_pairs
from .sampling_levels import LevelStack
from .sdd_solve import CoarseOperator, approx_leverages

SKIPPED = -1


@dataclass
class Sparsifier:
    """Weighted edge subset plus an optional ``gamma I`` diagonal."""

    n: int
    edges: np.ndarray
    weights: np.ndarray
    gamma: float = 0.0

    def __post_init__(self):
        self.edges = np.asarray(self.edges, dtype=np.int64).ravel()
        self.weights = np.asarray(self.weights, dtype=np.float64).ravel()
        if self.edges.size != self.weights.size:
            raise ValueError("edges and weights differ in length")
        order = np.argsort(self.edges, kind="stable")
        self.edges, self.weights = self.edges[order], self.weights[order]
        if self.edges.size and np.any(np.diff(self.edges) == 0):
            raise ValueError("duplicate edge in sparsifier")

    @classmethod
    def empty(cls, n: int, gamma: float = 0.0) -> "Sparsifier":
        return cls(n, np.zeros(0, dtype=np.int64), np.zeros(0), gamma)

    @property
    def num_edges(self) -> int:
        return int(self.edges.size)

    def to_operator(self, scale: float = 1.0) -> CoarseOperator:
        """``scale * (B~^T W B~ + gamma I)`` as a solvable operator."""
        return CoarseOperator.from_edges(self.n, self.edges, self.weights * scale, self.gamma * scale)

    def laplacian(self, include_gamma: bool = True) -> np.ndarray:
        K = exact_laplacian(self.edges, self.n, self.weights)
        if include_gamma and self.gamma:
            K = K + self.gamma * np.eye(self.n)
        return K

    def to_text(self) -> str:
        u, v = edge_pairs(self.edges, self.n)
        lines = [f"{self.n} {self.gamma!r}"]
        lines += [f"{a} {b} {w!r}" for a, b, w in zip(u.tolist(), v.tolist(), self.weights.tolist())]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, source: Union[str, TextIO]) -> "Sparsifier":
        text = source if isinstance(source, str) else source.read()
        lines = [ln for ln in text.splitlines() if ln.strip() and not ln.lstrip().startswith("#")]
        if not lines:
            raise FormatError("empty sparsifier file")
        try:
            head = lines[0].split()
            n, gamma = int(head[0]), float(head[1])
            body = np.array([ln.split() for ln in lines[1:]], dtype=object).reshape(-1, 3)
            u = body[:, 0].astype(np.int64)
            v = body[:, 1].astype(np.int64)
            w = body[:, 2].astype(np.float64)
        except (ValueError, IndexError) as exc:
            raise FormatError(f"malformed sparsifier file: {exc}") from None
        return cls(n, edge_indices(u, v, n), w, gamma)

    def __eq__(self, other) -> bool:
        return (isinstance(other, Sparsifier) and self.n == other.n and self.gamma == other.gamma
                and np.array_equal(self.edges, other.edges)
                and np.array_equal(self.weights, other.weights))


@dataclass(frozen=True)
class SampleDecision:
    e: int
    tau: float
    p: float
    s: int
    estimate: float
    recovered: bool


@dataclass
class DecisionTable:
    """Column store of per-edge decisions; ``s == SKIPPED`` marks edges not queried."""

    edges: np.ndarray
    tau: np.ndarray
    p: np.ndarray
    s: np.ndarray
    estimate: np.ndarray
    recovered: np.ndarray

    def __len__(self) -> int:
        return int(self.edges.size)

    def __getitem__(self, j: int) -> SampleDecision:
        return SampleDecision(int(self.edges[j]), float(self.tau[j]), float(self.p[j]),
                              int(self.s[j]), float(self.estimate[j]), bool(self.recovered[j]))

    def lookup(self, e: int) -> SampleDecision:
        j = int(np.searchsorted(self.edges, e))
        if j >= len(self) or self.edges[j] != e:
            raise KeyError(e)
        return self[j]

    @staticmethod
    def concat(parts: list["DecisionTable"]) -> "DecisionTable":
        return DecisionTable(*(np.concatenate([getattr(p, f) for p in parts]) for f in
                               ("edges", "tau", "p", "s", "estimate", "recovered")))


def sampling_probability(tau, n: int, eps: float, constants: Constants = DEFAULT_CONSTANTS):
    """``p = c2 * tau * log2(n) / eps^2`` (uncapped)."""
    return constants.c2 * np.asarray(tau, dtype=np.float64) * math.log2(n) / eps**2


def sampling_level(p) -> np.ndarray:
    """Smallest ``s >= 0`` with ``min(1, p) <= 2^-s <= min(1, 2p)``, computed exactly.

    Entries with ``p <= 0`` get ``SKIPPED``.
    """
    p = np.asarray(p, dtype=np.float64)
    mant, expo = np.frexp(p)
    s = -expo + (mant == 0.5)
    s = np.where(p >= 1.0, 0, s)
    return np.where(p > 0, s, SKIPPED).astype(np.int64)


def edge_presence_value(stack: LevelStack, e: int, y, s: int) -> float:
    """Sketch estimate of ``x(e)`` for ``x = B_s y``."""
    if not 0 <= s <= stack.S:
        raise ValueError(f"level {s} outside [0, {stack.S}]")
    return float(stack.point_query_many(s, [e], np.asarray(y, dtype=np.float64)[None, :])[0])


def refine_sparsifier(stack: LevelStack, coarse: CoarseOperator, gamma: float, eps: float,
                      c: float, constants: Optional[Constants] = None,
                      solve: SolveConfig = DEFAULT_SOLVE, candidates=None,
                      record: bool = False):
    """Refine ``coarse`` (with ``c K <= coarse <= K``) into a ``(1 +- eps)`` sparsifier.

    Every edge id in ``candidates`` (default: all ``C(n,2)``) is tested.
    Returns the sparsifier, and the decision table if ``record`` is set.
    """
    constants = constants or stack.constants
    n = stack.n
    if coarse.n != n:
        raise ValueError("coarse operator and stack disagree on n")
    if gamma != stack.gamma:
        raise ValueError(f"stack was built for gamma={stack.gamma}, refine called with {gamma}")
    if not 0.0 < eps < 1.0 or not 0.0 < c <= 1.0:
        raise ValueError("need eps in (0, 1) and c in (0, 1]")
    ids = (np.arange(num_pairs(n), dtype=np.int64) if candidates is None
           else np.unique(np.asarray(candidates, dtype=np.int64)))
    kept_e, kept_w, parts = [], [], []
    for lo in range(0, ids.size, solve.block_size):
        block = ids[lo:lo + solve.block_size]
        tau, Y = approx_leverages(coarse, incidence_matrix(block, n), solve, c, return_solutions=True)
        p = sampling_probability(tau, n, eps, constants)
        s = sampling_level(p)
        s = np.where(s > stack.S, SKIPPED, s)
        est = np.zeros(block.size)
        for level in np.unique(s[s != SKIPPED]):
            sel = np.flatnonzero(s == level)
            est[sel] = stack.point_query_many(int(level), block[sel], Y[:, sel].T)
        recovered = (s != SKIPPED) & (est > tau / 2)
        kept_e.append(block[recovered])
        kept_w.append(np.ldexp(1.0, s[recovered]))
        if record:
            parts.append(DecisionTable(block, tau, p, s, est, recovered))
    out = Sparsifier(n, np.concatenate(kept_e) if kept_e else np.zeros(0, dtype=np.int64),
                     np.concatenate(kept_w) if kept_w else np.zeros(0), gamma)
    if record:
        table = DecisionTable.concat(parts) if parts else DecisionTable(
            *(np.zeros(0, dtype=t) for t in (np.int64, float, float, np.int64, float, bool)))
        return out, table
    return out


def exact_sample_norms(edges_present, stack: LevelStack, Y: np.ndarray, levels) -> np.ndarray:
    """Exact ``||B_s y_j||^2`` for query ``j`` at level ``levels[j]`` (test oracle).

    ``edges_present`` is the true edge set; the identity block is excluded.
    """
    edges_present = np.asarray(edges_present, dtype=np.int64)
    B = incidence_matrix(edges_present, stack.n)
    X = B @ Y
    depth = stack.edge_levels(edges_present)
    levels = np.asarray(levels)
    mask = depth[:, None] >= levels[None, :]
    return np.sum((X * mask) ** 2, axis=0)


@dataclass
class MarginalReport:
    edges: np.ndarray
    levels: np.ndarray
    expected: np.ndarray
    frequency: np.ndarray
    trials: int
    concentration_violations: float

    def sigma(self) -> np.ndarray:
        return np.sqrt(self.expected * (1 - self.expected) / self.trials)

    def within(self, k: float = 3.0) -> np.ndarray:
        """Per-edge ``|freq - 2^-s| <= k sigma`` (exact match when sigma is zero)."""
        return np.abs(self.frequency - self.expected) <= k * self.sigma() + 1e-12


def sampling_marginals(trials: int, n: int, edges, eps: float, seed: int = 0,
                       constants: Constants = DEFAULT_CONSTANTS,
                       solve: SolveConfig = DEFAULT_SOLVE) -> MarginalReport:
    """Empirical inclusion frequency per present edge with the exact Laplacian as coarse operator.

    Each trial sketches the graph with a fresh seed and runs one refinement
    (gamma = 0, c = 1).  Also reports the fraction of (trial, edge) pairs whose
    sampled vector violates ``||x||^2 <= c3 tau^2 log2(n) / eps^2``.
    """
    edges = np.unique(np.asarray(edges, dtype=np.int64))
    exact = CoarseOperator.from_edges(n, edges)
    tau, Y = approx_leverages(exact, incidence_matrix(edges, n), solve, 1.0, return_solutions=True)
    levels = sampling_level(sampling_probability(tau, n, eps, constants))
    expected = np.ldexp(1.0, -levels)
    hits = np.zeros(edges.size)
    violations = 0
    bound = constants.c3 * tau**2 * math.log2(n) / eps**2
    for t in range(trials):
        stack = LevelStack(n, eps, 0.0, seed + t, constants)
        stack.ingest_many(edges, np.ones(edges.size))
        out = refine_sparsifier(stack, exact, 0.0, eps, 1.0, constants, solve, candidates=edges)
        hits += np.isin(edges, out.edges)
        violations += int(np.sum(exact_sample_norms(edges, stack, Y, levels) > bound))
    return MarginalReport(edges, levels, expected, hits / trials, trials,
                          violations / (trials * max(edges.size, 1)))


def edge_count_bound(n: int, eps: float, c: float, C: float) -> float:
    """``C * n * log2(n) / (eps^2 c)``: documented sparsity envelope."""
    return C * n * math.log2(n) / (eps**2 * c)
