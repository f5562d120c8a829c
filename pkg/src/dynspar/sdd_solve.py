"""Pseudoinverse application for sparse coarse operators ``A^T W A + gamma I``.

Solves use block Jacobi-preconditioned conjugate gradient: many right-hand
sides are iterated together, each column with its own step sizes, so a batch
of leverage estimates costs one sparse product per iteration.
"""

from __future__ import annotations

from typing import Optional, Sequence

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components

from .config import DEFAULT_SOLVE, SolveConfig
from .errors import DimensionError, SolverError
from .graph_core import edge_pairs, incidence_matrix


class CoarseOperator:
    """Immutable ``K = A^T diag(w) A + gamma I`` stored as a CSR matrix.

    ``rows`` is a sparse ``m x n`` matrix of row vectors (incidence rows in
    graph mode); ``edges`` keeps the edge ids when the rows came from a graph.
    """

    def __init__(self, n: int, rows: sp.spmatrix, weights, gamma: float,
                 edges: Optional[np.ndarray] = None):
        rows = sp.csr_matrix(rows, dtype=np.float64)
        weights = np.asarray(weights, dtype=np.float64).ravel()
        if rows.shape[1] != n or rows.shape[0] != weights.size:
            raise DimensionError("rows/weights do not match the operator size")
        if np.any(weights <= 0) or gamma < 0:
            raise ValueError("weights must be positive and gamma nonnegative")
        self.n = n
        self.rows = rows
        self.weights = weights
        self.gamma = float(gamma)
        self.edges = None if edges is None else np.asarray(edges, dtype=np.int64)
        mat = (rows.T @ sp.diags(weights) @ rows).tocsr()
        if gamma:
            mat = (mat + self.gamma * sp.identity(n, format="csr")).tocsr()
        mat.sum_duplicates()
        self.matrix = mat
        self._diag = mat.diagonal()
        self._labels: Optional[np.ndarray] = None

    @classmethod
    def from_edges(cls, n: int, edges, weights=None, gamma: float = 0.0) -> "CoarseOperator":
        edges = np.asarray(edges, dtype=np.int64).ravel()
        weights = np.ones(edges.size) if weights is None else np.asarray(weights, dtype=np.float64)
        return cls(n, incidence_matrix(edges, n), weights, gamma, edges=edges)

    @classmethod
    def identity(cls, n: int, gamma: float) -> "CoarseOperator":
        return cls.from_edges(n, np.zeros(0, dtype=np.int64), None, gamma)

    def scaled(self, factor: float) -> "CoarseOperator":
        """The operator times ``factor``: weights and gamma scaled together."""
        return CoarseOperator(self.n, self.rows, self.weights * factor, self.gamma * factor,
                              edges=self.edges)

    @property
    def nnz(self) -> int:
        return int(self.matrix.nnz)

    def apply(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.shape[0] != self.n:
            raise DimensionError(f"vector of length {x.shape[0]} for operator of size {self.n}")
        return self.matrix @ x

    def dense(self) -> np.ndarray:
        return self.matrix.toarray()

    # ------------------------------------------------------------ kernel

    def component_labels(self) -> np.ndarray:
        """Connected components of the nonzero pattern (meaningful when gamma = 0)."""
        if self._labels is None:
            _, self._labels = connected_components(self.matrix, directed=False)
        return self._labels

    def project_range(self, B: np.ndarray) -> np.ndarray:
        """Remove per-component means from the columns of ``B`` (no-op if gamma > 0).

        Matches the Laplacian kernel; a general-row operator with ``gamma = 0``
        is left unprojected and relies on CG staying in the Krylov range.
        """
        if self.gamma > 0 or self.edges is None:
            return B
        labels = self.component_labels()
        counts = np.bincount(labels)
        sums = np.zeros((counts.size,) + B.shape[1:])
        np.add.at(sums, labels, B)
        isolated = self._diag == 0
        out = B - (sums / counts.reshape((-1,) + (1,) * (B.ndim - 1)))[labels]
        out[isolated] = 0.0
        return out

    # ------------------------------------------------------------ text I/O

    def to_text(self) -> str:
        if self.edges is None:
            raise ValueError("only graph operators have a text form")
        u, v = edge_pairs(self.edges, self.n)
        lines = [f"gamma {self.gamma!r}", f"n {self.n}"]
        lines += [f"{a} {b} {w!r}" for a, b, w in zip(u, v, self.weights)]
        return "\n".join(lines) + "\n"


def _block_pcg(op: CoarseOperator, B: np.ndarray, cfg: SolveConfig) -> np.ndarray:
    """Jacobi-PCG on every column of ``B`` at once."""
    A = op.matrix
    inv_diag = np.where(op._diag > 0, 1.0 / np.where(op._diag > 0, op._diag, 1.0), 0.0)[:, None]
    X = np.zeros_like(B)
    R = B.copy()
    norms = np.linalg.norm(B, axis=0)
    target = cfg.rel_tol * norms
    active = norms > 0
    if not active.any():
        return X
    Z = inv_diag * R
    P = Z.copy()
    rz = np.einsum("ij,ij->j", R, Z)
    cap = cfg.iteration_cap(op.n)
    res = norms.copy()
    for _ in range(cap):
        idx = np.flatnonzero(active)
        Pa = P[:, idx]
        AP = A @ Pa
        denom = np.einsum("ij,ij->j", Pa, AP)
        alpha = np.divide(rz[idx], denom, out=np.zeros_like(denom), where=denom > 0)
        X[:, idx] += alpha * Pa
        R[:, idx] -= alpha * AP
        res[idx] = np.linalg.norm(R[:, idx], axis=0)
        done = (res[idx] <= target[idx]) | (denom <= 0)
        Zi = inv_diag * R[:, idx]
        rz_new = np.einsum("ij,ij->j", R[:, idx], Zi)
        beta = np.divide(rz_new, rz[idx], out=np.zeros_like(rz_new), where=rz[idx] > 0)
        P[:, idx] = Zi + beta * Pa
        rz[idx] = rz_new
        active[idx[done]] = False
        if not active.any():
            return X
    worst = float(np.max(res[active] / norms[active]))
    raise SolverError(f"CG did not converge in {cap} iterations", worst)


def solve_pinv(op: CoarseOperator, b, cfg: SolveConfig = DEFAULT_SOLVE) -> np.ndarray:
    """``y`` with ``||K y - b|| <= rel_tol ||b||`` for ``b`` projected onto range(K).

    ``b`` may be a vector or an ``n x k`` block of right-hand sides.
    """
    b = np.asarray(b, dtype=np.float64)
    if b.shape[0] != op.n:
        raise DimensionError(f"right-hand side of length {b.shape[0]} for operator of size {op.n}")
    vec = b.ndim == 1
    B = op.project_range(b.reshape(op.n, -1).copy())
    X = _block_pcg(op, B, cfg)
    X = op.project_range(X)
    return X[:, 0] if vec else X


def approx_leverages(op: CoarseOperator, rows: sp.spmatrix, cfg: SolveConfig = DEFAULT_SOLVE,
                     c: float = 1.0, return_solutions: bool = False):
    """``a_i^T K^+ a_i`` for each row of ``rows``, clamped to ``[0, 1/c]``.

    With ``return_solutions`` the ``n x k`` block ``K^+ A^T`` is returned too.
    """
    if not 0.0 < c <= 1.0:
        raise ValueError("c must lie in (0, 1]")
    R = sp.csr_matrix(rows)
    B = R.T.toarray()
    Y = solve_pinv(op, B, cfg)
    tau = np.asarray(np.einsum("ij,ij->j", B, Y))
    tau = np.clip(tau, 0.0, 1.0 / c)
    return (tau, Y) if return_solutions else tau


def approx_leverage(op: CoarseOperator, e: int, cfg: SolveConfig = DEFAULT_SOLVE,
                    c: float = 1.0) -> float:
    """Leverage estimate of edge ``e``, or of identity row ``v`` via id ``C(n,2)+v``."""
    n = op.n
    pairs = n * (n - 1) // 2
    if 0 <= e < pairs:
        row = incidence_matrix(np.array([e]), n)
    elif pairs <= e < pairs + n:
        row = sp.csr_matrix(([np.sqrt(op.gamma)], ([0], [e - pairs])), shape=(1, n))
    else:
        raise IndexError(f"row id {e} out of range")
    return float(approx_leverages(op, row, cfg, c)[0])


def dense_pinv_leverages(K: np.ndarray, rows: np.ndarray) -> np.ndarray:
    """Oracle: ``a_i^T K^+ a_i`` by dense pseudoinverse."""
    P = np.linalg.pinv(K, hermitian=True)
    rows = np.atleast_2d(rows)
    return np.einsum("ij,jk,ik->i", rows, P, rows)


def edge_leverages(op: CoarseOperator, edges: Sequence[int], cfg: SolveConfig = DEFAULT_SOLVE,
                   c: float = 1.0) -> np.ndarray:
    return approx_leverages(op, incidence_matrix(np.asarray(edges, dtype=np.int64), op.n), cfg, c)
