"""Edge indexing, incidence rows, update streams and dense verification oracles.

Edges of the complete graph on ``n`` vertices are ranked in row-major order:
``(0,1), (0,2), ..., (0,n-1), (1,2), ...``.  That ranking fixes the row order
of the complete-graph incidence matrix that every sketch is indexed by.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Iterable, Iterator, Optional, TextIO, Union

import numpy as np

from .errors import DimensionError, InvalidEdgeError, StreamError, StreamParseError

# eigenvalues below this fraction of lambda_max count as zero
KERNEL_RTOL = 1e-9


def num_pairs(n: int) -> int:
    return n * (n - 1) // 2


def edge_index(u: int, v: int, n: int) -> int:
    """Row-major rank of the unordered pair ``u < v``."""
    if not (0 <= u < n and 0 <= v < n):
        raise InvalidEdgeError(f"vertex out of range for n={n}: ({u}, {v})")
    if u >= v:
        raise InvalidEdgeError(f"edge needs u < v, got ({u}, {v})")
    return u * n - u * (u + 1) // 2 + (v - u - 1)


def edge_pair(e: int, n: int) -> tuple[int, int]:
    """Inverse of :func:`edge_index`."""
    if not 0 <= e < num_pairs(n):
        raise InvalidEdgeError(f"edge id {e} out of range for n={n}")
    u, v = edge_pairs(np.array([e]), n)
    return int(u[0]), int(v[0])


def _row_starts(n: int) -> np.ndarray:
    u = np.arange(n, dtype=np.int64)
    return u * n - u * (u + 1) // 2


def edge_indices(u, v, n: int) -> np.ndarray:
    """Vectorized :func:`edge_index`; pairs may come in either order."""
    u = np.asarray(u, dtype=np.int64)
    v = np.asarray(v, dtype=np.int64)
    lo, hi = np.minimum(u, v), np.maximum(u, v)
    if np.any(lo == hi) or np.any(lo < 0) or np.any(hi >= n):
        raise InvalidEdgeError("invalid vertex pair in batch")
    return lo * n - lo * (lo + 1) // 2 + (hi - lo - 1)


def edge_pairs(e, n: int) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized :func:`edge_pair`."""
    e = np.asarray(e, dtype=np.int64)
    if e.size and (e.min() < 0 or e.max() >= num_pairs(n)):
        raise InvalidEdgeError("edge id out of range in batch")
    u = np.searchsorted(_row_starts(n), e, side="right") - 1
    v = e - (u * n - u * (u + 1) // 2) + u + 1
    return u, v


@dataclass(frozen=True)
class IncidenceRow:
    u: int
    v: int
    n: int

    @property
    def cols(self) -> np.ndarray:
        return np.array([self.u, self.v], dtype=np.int64)

    @property
    def vals(self) -> np.ndarray:
        return np.array([1.0, -1.0])

    def dense(self) -> np.ndarray:
        b = np.zeros(self.n)
        b[self.u] = 1.0
        b[self.v] = -1.0
        return b


def incidence_row(e: int, n: int) -> IncidenceRow:
    u, v = edge_pair(e, n)
    return IncidenceRow(u, v, n)


def incidence_matrix(edges, n: int, weights=None):
    """Sparse ``len(edges) x n`` matrix whose rows are ``sqrt(w_e) * b_e``."""
    import scipy.sparse as sp

    edges = np.asarray(edges, dtype=np.int64)
    u, v = edge_pairs(edges, n)
    k = len(edges)
    scale = np.ones(k) if weights is None else np.sqrt(np.asarray(weights, float))
    rows = np.repeat(np.arange(k), 2)
    cols = np.stack([u, v], axis=1).ravel()
    vals = np.stack([scale, -scale], axis=1).ravel()
    return sp.csr_matrix((vals, (rows, cols)), shape=(k, n))


class Op(enum.Enum):
    INSERT = "+"
    DELETE = "-"

    @property
    def sign(self) -> int:
        return 1 if self is Op.INSERT else -1


@dataclass(frozen=True)
class EdgeUpdate:
    op: Op
    u: int
    v: int
    weight: Optional[int] = None

    def __post_init__(self):
        if self.u == self.v:
            raise InvalidEdgeError(f"self loop ({self.u}, {self.v})")
        if self.u > self.v:
            lo, hi = self.v, self.u
            object.__setattr__(self, "u", lo)
            object.__setattr__(self, "v", hi)
        if self.weight is not None and self.weight < 1:
            raise InvalidEdgeError(f"weight must be a positive integer, got {self.weight}")

    @property
    def sign(self) -> int:
        return self.op.sign

    def edge_id(self, n: int) -> int:
        return edge_index(self.u, self.v, n)

    def format(self) -> str:
        tail = "" if self.weight is None else f" {self.weight}"
        return f"{self.op.value} {self.u} {self.v}{tail}"


def parse_stream(source: Union[str, Iterable[str], TextIO], weighted: bool = False,
                 n: Optional[int] = None) -> Iterator[EdgeUpdate]:
    """Parse ``+ u v`` / ``- u v [w]`` lines; ``#`` lines and blanks are skipped."""
    if isinstance(source, str):
        source = source.splitlines()
    expected = 4 if weighted else 3
    for line_no, raw in enumerate(source, start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) != expected:
            raise StreamParseError(line_no, f"expected {expected} fields, got {len(parts)}")
        if parts[0] not in ("+", "-"):
            raise StreamParseError(line_no, f"unknown op {parts[0]!r}")
        try:
            nums = [int(p) for p in parts[1:]]
        except ValueError:
            raise StreamParseError(line_no, "non-integer field") from None
        u, v = nums[0], nums[1]
        if u < 0 or v < 0 or (n is not None and (u >= n or v >= n)):
            raise StreamParseError(line_no, f"vertex out of range: {u} {v}")
        try:
            yield EdgeUpdate(Op(parts[0]), u, v, nums[2] if weighted else None)
        except InvalidEdgeError as exc:
            raise StreamParseError(line_no, str(exc)) from None


def format_stream(updates: Iterable[EdgeUpdate]) -> str:
    return "".join(upd.format() + "\n" for upd in updates)


def updates_to_arrays(updates: Iterable[EdgeUpdate], n: int):
    """Return ``(edge_ids, signs, weights)`` arrays for a batch of updates."""
    ups = list(updates)
    u = np.array([x.u for x in ups], dtype=np.int64)
    v = np.array([x.v for x in ups], dtype=np.int64)
    ids = edge_indices(u, v, n) if ups else np.zeros(0, dtype=np.int64)
    signs = np.array([x.sign for x in ups], dtype=np.int64)
    weights = np.array([x.weight or 1 for x in ups], dtype=np.int64)
    return ids, signs, weights


class EdgeMultiplicitySet:
    """Ground-truth multiset of edges, maintained only by tests and verification.

    In unweighted mode multiplicities are 0 or 1; a repeated insert or a delete
    of an absent edge raises :class:`StreamError`.  In weighted mode the value
    stored is the edge weight and deletes must name the same weight.
    """

    def __init__(self, n: int, weighted: bool = False):
        self.n = n
        self.weighted = weighted
        self.mult: dict[int, int] = {}

    def apply(self, upd: EdgeUpdate) -> None:
        e = upd.edge_id(self.n)
        cur = self.mult.get(e, 0)
        amount = (upd.weight or 1) if self.weighted else 1
        if upd.op is Op.INSERT:
            if cur:
                raise StreamError(f"edge ({upd.u}, {upd.v}) inserted twice")
            self.mult[e] = amount
        else:
            if cur != amount:
                raise StreamError(f"delete of ({upd.u}, {upd.v}) does not match stream state")
            del self.mult[e]

    def apply_all(self, updates: Iterable[EdgeUpdate]) -> "EdgeMultiplicitySet":
        for upd in updates:
            self.apply(upd)
        return self

    def edges(self) -> np.ndarray:
        return np.array(sorted(self.mult), dtype=np.int64)

    def weights(self) -> np.ndarray:
        return np.array([self.mult[e] for e in sorted(self.mult)], dtype=np.float64)

    def __len__(self) -> int:
        return len(self.mult)

    def laplacian(self) -> np.ndarray:
        return exact_laplacian(self, self.n)


def exact_laplacian(edges, n: int, weights=None) -> np.ndarray:
    """Dense ``sum_e mult(e) * b_e b_e^T``.

    ``edges`` is an :class:`EdgeMultiplicitySet`, a mapping ``EdgeId -> mult``,
    or an array of edge ids (with optional ``weights``).
    """
    if isinstance(edges, EdgeMultiplicitySet):
        ids, w = edges.edges(), edges.weights()
    elif isinstance(edges, dict):
        ids = np.array(list(edges.keys()), dtype=np.int64)
        w = np.array(list(edges.values()), dtype=np.float64)
    else:
        ids = np.asarray(edges, dtype=np.int64)
        w = np.ones(len(ids)) if weights is None else np.asarray(weights, dtype=np.float64)
    if np.any(w < 0):
        raise ValueError("multiplicities must be nonnegative")
    K = np.zeros((n, n))
    if len(ids) == 0:
        return K
    u, v = edge_pairs(ids, n)
    np.add.at(K, (u, u), w)
    np.add.at(K, (v, v), w)
    np.add.at(K, (u, v), -w)
    np.add.at(K, (v, u), -w)
    return K


def connected_components(n: int, edges) -> np.ndarray:
    """Component label per vertex for the graph on edge ids ``edges``."""
    import scipy.sparse as sp
    from scipy.sparse.csgraph import connected_components as cc

    edges = np.asarray(edges, dtype=np.int64)
    u, v = edge_pairs(edges, n) if len(edges) else (np.zeros(0, int), np.zeros(0, int))
    adj = sp.csr_matrix((np.ones(len(u)), (u, v)), shape=(n, n))
    _, labels = cc(adj, directed=False)
    return labels


@dataclass
class Certificate:
    """Outcome of :func:`spectral_certify`.

    ``lam_min``/``lam_max`` are the extremal relative eigenvalues of the
    candidate on the range of ``K``.  On failure ``witness_value`` and
    ``witness_vector`` hold the violating eigenpair (in vertex coordinates).
    """

    passed: bool
    kernel_ok: bool
    lam_min: float
    lam_max: float
    epsilon: float
    witness_value: Optional[float] = None
    witness_vector: Optional[np.ndarray] = None
    reason: str = ""

    def __bool__(self) -> bool:
        return self.passed


def _psd_split(K: np.ndarray):
    lam, V = np.linalg.eigh((K + K.T) / 2)
    scale = max(float(np.abs(lam).max(initial=0.0)), 1e-300)
    keep = lam > KERNEL_RTOL * scale
    return lam, V, keep, scale


def spectral_certify(K: np.ndarray, K_tilde: np.ndarray, eps: float) -> Certificate:
    """Exact check of ``(1-eps) K <= K_tilde <= (1+eps) K`` by dense eigensolve.

    Computes the spectrum of ``P K^{+/2} K_tilde K^{+/2} P`` on the range of
    ``K`` after confirming that ``ker(K)`` lies inside ``ker(K_tilde)``.
    """
    K = np.asarray(K, dtype=np.float64)
    K_tilde = np.asarray(K_tilde, dtype=np.float64)
    if K.ndim != 2 or K.shape[0] != K.shape[1] or K.shape != K_tilde.shape:
        raise DimensionError(f"shape mismatch: {K.shape} vs {K_tilde.shape}")
    lam, V, keep, scale = _psd_split(K)
    null = V[:, ~keep]
    if null.shape[1]:
        leak = null.T @ K_tilde @ null
        leak_eig = np.linalg.eigvalsh((leak + leak.T) / 2)
        tscale = max(scale, float(np.abs(np.linalg.eigvalsh((K_tilde + K_tilde.T) / 2)).max()))
        worst = int(np.argmax(np.abs(leak_eig)))
        if abs(leak_eig[worst]) > KERNEL_RTOL * tscale:
            _, vecs = np.linalg.eigh((leak + leak.T) / 2)
            return Certificate(False, False, float("nan"), float("nan"), eps,
                               float(leak_eig[worst]), null @ vecs[:, worst],
                               "kernel of K is not contained in kernel of K_tilde")
    Vr = V[:, keep]
    inv_sqrt = 1.0 / np.sqrt(lam[keep])
    M = (Vr * inv_sqrt).T @ K_tilde @ (Vr * inv_sqrt)
    mu, W = np.linalg.eigh((M + M.T) / 2)
    if mu.size == 0:
        return Certificate(True, True, 1.0, 1.0, eps, reason="K is zero")
    lo, hi = float(mu[0]), float(mu[-1])
    passed = lo >= 1.0 - eps and hi <= 1.0 + eps
    if passed:
        return Certificate(True, True, lo, hi, eps)
    idx = 0 if (1.0 - lo) >= (hi - 1.0) else len(mu) - 1
    x = (Vr * inv_sqrt) @ W[:, idx]
    return Certificate(False, True, lo, hi, eps, float(mu[idx]), x,
                       "relative eigenvalue outside [1-eps, 1+eps]")


def relative_spectrum(K: np.ndarray, K_tilde: np.ndarray) -> np.ndarray:
    """Eigenvalues of ``K_tilde`` relative to ``K`` on the range of ``K``."""
    lam, V, keep, _ = _psd_split(np.asarray(K, dtype=np.float64))
    Vr = V[:, keep] / np.sqrt(lam[keep])
    M = Vr.T @ np.asarray(K_tilde, dtype=np.float64) @ Vr
    return np.linalg.eigvalsh((M + M.T) / 2)


def count_zero_eigenvalues(K: np.ndarray) -> int:
    _, _, keep, _ = _psd_split(np.asarray(K, dtype=np.float64))
    return int((~keep).sum())


# ---------------------------------------------------------------- generators

def random_graph(n: int, p: float, rng: np.random.Generator) -> np.ndarray:
    """Erdos-Renyi edge ids."""
    mask = rng.random(num_pairs(n)) < p
    return np.flatnonzero(mask).astype(np.int64)


def grid_graph(rows: int, cols: int) -> tuple[int, np.ndarray]:
    n = rows * cols
    us, vs = [], []
    for r in range(rows):
        for c in range(cols):
            x = r * cols + c
            if c + 1 < cols:
                us.append(x)
                vs.append(x + 1)
            if r + 1 < rows:
                us.append(x)
                vs.append(x + cols)
    return n, np.sort(edge_indices(us, vs, n))


def complete_graph(n: int) -> np.ndarray:
    return np.arange(num_pairs(n), dtype=np.int64)


def path_graph(n: int) -> np.ndarray:
    return edge_indices(np.arange(n - 1), np.arange(1, n), n)


def insert_stream(edges, n: int, weights=None) -> list[EdgeUpdate]:
    u, v = edge_pairs(np.asarray(edges, dtype=np.int64), n)
    if weights is None:
        return [EdgeUpdate(Op.INSERT, int(a), int(b)) for a, b in zip(u, v)]
    return [EdgeUpdate(Op.INSERT, int(a), int(b), int(w)) for a, b, w in zip(u, v, weights)]
