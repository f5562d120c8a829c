"""Sparsification of ``A^T A`` for rows drawn from a fixed dictionary.

Rows are sampled at every rate ``2^-s`` by ``T`` mutually independent
samplings (not nested).  Recovery picks, for each dictionary row, one random
repetition at its rate and keeps the row when the squared point estimate of
``x(i)`` beats ``1/C`` of the estimated squared norm of the sketched vector.
"""

from __future__ import annotations

import hashlib
import io
import math
import struct
from dataclasses import dataclass
from typing import Optional, Sequence, TextIO, Union

import numpy as np
import scipy.sparse as sp

from ._hashing import derive_key, prf, uniform_int
from .chain import ChainReport, ChainSchedule, run_chain, schedule_from_bounds
from .config import DEFAULT_CONSTANTS, DEFAULT_SOLVE, Constants, SolveConfig
from .errors import DimensionError, FormatError, SketchMismatchError, StreamParseError
from .graph_core import incidence_matrix, num_pairs, spectral_certify
from .hh_sketch import HHParams, HHSketch
from .refine import SKIPPED, DecisionTable, sampling_level, sampling_probability
from .sampling_levels import net_updates
from .sdd_solve import CoarseOperator, approx_leverages

_MAGIC = b"DSMS"
_VERSION = 1
_HEADER = struct.Struct("<4sHIIIIdddQQ")


class Dictionary:
    """Immutable ``m x n`` matrix of candidate rows, known to sketcher and decoder."""

    def __init__(self, rows):
        mat = sp.csr_matrix(rows, dtype=np.float64)
        mat.sum_duplicates()
        mat.eliminate_zeros()
        mat.sort_indices()
        self.rows = mat
        self.m, self.n = mat.shape
        if self.m < 1 or self.n < 1:
            raise DimensionError("dictionary must be nonempty")
        width = max(int(np.diff(mat.indptr).max()), 1)
        self._cols = np.zeros((self.m, width), dtype=np.int64)
        self._vals = np.zeros((self.m, width))
        for i in range(self.m):
            lo, hi = mat.indptr[i], mat.indptr[i + 1]
            self._cols[i, :hi - lo] = mat.indices[lo:hi]
            self._vals[i, :hi - lo] = mat.data[lo:hi]

    def row(self, i: int) -> np.ndarray:
        return self.rows[i].toarray().ravel()

    def padded(self, idx) -> tuple[np.ndarray, np.ndarray]:
        """Fixed-width ``(cols, vals)`` of the rows ``idx`` (zero padded)."""
        return self._cols[idx], self._vals[idx]

    def gram(self, idx=None, weights=None) -> np.ndarray:
        """Dense ``A^T W A`` over the rows ``idx`` (default all rows, unit weights)."""
        R = self.rows if idx is None else self.rows[np.asarray(idx, dtype=np.int64)]
        w = np.ones(R.shape[0]) if weights is None else np.asarray(weights, dtype=np.float64)
        return (R.T @ sp.diags(w) @ R).toarray()

    def lambda_max(self) -> float:
        """Top eigenvalue of the full dictionary Gram matrix: bounds every row subset."""
        return float(np.linalg.eigvalsh(self.gram())[-1])

    def digest(self) -> int:
        h = hashlib.blake2b(digest_size=8)
        h.update(struct.pack("<QQ", self.m, self.n))
        for arr in (self.rows.indptr, self.rows.indices):
            h.update(np.asarray(arr, dtype="<i8").tobytes())
        h.update(np.asarray(self.rows.data, dtype="<f8").tobytes())
        return int.from_bytes(h.digest(), "little")

    def to_text(self) -> str:
        dense = self.rows.toarray()
        lines = [f"{self.m} {self.n}"] + [" ".join(repr(float(x)) for x in r) for r in dense]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, source: Union[str, TextIO]) -> "Dictionary":
        text = source if isinstance(source, str) else source.read()
        lines = [ln for ln in text.splitlines() if ln.strip() and not ln.lstrip().startswith("#")]
        try:
            m, n = (int(x) for x in lines[0].split())
            data = np.array([[float(x) for x in ln.split()] for ln in lines[1:]])
        except (ValueError, IndexError) as exc:
            raise FormatError(f"malformed dictionary file: {exc}") from None
        if data.shape != (m, n):
            raise FormatError(f"dictionary header says {m}x{n}, body is {data.shape}")
        return cls(data)


def graph_dictionary(n: int) -> Dictionary:
    """Incidence rows of the complete graph, in edge-id order."""
    return Dictionary(incidence_matrix(np.arange(num_pairs(n)), n))


def diagonal_dictionary(diag) -> Dictionary:
    diag = np.asarray(diag, dtype=np.float64)
    return Dictionary(sp.diags(diag).tocsr())


def random_sparse_dictionary(m: int, n: int, nnz: int, rng: np.random.Generator) -> Dictionary:
    """``m`` rows with ``nnz`` Gaussian entries in random columns."""
    cols = np.array([rng.choice(n, size=nnz, replace=False) for _ in range(m)])
    vals = rng.standard_normal((m, nnz))
    return Dictionary(sp.csr_matrix((vals.ravel(), (np.repeat(np.arange(m), nnz), cols.ravel())),
                                    shape=(m, n)))


def structured_C(m: int, n: int, eps: float, constants: Constants = DEFAULT_CONSTANTS) -> float:
    """``C = struct_c1 * eps^-3 * log2(m) * log2(n)``; the sketch uses ``eta^2 = 1/C``."""
    return constants.struct_c1 * eps**-3 * math.log2(max(m, 2)) * math.log2(max(n, 2))


class MatrixLevelStack:
    """``(S + 1) x T`` independent row samplings of the streamed matrix, one sketch each."""

    def __init__(self, dictionary: Dictionary, eps: float, kappa_u: float, gamma: float,
                 seed: int, constants: Constants = DEFAULT_CONSTANTS):
        if not 0.0 < eps < 1.0:
            raise ValueError("eps must lie in (0, 1)")
        if kappa_u < 1 or gamma < 0:
            raise ValueError("need kappa_u >= 1 and gamma >= 0")
        self.dictionary = dictionary
        self.m, self.n = dictionary.m, dictionary.n
        self.eps, self.kappa_u, self.gamma = eps, float(kappa_u), float(gamma)
        self.seed = int(seed)
        self.constants = constants
        self.S = math.ceil(math.log2(self.kappa_u)) + constants.level_margin
        self.T = max(1, math.ceil(constants.c_t * math.log2(max(self.m, 2))))
        self.C = structured_C(self.m, self.n, eps, constants)
        if self.C <= 1:
            raise ValueError("struct_c1 too small: need C > 1")
        self.params = HHParams.for_accuracy(self.m + self.n, 1.0 / math.sqrt(self.C), 0, constants)
        self._member_keys = np.array([[derive_key("cell-member", self.seed, s, t)
                                       for t in range(self.T)] for s in range(self.S + 1)],
                                     dtype=np.uint64)
        self._pick_key = derive_key("cell-pick", self.seed)
        self.cells = [[HHSketch(self.params.with_seed(derive_key("cell", self.seed, s, t)),
                                self.n, constants) for t in range(self.T)]
                      for s in range(self.S + 1)]

    # ------------------------------------------------------------ sampling

    def members(self, s: int, t: int, idx) -> np.ndarray:
        """Indicator ``F_s^(t)`` on row ids ``idx`` (ids ``>= m`` are identity rows)."""
        idx = np.asarray(idx, dtype=np.int64)
        if s == 0:
            return np.ones(idx.shape, dtype=bool)
        words = prf(self._member_keys[s, t], idx.astype(np.uint64))
        return (words >> np.uint64(64 - s)) == 0

    def identity_members(self, s: int, t: int) -> np.ndarray:
        return self.members(s, t, self.m + np.arange(self.n))

    def pick(self, idx) -> np.ndarray:
        """The repetition ``t_i`` queried for row ``i``."""
        return uniform_int(self._pick_key, np.asarray(idx, dtype=np.int64), self.T)

    # ------------------------------------------------------------ ingestion

    def ingest_many(self, idx, signs) -> None:
        idx, signs = net_updates(idx, signs)
        if idx.size == 0:
            return
        if idx.min() < 0 or idx.max() >= self.m:
            raise IndexError("dictionary row id out of range")
        cols, vals = self.dictionary.padded(idx)
        for s in range(self.S + 1):
            for t in range(self.T):
                sel = self.members(s, t, idx)
                if sel.any():
                    self.cells[s][t].update_many(idx[sel], cols[sel], vals[sel], signs[sel])

    # ------------------------------------------------------------ queries

    def point_query_many(self, s: int, t: int, idx, Y) -> np.ndarray:
        return self.cells[s][t].point_query_many(idx, Y)

    def norm_sq_estimates(self, s: int, t: int, Y) -> np.ndarray:
        """Estimated ``||F_s^(t) A_gamma y||^2`` for each row ``y`` of ``Y``.

        The stored rows are estimated from the cell; the sampled identity
        rows are deterministic given the seed and enter exactly.
        """
        Y = np.atleast_2d(Y)
        ident = self.identity_members(s, t)
        return self.cells[s][t].norm_sq_estimates(Y) + self.gamma * np.sum(Y[:, ident] ** 2, axis=1)

    # ------------------------------------------------------------ bookkeeping

    def compatible(self, other: "MatrixLevelStack") -> bool:
        return (self.dictionary.digest() == other.dictionary.digest() and self.eps == other.eps
                and self.kappa_u == other.kappa_u and self.gamma == other.gamma
                and self.seed == other.seed and self.constants == other.constants)

    def merge(self, other: "MatrixLevelStack") -> "MatrixLevelStack":
        if not self.compatible(other):
            raise SketchMismatchError("matrix stacks differ in dictionary, parameters or seed")
        out = MatrixLevelStack.__new__(MatrixLevelStack)
        out.__dict__.update(self.__dict__)
        out.cells = [[a.merge(b) for a, b in zip(ra, rb)] for ra, rb in zip(self.cells, other.cells)]
        return out

    __add__ = merge

    def table_equal(self, other: "MatrixLevelStack") -> bool:
        return self.compatible(other) and all(
            a.table_equal(b) for ra, rb in zip(self.cells, other.cells) for a, b in zip(ra, rb))

    @property
    def nbytes(self) -> int:
        return sum(c.nbytes for row in self.cells for c in row)

    def formula_bytes(self) -> int:
        return (self.S + 1) * self.T * self.params.dense_bytes(self.n)

    def to_bytes(self) -> bytes:
        buf = io.BytesIO()
        buf.write(_HEADER.pack(_MAGIC, _VERSION, self.m, self.n, self.S, self.T, self.eps,
                               self.kappa_u, self.gamma, self.seed, self.dictionary.digest()))
        for row in self.cells:
            for cell in row:
                blob = cell.to_bytes()
                buf.write(struct.pack("<Q", len(blob)))
                buf.write(blob)
        return buf.getvalue()

    @classmethod
    def from_bytes(cls, data: bytes, dictionary: Dictionary,
                   constants: Constants = DEFAULT_CONSTANTS,
                   offset: int = 0) -> tuple["MatrixLevelStack", int]:
        try:
            magic, version, m, n, S, T, eps, kappa_u, gamma, seed, digest = _HEADER.unpack_from(data, offset)
        except struct.error as exc:
            raise FormatError(f"truncated matrix-stack header: {exc}") from None
        if magic != _MAGIC or version != _VERSION:
            raise FormatError("not a matrix level stack (or unsupported version)")
        if digest != dictionary.digest() or (m, n) != (dictionary.m, dictionary.n):
            raise SketchMismatchError("stack was built for a different dictionary")
        stack = cls(dictionary, eps, kappa_u, gamma, seed, constants)
        if (stack.S, stack.T) != (S, T):
            raise FormatError("cell grid does not match the configured constants")
        pos = offset + _HEADER.size
        for s in range(S + 1):
            for t in range(T):
                (length,) = struct.unpack_from("<Q", data, pos)
                pos += 8
                cell, end = HHSketch.from_bytes(data, constants, pos)
                if end != pos + length or cell.params != stack.cells[s][t].params:
                    raise FormatError(f"cell ({s}, {t}) does not match the stack header")
                stack.cells[s][t] = cell
                pos = end
        return stack, pos


def maintain_matrix_sketches(dictionary: Dictionary, eps: float, kappa_u: float, gamma: float,
                             seed: int, constants: Constants = DEFAULT_CONSTANTS) -> MatrixLevelStack:
    return MatrixLevelStack(dictionary, eps, kappa_u, gamma, seed, constants)


@dataclass
class RowSparsifier:
    """Reweighted dictionary rows plus ``gamma I``."""

    dictionary: Dictionary
    indices: np.ndarray
    weights: np.ndarray
    gamma: float = 0.0

    def __post_init__(self):
        self.indices = np.asarray(self.indices, dtype=np.int64).ravel()
        self.weights = np.asarray(self.weights, dtype=np.float64).ravel()
        order = np.argsort(self.indices, kind="stable")
        self.indices, self.weights = self.indices[order], self.weights[order]

    @property
    def n(self) -> int:
        return self.dictionary.n

    @property
    def num_edges(self) -> int:
        return int(self.indices.size)

    num_rows = num_edges

    def to_operator(self, scale: float = 1.0) -> CoarseOperator:
        return CoarseOperator(self.n, self.dictionary.rows[self.indices],
                              self.weights * scale, self.gamma * scale)

    def matrix(self, include_gamma: bool = True) -> np.ndarray:
        K = self.dictionary.gram(self.indices, self.weights)
        if include_gamma and self.gamma:
            K = K + self.gamma * np.eye(self.n)
        return K

    def to_text(self) -> str:
        lines = [f"{self.dictionary.m} {self.n} {self.gamma!r}"]
        lines += [f"{i} {w!r}" for i, w in zip(self.indices.tolist(), self.weights.tolist())]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, source: Union[str, TextIO], dictionary: Dictionary) -> "RowSparsifier":
        text = source if isinstance(source, str) else source.read()
        lines = [ln for ln in text.splitlines() if ln.strip() and not ln.lstrip().startswith("#")]
        try:
            m, n, gamma = lines[0].split()
            body = [ln.split() for ln in lines[1:]]
            idx = np.array([int(b[0]) for b in body], dtype=np.int64)
            w = np.array([float(b[1]) for b in body])
        except (ValueError, IndexError) as exc:
            raise FormatError(f"malformed row sparsifier file: {exc}") from None
        if (int(m), int(n)) != (dictionary.m, dictionary.n):
            raise FormatError("row sparsifier does not match the dictionary shape")
        return cls(dictionary, idx, w, float(gamma))


def row_sample_matrix(stack: MatrixLevelStack, coarse: CoarseOperator, eps: float, c: float,
                      constants: Optional[Constants] = None, solve: SolveConfig = DEFAULT_SOLVE,
                      candidates=None, record: bool = False):
    """Sample dictionary rows at rates ``2^-s_i`` through the sketch cells.

    Returns ``(indices, weights)`` and, with ``record``, the decision table
    (whose ``estimate`` column holds the squared point estimate).
    """
    constants = constants or stack.constants
    D = stack.dictionary
    ids = (np.arange(stack.m, dtype=np.int64) if candidates is None
           else np.unique(np.asarray(candidates, dtype=np.int64)))
    kept_i, kept_w, parts = [], [], []
    for lo in range(0, ids.size, solve.block_size):
        block = ids[lo:lo + solve.block_size]
        tau, Y = approx_leverages(coarse, D.rows[block], solve, c, return_solutions=True)
        p = sampling_probability(tau, stack.n, eps, constants)
        s = sampling_level(p)
        s = np.where(s > stack.S, SKIPPED, s)
        t = stack.pick(block)
        est = np.zeros(block.size)
        norm = np.zeros(block.size)
        live = np.flatnonzero(s != SKIPPED)
        cell_id = s[live] * stack.T + t[live]
        for cid in np.unique(cell_id):
            sel = live[cell_id == cid]
            sv, tv = divmod(int(cid), stack.T)
            Ysel = Y[:, sel].T
            est[sel] = stack.point_query_many(sv, tv, block[sel], Ysel)
            norm[sel] = stack.norm_sq_estimates(sv, tv, Ysel)
        recovered = (s != SKIPPED) & (est**2 >= norm / stack.C) & (est > 0)
        kept_i.append(block[recovered])
        kept_w.append(np.ldexp(1.0, s[recovered]))
        if record:
            parts.append(DecisionTable(block, tau, p, s, est**2, recovered))
    indices = np.concatenate(kept_i) if kept_i else np.zeros(0, dtype=np.int64)
    weights = np.concatenate(kept_w) if kept_w else np.zeros(0)
    if record:
        return indices, weights, DecisionTable.concat(parts)
    return indices, weights


def refine_matrix_sparsifier(stack: MatrixLevelStack, coarse: CoarseOperator, gamma: float,
                             eps: float, c: float, constants: Optional[Constants] = None,
                             solve: SolveConfig = DEFAULT_SOLVE) -> RowSparsifier:
    if gamma != stack.gamma:
        raise ValueError(f"stack was built for gamma={stack.gamma}, refine called with {gamma}")
    idx, w = row_sample_matrix(stack, coarse, eps, c, constants, solve)
    return RowSparsifier(stack.dictionary, idx, w, gamma)


def structured_schedule(dictionary: Dictionary, kappa_u: float,
                        lambda_u: Optional[float] = None,
                        levels: Optional[int] = None) -> ChainSchedule:
    """Chain for ``A^T A``; ``lambda_u`` defaults to the full-dictionary top eigenvalue."""
    lam = dictionary.lambda_max() if lambda_u is None else lambda_u
    return schedule_from_bounds(lam, kappa_u, levels)


def make_matrix_stacks(dictionary: Dictionary, eps: float, kappa_u: float, seed: int,
                       schedule: ChainSchedule,
                       constants: Constants = DEFAULT_CONSTANTS) -> list[MatrixLevelStack]:
    return [MatrixLevelStack(dictionary, eps, kappa_u, g, derive_key("chain-stack", "matrix", seed, level),
                             constants)
            for level, g in enumerate(schedule.gammas)]


def recover_matrix_sparsifier(stacks: Sequence[MatrixLevelStack], eps: float,
                              constants: Optional[Constants] = None,
                              solve: SolveConfig = DEFAULT_SOLVE,
                              K_exact: Optional[np.ndarray] = None) -> tuple[RowSparsifier, ChainReport]:
    """Chain recovery of a reweighted row subset with ``A~^T A~ ~ A^T A``."""
    if not stacks:
        raise ValueError("no stacks")
    n = stacks[0].n
    gammas = [s.gamma for s in stacks]
    if gammas[-1] != 0.0:
        raise ValueError("the last stack must have gamma = 0")

    def base(g):
        return CoarseOperator.identity(n, g)

    def step(stack, coarse, g, c):
        return refine_matrix_sparsifier(stack, coarse, g, eps, c, constants or stack.constants, solve)

    check = None
    if K_exact is not None:
        def check(level, sparsifier):
            return spectral_certify(K_exact + gammas[level] * np.eye(n), sparsifier.matrix(), eps)

    return run_chain(stacks, gammas, eps, base, step, check)


@dataclass
class RowMarginalReport:
    rows: np.ndarray
    levels: np.ndarray
    upper: np.ndarray
    lower: np.ndarray
    frequency: np.ndarray
    trials: int

    def sigma(self) -> np.ndarray:
        return np.sqrt(self.upper * (1 - self.upper) / self.trials)

    def within(self, k: float = 3.0) -> np.ndarray:
        sig = self.sigma()
        return (self.frequency >= self.lower - k * sig - 1e-12) & (self.frequency <= self.upper + k * sig + 1e-12)


def row_sampling_marginals(trials: int, dictionary: Dictionary, present, eps: float,
                           kappa_u: float, seed: int = 0,
                           constants: Constants = DEFAULT_CONSTANTS,
                           solve: SolveConfig = DEFAULT_SOLVE) -> RowMarginalReport:
    """Per-row inclusion frequency with the exact ``A^T A`` as coarse operator (gamma = 0, c = 1)."""
    present = np.unique(np.asarray(present, dtype=np.int64))
    exact = CoarseOperator(dictionary.n, dictionary.rows[present], np.ones(present.size), 0.0)
    tau = approx_leverages(exact, dictionary.rows[present], solve, 1.0)
    levels = sampling_level(sampling_probability(tau, dictionary.n, eps, constants))
    upper = np.ldexp(1.0, -levels)
    hits = np.zeros(present.size)
    for trial in range(trials):
        stack = MatrixLevelStack(dictionary, eps, kappa_u, 0.0, seed + trial, constants)
        stack.ingest_many(present, np.ones(present.size))
        idx, _ = row_sample_matrix(stack, exact, eps, 1.0, constants, solve, candidates=present)
        hits += np.isin(present, idx)
    return RowMarginalReport(present, levels, upper, (1 - eps) * upper, hits / trials, trials)


def parse_row_stream(source: Union[str, TextIO], m: Optional[int] = None
                     ) -> tuple[np.ndarray, np.ndarray]:
    """Parse ``+ i`` / ``- i`` tokens into ``(row ids, signs)``."""
    lines = source.splitlines() if isinstance(source, str) else source
    ids, signs = [], []
    for line_no, raw in enumerate(lines, start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) != 2 or parts[0] not in ("+", "-"):
            raise StreamParseError(line_no, "expected '+ i' or '- i'")
        try:
            i = int(parts[1])
        except ValueError:
            raise StreamParseError(line_no, "non-integer row id") from None
        if i < 0 or (m is not None and i >= m):
            raise StreamParseError(line_no, f"row id {i} outside the dictionary")
        ids.append(i)
        signs.append(1.0 if parts[0] == "+" else -1.0)
    return np.array(ids, dtype=np.int64), np.array(signs)
