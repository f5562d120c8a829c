"""Linear l2 heavy-hitter point-query sketch with node-space accumulators.

The sketch of a matrix ``M`` (rows indexed by ``[0, N)``, columns by the ``n``
vertices) is a ``d x w`` table of ``n``-vectors.  Row ``i`` of ``M`` lands in
bucket ``h_r(i)`` of every table row ``r`` with sign ``sigma_r(i)``.  Because
accumulators live in vertex space, a query vector ``y`` can be applied after
sketching: the table times ``y`` is the count-sketch of ``x = M y``, and the
median over ``r`` of ``sigma_r(i) * <acc(r, h_r(i)), y>`` estimates ``x(i)``
to within ``eta * ||x||_2``.

Storage is a coalesced sparse list of (flat index, value) pairs that is
switched to a dense array once that is smaller.  The logical table is the same
either way, and so is the serialized form.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np
import scipy.sparse as sp

from ._hashing import derive_key, prf, to_bucket, to_sign
from .config import DEFAULT_CONSTANTS, Constants
from .errors import CapacityError, FormatError, SketchMismatchError

_MAGIC = b"DSHH"
_VERSION = 1
_HEADER = struct.Struct("<4sHQIIIQdBQ")
_ENC_SPARSE = 0
_ENC_DENSE = 1
_PAIR_BYTES = 16


@dataclass(frozen=True)
class HHParams:
    """Shape and randomness of one sketch.

    ``N`` is the size of the row index space, ``eta`` the additive-error
    target, ``rows``/``buckets`` the table shape and ``seed`` the PRF key.
    """

    N: int
    eta: float
    rows: int
    buckets: int
    seed: int

    def __post_init__(self):
        if self.N < 1:
            raise ValueError("index space must be nonempty")
        if not 0.0 < self.eta < 1.0:
            raise ValueError(f"eta must lie in (0, 1), got {self.eta}")
        if self.rows < 1 or self.buckets < 1:
            raise ValueError("rows and buckets must be positive")
        if self.buckets >= 1 << 32:
            raise ValueError("too many buckets")

    @classmethod
    def for_accuracy(cls, N: int, eta: float, seed: int,
                     constants: Constants = DEFAULT_CONSTANTS) -> "HHParams":
        """Smallest table satisfying ``w >= c_w/eta^2`` and ``d >= c_d*log2 N``."""
        buckets = math.ceil(constants.c_w / eta**2)
        rows = max(1, math.ceil(constants.c_d * math.log2(max(N, 2))))
        return cls(N=N, eta=eta, rows=rows, buckets=buckets, seed=seed)

    def satisfies(self, constants: Constants = DEFAULT_CONSTANTS) -> bool:
        return (self.buckets >= math.ceil(constants.c_w / self.eta**2)
                and self.rows >= math.ceil(constants.c_d * math.log2(max(self.N, 2))))

    def with_seed(self, seed: int) -> "HHParams":
        return replace(self, seed=seed)

    def dense_bytes(self, n: int) -> int:
        return self.rows * self.buckets * n * 8


class HHSketch:
    """Mergeable point-query sketch of an ``N x n`` matrix.

    Updates to one sketch must be serialized by the caller; queries on a sketch
    that is not being updated are read-only.
    """

    def __init__(self, params: HHParams, n: int, constants: Constants = DEFAULT_CONSTANTS):
        if params.dense_bytes(n) > constants.memory_cap:
            raise CapacityError(
                f"sketch table {params.rows}x{params.buckets}x{n} needs "
                f"{params.dense_bytes(n)} bytes, cap is {constants.memory_cap}")
        self.params = params
        self.n = n
        self._dense_limit = constants.dense_limit
        self._row_keys = prf(derive_key("hh-row", params.seed), np.arange(params.rows))
        self._keys = np.zeros(0, dtype=np.int64)
        self._vals = np.zeros(0, dtype=np.float64)
        self._pending_keys: list[np.ndarray] = []
        self._pending_vals: list[np.ndarray] = []
        self._pending = 0
        self._dense: Optional[np.ndarray] = None
        self._csr = None

    # ------------------------------------------------------------ hashing

    @property
    def rows(self) -> int:
        return self.params.rows

    @property
    def buckets(self) -> int:
        return self.params.buckets

    def hashes(self, idx) -> tuple[np.ndarray, np.ndarray]:
        """Buckets ``(d, k)`` and signs ``(d, k)`` for row indices ``idx``."""
        idx = np.atleast_1d(np.asarray(idx, dtype=np.int64))
        words = prf(self._row_keys[:, None], idx[None, :].astype(np.uint64))
        return to_bucket(words, self.buckets), to_sign(words)

    def _check_index(self, idx: np.ndarray) -> None:
        if idx.size and (idx.min() < 0 or idx.max() >= self.params.N):
            raise IndexError(f"row index out of range [0, {self.params.N})")

    # ------------------------------------------------------------ updates

    def update(self, i: int, cols, vals, sign: float = 1.0) -> None:
        """Add ``sign * row`` at index ``i``; ``row`` given by its nonzeros."""
        cols = np.asarray(cols, dtype=np.int64).reshape(1, -1)
        vals = np.asarray(vals, dtype=np.float64).reshape(1, -1)
        self.update_many(np.array([i]), cols, vals, np.array([sign], dtype=np.float64))

    def update_many(self, idx, cols, vals, signs=None) -> None:
        """Batched update: row ``j`` has nonzeros ``cols[j]``/``vals[j]``.

        ``signs[j]`` multiplies row ``j`` (defaults to +1).
        """
        idx = np.asarray(idx, dtype=np.int64)
        if idx.size == 0:
            return
        self._check_index(idx)
        cols = np.asarray(cols, dtype=np.int64).reshape(len(idx), -1)
        vals = np.asarray(vals, dtype=np.float64).reshape(len(idx), -1)
        if cols.size and (cols.min() < 0 or cols.max() >= self.n):
            raise IndexError("column index out of range")
        bucket, sigma = self.hashes(idx)
        if signs is not None:
            sigma = sigma * np.asarray(signs, dtype=np.float64)[None, :]
        r = np.arange(self.rows, dtype=np.int64)[:, None]
        flat_row = r * self.buckets + bucket
        keys = (flat_row[:, :, None] * self.n + cols[None, :, :]).ravel()
        contrib = (sigma[:, :, None] * vals[None, :, :]).ravel()
        self._csr = None
        if self._dense is not None:
            np.add.at(self._dense, keys, contrib)
            return
        self._pending_keys.append(keys)
        self._pending_vals.append(contrib)
        self._pending += keys.size
        if self._pending > max(1 << 16, 2 * self._keys.size):
            self._compact()

    def _compact(self) -> None:
        if self._dense is not None or not self._pending_keys:
            return
        keys = np.concatenate([self._keys] + self._pending_keys)
        vals = np.concatenate([self._vals] + self._pending_vals)
        self._pending_keys, self._pending_vals, self._pending = [], [], 0
        uniq, inv = np.unique(keys, return_inverse=True)
        sums = np.bincount(inv.ravel(), weights=vals, minlength=uniq.size)
        keep = sums != 0.0
        self._keys, self._vals = uniq[keep], sums[keep]
        dense_bytes = self.params.dense_bytes(self.n)
        if dense_bytes <= self._dense_limit and self._keys.size * _PAIR_BYTES >= dense_bytes:
            self._densify()

    def _densify(self) -> None:
        dense = np.zeros(self.rows * self.buckets * self.n)
        dense[self._keys] = self._vals
        self._dense = dense
        self._keys = np.zeros(0, dtype=np.int64)
        self._vals = np.zeros(0, dtype=np.float64)

    # ------------------------------------------------------------ views

    def entries(self) -> tuple[np.ndarray, np.ndarray]:
        """Canonical nonzero ``(flat_index, value)`` pairs in ascending order."""
        if self._dense is not None:
            keys = np.flatnonzero(self._dense).astype(np.int64)
            return keys, self._dense[keys].copy()
        self._compact()
        return self._keys.copy(), self._vals.copy()

    def table(self) -> np.ndarray:
        """Dense ``(d, w, n)`` copy of the logical table."""
        out = np.zeros(self.rows * self.buckets * self.n)
        keys, vals = self.entries()
        out[keys] = vals
        return out.reshape(self.rows, self.buckets, self.n)

    @property
    def nnz(self) -> int:
        return int(self.entries()[0].size)

    @property
    def nbytes(self) -> int:
        """Resident bytes of the accumulator storage."""
        total = self._keys.nbytes + self._vals.nbytes
        total += sum(a.nbytes for a in self._pending_keys) + sum(a.nbytes for a in self._pending_vals)
        if self._dense is not None:
            total += self._dense.nbytes
        return total

    def is_empty(self) -> bool:
        return self.nnz == 0

    def table_equal(self, other: "HHSketch") -> bool:
        """Bit-exact comparison of logical tables (and parameters)."""
        if self.params != other.params or self.n != other.n:
            return False
        ka, va = self.entries()
        kb, vb = other.entries()
        return np.array_equal(ka, kb) and np.array_equal(va.view(np.uint64), vb.view(np.uint64))

    # ------------------------------------------------------------ queries

    def bucket_dots(self, flat_rows, Y, owner=None) -> np.ndarray:
        """``<acc(flat_rows[q]), Y[owner[q]]>`` for every gathered accumulator."""
        flat_rows = np.asarray(flat_rows, dtype=np.int64).ravel()
        Y = np.atleast_2d(np.asarray(Y, dtype=np.float64))
        owner = np.zeros(flat_rows.size, dtype=np.int64) if owner is None else np.asarray(owner).ravel()
        if self._dense is not None:
            acc = self._dense.reshape(self.rows * self.buckets, self.n)[flat_rows]
            return np.einsum("qj,qj->q", acc, Y[owner])
        occ, mat = self.occupied()
        out = np.zeros(flat_rows.size)
        if occ.size == 0:
            return out
        pos = np.minimum(np.searchsorted(occ, flat_rows), occ.size - 1)
        hit = np.flatnonzero(occ[pos] == flat_rows)
        lo, hi = mat.indptr[pos[hit]], mat.indptr[pos[hit] + 1]
        lengths = hi - lo
        total = int(lengths.sum())
        if total == 0:
            return out
        which = np.repeat(np.arange(hit.size), lengths)
        offsets = np.arange(total) - np.repeat(np.cumsum(lengths) - lengths, lengths)
        at = np.repeat(lo, lengths) + offsets
        contrib = mat.data[at] * Y[owner[hit][which], mat.indices[at]]
        out[hit] = np.bincount(which, weights=contrib, minlength=hit.size)
        return out

    def row_estimates(self, idx, Y) -> np.ndarray:
        """Per-row signed estimates ``(d, k)`` of ``x(idx[j])`` with ``x = M Y[j]``."""
        idx = np.atleast_1d(np.asarray(idx, dtype=np.int64))
        self._check_index(idx)
        Y = np.atleast_2d(np.asarray(Y, dtype=np.float64))
        bucket, sigma = self.hashes(idx)
        flat = np.arange(self.rows, dtype=np.int64)[:, None] * self.buckets + bucket
        owner = np.broadcast_to(np.arange(len(idx)), flat.shape)
        dots = self.bucket_dots(flat.ravel(), Y, owner.ravel()).reshape(flat.shape)
        return sigma * dots

    def point_query_many(self, idx, Y) -> np.ndarray:
        """Median estimates of ``x_j(idx[j])`` where ``x_j = M Y[j]``."""
        return np.median(self.row_estimates(idx, Y), axis=0)

    def point_query(self, i: int, y) -> float:
        return float(self.point_query_many([i], np.asarray(y, dtype=np.float64)[None, :])[0])

    def project(self, y) -> np.ndarray:
        """The ``(d, w)`` count-sketch of ``x = M y``."""
        y = np.asarray(y, dtype=np.float64)
        if self._dense is not None:
            return self._dense.reshape(self.rows, self.buckets, self.n) @ y
        self._compact()
        rows = self._keys // self.n
        cols = self._keys % self.n
        out = np.bincount(rows, weights=self._vals * y[cols], minlength=self.rows * self.buckets)
        return out.reshape(self.rows, self.buckets)

    def occupied(self) -> tuple[np.ndarray, sp.csr_matrix]:
        """Flat indices of nonzero accumulators and their ``(k, n)`` CSR block."""
        if self._csr is None:
            keys, vals = self.entries()
            flat = keys // self.n
            # keys are sorted, so each accumulator's entries are contiguous
            starts = np.flatnonzero(np.r_[True, flat[1:] != flat[:-1]]) if flat.size else flat
            occ = flat[starts]
            indptr = np.r_[starts, keys.size].astype(np.int64)
            mat = sp.csr_matrix((vals, (keys % self.n).astype(np.int64), indptr),
                                shape=(occ.size, self.n))
            self._csr = (occ, mat)
        return self._csr

    def norm_sq_estimates(self, Y) -> np.ndarray:
        """Median over table rows of the bucket energy, one per row of ``Y``.

        For each table row ``r`` the sum over buckets of the squared
        count-sketch of ``x = M y`` is an unbiased estimate of ``||x||^2``;
        the median over rows gives a constant-factor estimate w.h.p.
        """
        Y = np.atleast_2d(np.asarray(Y, dtype=np.float64))
        occ, mat = self.occupied()
        energy = np.zeros((self.rows, Y.shape[0]))
        if occ.size:
            proj = np.asarray(mat @ Y.T)
            np.add.at(energy, occ // self.buckets, proj**2)
        return np.median(energy, axis=0)

    def virtual_projection(self, idx, cols, vals, y) -> np.ndarray:
        """Count-sketch ``(d, w)`` of rows that are not stored.

        Each virtual row ``idx[j]`` has a single nonzero ``vals[j]`` in column
        ``cols[j]``; used for rows whose values are known to the decoder.
        """
        idx = np.asarray(idx, dtype=np.int64)
        out = np.zeros((self.rows, self.buckets))
        if idx.size == 0:
            return out
        bucket, sigma = self.hashes(idx)
        contrib = sigma * (np.asarray(vals, dtype=np.float64) * np.asarray(y)[np.asarray(cols)])[None, :]
        flat = np.arange(self.rows)[:, None] * self.buckets + bucket
        np.add.at(out.reshape(-1), flat.ravel(), contrib.ravel())
        return out

    # ------------------------------------------------------------ algebra

    def copy(self) -> "HHSketch":
        out = HHSketch.__new__(HHSketch)
        out.params, out.n, out._dense_limit = self.params, self.n, self._dense_limit
        out._row_keys = self._row_keys
        self._compact()
        out._keys, out._vals = self._keys.copy(), self._vals.copy()
        out._pending_keys, out._pending_vals, out._pending = [], [], 0
        out._dense = None if self._dense is None else self._dense.copy()
        out._csr = None
        return out

    def merge(self, other: "HHSketch") -> "HHSketch":
        """Sketch of the summed inputs; parameters and seeds must match."""
        if self.params != other.params or self.n != other.n:
            raise SketchMismatchError("cannot merge sketches with different params or seed")
        out = self.copy()
        keys, vals = other.entries()
        if out._dense is not None:
            out._dense[keys] += vals
        else:
            out._pending_keys.append(keys)
            out._pending_vals.append(vals)
            out._pending += keys.size
            out._compact()
        return out

    __add__ = merge

    # ------------------------------------------------------------ serialization

    def to_bytes(self) -> bytes:
        """Header then either the dense row-major table or sorted sparse pairs.

        All numbers little-endian; table entries are 64-bit floats.  The
        encoding is chosen from the content alone, so equal tables serialize to
        identical bytes.
        """
        p = self.params
        keys, vals = self.entries()
        dense_bytes = p.dense_bytes(self.n)
        if keys.size * _PAIR_BYTES < dense_bytes:
            payload = keys.astype("<u8").tobytes() + vals.astype("<f8").tobytes()
            enc, count = _ENC_SPARSE, keys.size
        else:
            payload = self.table().astype("<f8").tobytes()
            enc, count = _ENC_DENSE, p.rows * p.buckets * self.n
        head = _HEADER.pack(_MAGIC, _VERSION, p.N, p.rows, p.buckets, self.n, p.seed,
                            p.eta, enc, count)
        return head + payload

    @classmethod
    def from_bytes(cls, data: bytes, constants: Constants = DEFAULT_CONSTANTS,
                   offset: int = 0) -> tuple["HHSketch", int]:
        """Parse one sketch starting at ``offset``; returns ``(sketch, end)``."""
        try:
            magic, version, N, rows, buckets, n, seed, eta, enc, count = _HEADER.unpack_from(data, offset)
        except struct.error as exc:
            raise FormatError(f"truncated sketch header: {exc}") from None
        if magic != _MAGIC:
            raise FormatError("not a heavy-hitter sketch blob")
        if version != _VERSION:
            raise FormatError(f"unsupported sketch version {version}")
        sk = cls(HHParams(N=N, eta=eta, rows=rows, buckets=buckets, seed=seed), n, constants)
        pos = offset + _HEADER.size
        if enc == _ENC_SPARSE:
            end = pos + 16 * count
            if len(data) < end:
                raise FormatError("truncated sparse payload")
            keys = np.frombuffer(data, dtype="<u8", count=count, offset=pos).astype(np.int64)
            vals = np.frombuffer(data, dtype="<f8", count=count, offset=pos + 8 * count).astype(np.float64)
        elif enc == _ENC_DENSE:
            end = pos + 8 * count
            if len(data) < end:
                raise FormatError("truncated dense payload")
            table = np.frombuffer(data, dtype="<f8", count=count, offset=pos).astype(np.float64)
            keys = np.flatnonzero(table).astype(np.int64)
            vals = table[keys]
        else:
            raise FormatError(f"unknown table encoding {enc}")
        if keys.size:
            sk._pending_keys, sk._pending_vals, sk._pending = [keys], [vals], keys.size
            sk._compact()
        return sk, end


def sketch_vector(x, params: HHParams, constants: Constants = DEFAULT_CONSTANTS) -> HHSketch:
    """Sketch a plain vector: row ``i`` is the scalar ``x[i]`` (``n = 1``)."""
    x = np.asarray(x, dtype=np.float64)
    sk = HHSketch(params, 1, constants)
    sk.update_many(np.arange(x.size), np.zeros((x.size, 1), dtype=np.int64), x[:, None])
    return sk
