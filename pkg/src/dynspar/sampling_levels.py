"""Nested geometric subsampling of the edge space, one sketch per level.

Level 0 sketches every streamed edge.  Edge ``e`` also appears in levels
``1..L(e)`` where ``L(e)`` is the number of leading successes of a keyed hash
chain ``h_1(e), h_2(e), ...`` of fair bits, so level ``s`` keeps each edge
independently with probability ``2^-s`` and is a subset of level ``s-1``.

The rows ``sqrt(gamma) * 1_v`` of the identity block occupy indices
``C(n,2) .. C(n,2)+n-1`` of every level.  They are deterministic, so they are
held in closed form (recomputed from the seed when needed) instead of being
added into the accumulators; this keeps every stored accumulator an integer
and makes insert/delete cancellation and reordering bit-exact.
"""

from __future__ import annotations

import io
import math
import struct
from typing import Iterable

import numpy as np

from ._hashing import derive_key, prf, trailing_ones
from .config import DEFAULT_CONSTANTS, Constants
from .errors import FormatError, SketchMismatchError
from .graph_core import EdgeUpdate, edge_pairs, num_pairs, updates_to_arrays
from .hh_sketch import HHParams, HHSketch

_MAGIC = b"DSLS"
_VERSION = 1
_HEADER = struct.Struct("<4sHIIdQdI")


def graph_eta(n: int, eps: float, constants: Constants = DEFAULT_CONSTANTS) -> float:
    """Heavy-hitter precision ``eps / (c1 * sqrt(log2 n))``."""
    return eps / (constants.c1 * math.sqrt(max(math.log2(n), 1.0)))


def top_level(n: int, constants: Constants = DEFAULT_CONSTANTS) -> int:
    """Index ``S`` of the deepest level: ``ceil(log2 C(n,2)) + margin``."""
    pairs = num_pairs(n)
    return (pairs - 1).bit_length() + constants.level_margin


class LevelStack:
    """Single-pass front end: ``S + 1`` nested subsampled sketches.

    Parameters:
        n: number of vertices.
        eps: target precision; fixes the heavy-hitter ``eta``.
        gamma: weight of the identity block ``sqrt(gamma) * I``.
        seed: key for every hash function in the stack.
    """

    def __init__(self, n: int, eps: float, gamma: float, seed: int,
                 constants: Constants = DEFAULT_CONSTANTS):
        if n < 2:
            raise ValueError("need at least two vertices")
        if not 0.0 < eps < 1.0:
            raise ValueError("eps must lie in (0, 1)")
        if gamma < 0:
            raise ValueError("gamma must be nonnegative")
        self.n = n
        self.eps = eps
        self.gamma = float(gamma)
        self.seed = int(seed)
        self.constants = constants
        self.num_edges = num_pairs(n)
        self.index_space = self.num_edges + n
        self.S = top_level(n, constants)
        self.eta = graph_eta(n, eps, constants)
        base = HHParams.for_accuracy(self.index_space, self.eta, 0, constants)
        self.params = base
        self._chain_key = derive_key("level-chain", self.seed)
        self.levels = [HHSketch(base.with_seed(derive_key("level", self.seed, s)), n, constants)
                       for s in range(self.S + 1)]

    # ------------------------------------------------------------ sampling

    def edge_levels(self, edges) -> np.ndarray:
        """``L(e)`` capped at ``S``: deepest level containing each edge."""
        edges = np.asarray(edges, dtype=np.int64)
        return np.minimum(trailing_ones(prf(self._chain_key, edges.astype(np.uint64))), self.S)

    def chain_bit(self, edges, j: int) -> np.ndarray:
        """``h_j(e)`` for ``j >= 1``."""
        words = prf(self._chain_key, np.asarray(edges, dtype=np.uint64))
        return ((words >> np.uint64(j - 1)) & np.uint64(1)).astype(np.int64)

    def level_members(self, edges, s: int) -> np.ndarray:
        """Boolean mask of ``edges`` that belong to level ``s``."""
        return self.edge_levels(edges) >= s

    # ------------------------------------------------------------ ingestion

    def ingest(self, upd: EdgeUpdate) -> None:
        self.ingest_many([upd.edge_id(self.n)], [upd.sign])

    def ingest_updates(self, updates: Iterable[EdgeUpdate]) -> None:
        ids, signs, _ = updates_to_arrays(updates, self.n)
        self.ingest_many(ids, signs)

    def ingest_many(self, edges, signs) -> None:
        """Apply ``signs[j] * b_{edges[j]}`` to every level containing the edge."""
        edges, signs = net_updates(edges, signs)
        if edges.size == 0:
            return
        u, v = edge_pairs(edges, self.n)
        cols = np.stack([u, v], axis=1)
        vals = np.tile(np.array([1.0, -1.0]), (edges.size, 1))
        depth = self.edge_levels(edges)
        for s in range(int(depth.max()) + 1):
            sel = depth >= s
            self.levels[s].update_many(edges[sel], cols[sel], vals[sel], signs[sel])

    # ------------------------------------------------------------ identity block

    def identity_indices(self) -> np.ndarray:
        return self.num_edges + np.arange(self.n, dtype=np.int64)

    def identity_projection(self, s: int, y) -> np.ndarray:
        """Count-sketch contribution of the identity block to ``table_s @ y``."""
        vertices = np.arange(self.n)
        return self.levels[s].virtual_projection(
            self.identity_indices(), vertices, np.full(self.n, math.sqrt(self.gamma)), y)

    def full_table(self, s: int) -> np.ndarray:
        """Dense table of level ``s`` including the identity rows."""
        table = self.levels[s].table()
        sk = self.levels[s]
        bucket, sigma = sk.hashes(self.identity_indices())
        root = math.sqrt(self.gamma)
        for v in range(self.n):
            table[np.arange(sk.rows), bucket[:, v], v] += sigma[:, v] * root
        return table

    # ------------------------------------------------------------ queries

    def point_query_many(self, s: int, edges, Y) -> np.ndarray:
        """Estimates of ``x(e) = b_e^T y_e`` restricted to level ``s`` edges.

        Uses the edge part of the level only, i.e. estimates entries of
        ``B_s y``; the identity block is known exactly and never enters.
        """
        return self.levels[s].point_query_many(edges, Y)

    # ------------------------------------------------------------ bookkeeping

    def compatible(self, other: "LevelStack") -> bool:
        return (self.n == other.n and self.eps == other.eps and self.gamma == other.gamma
                and self.seed == other.seed and self.constants == other.constants)

    def merge(self, other: "LevelStack") -> "LevelStack":
        if not self.compatible(other):
            raise SketchMismatchError("level stacks differ in n, eps, gamma, seed or constants")
        out = LevelStack.__new__(LevelStack)
        out.__dict__.update(self.__dict__)
        out.levels = [a.merge(b) for a, b in zip(self.levels, other.levels)]
        return out

    __add__ = merge

    def table_equal(self, other: "LevelStack") -> bool:
        return self.compatible(other) and all(
            a.table_equal(b) for a, b in zip(self.levels, other.levels))

    @property
    def nbytes(self) -> int:
        return sum(sk.nbytes for sk in self.levels)

    def formula_bytes(self) -> int:
        """Dense size ``(S+1) * d * w * n * 8`` of the whole stack."""
        return (self.S + 1) * self.params.dense_bytes(self.n)

    def level_inclusion_rate(self, s: int) -> float:
        return level_inclusion_rate(self, s)

    # ------------------------------------------------------------ serialization

    def to_bytes(self) -> bytes:
        buf = io.BytesIO()
        buf.write(_HEADER.pack(_MAGIC, _VERSION, self.n, self.S, self.eps, self.seed,
                               self.gamma, len(self.levels)))
        for sk in self.levels:
            blob = sk.to_bytes()
            buf.write(struct.pack("<Q", len(blob)))
            buf.write(blob)
        return buf.getvalue()

    @classmethod
    def from_bytes(cls, data: bytes, constants: Constants = DEFAULT_CONSTANTS,
                   offset: int = 0) -> tuple["LevelStack", int]:
        try:
            magic, version, n, S, eps, seed, gamma, count = _HEADER.unpack_from(data, offset)
        except struct.error as exc:
            raise FormatError(f"truncated level-stack header: {exc}") from None
        if magic != _MAGIC or version != _VERSION:
            raise FormatError("not a level stack (or unsupported version)")
        stack = cls(n, eps, gamma, seed, constants)
        if stack.S != S or count != S + 1:
            raise FormatError("level count does not match the configured constants")
        pos = offset + _HEADER.size
        for s in range(count):
            (length,) = struct.unpack_from("<Q", data, pos)
            pos += 8
            sk, end = HHSketch.from_bytes(data, constants, pos)
            if end != pos + length or sk.params != stack.levels[s].params:
                raise FormatError(f"level {s} does not match the stack header")
            stack.levels[s] = sk
            pos = end
        return stack, pos


def net_updates(idx, signs) -> tuple[np.ndarray, np.ndarray]:
    """Collapse a batch of ``(index, sign)`` tokens to net nonzero multiplicities.

    Signs are small integers, so the sums are exact and sketching the net
    batch gives the same table, bit for bit, as sketching token by token.
    """
    idx = np.asarray(idx, dtype=np.int64).ravel()
    signs = np.asarray(signs, dtype=np.float64).ravel()
    if idx.size == 0:
        return idx, signs
    uniq, inv = np.unique(idx, return_inverse=True)
    net = np.bincount(inv.ravel(), weights=signs, minlength=uniq.size)
    keep = net != 0.0
    return uniq[keep], net[keep]


def maintain_sketches_new(n: int, eps: float, gamma: float, seed: int,
                          constants: Constants = DEFAULT_CONSTANTS) -> LevelStack:
    return LevelStack(n, eps, gamma, seed, constants)


def ingest(stack: LevelStack, upd: EdgeUpdate) -> None:
    stack.ingest(upd)


def level_inclusion_rate(stack: LevelStack, s: int) -> float:
    """Fraction of all ``C(n,2)`` edge ids whose level is at least ``s``."""
    ids = np.arange(stack.num_edges, dtype=np.int64)
    return float(np.mean(stack.edge_levels(ids) >= s))


def level_edge_sets(stack: LevelStack, edges) -> list[np.ndarray]:
    """Ground-truth membership of a known edge set in each level (test oracle)."""
    edges = np.asarray(edges, dtype=np.int64)
    depth = stack.edge_levels(edges)
    return [edges[depth >= s] for s in range(stack.S + 1)]
