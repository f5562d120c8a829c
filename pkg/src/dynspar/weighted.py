"""Integer edge weights by binary decomposition.

A weight ``w`` in ``[1, W_max]`` is split into its set bits; bit ``i`` routes
an unweighted copy of the edge into sub-stream ``G_i``.  Each sub-stream is
sketched and recovered as an ordinary unweighted graph, and the results are
recombined as ``sum_i 2^i H_i``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

import numpy as np

from .chain import ChainReport, build_schedule, make_stacks, recover_sparsifier
from .config import DEFAULT_CONSTANTS, DEFAULT_SOLVE, Constants, SolveConfig
from .errors import InvalidEdgeError
from .graph_core import EdgeUpdate, exact_laplacian, updates_to_arrays
from .refine import Sparsifier
from .sampling_levels import net_updates


@dataclass(frozen=True)
class WeightedConfig:
    wmax: int

    def __post_init__(self):
        if int(self.wmax) != self.wmax or self.wmax < 1:
            raise ValueError("wmax must be a positive integer")

    @property
    def bits(self) -> int:
        """``floor(log2 W_max) + 1``."""
        return int(self.wmax).bit_length()

    def check(self, weight: int) -> None:
        if not 1 <= weight <= self.wmax:
            raise InvalidEdgeError(f"weight {weight} outside [1, {self.wmax}]")


def weight_bits(weight: int) -> list[int]:
    return [i for i in range(int(weight).bit_length()) if (weight >> i) & 1]


def route_update(upd: EdgeUpdate, cfg: WeightedConfig) -> list[tuple[int, EdgeUpdate]]:
    """One unweighted update per set bit of the weight; deletions mirror insertions."""
    weight = 1 if upd.weight is None else int(upd.weight)
    cfg.check(weight)
    return [(i, EdgeUpdate(upd.op, upd.u, upd.v)) for i in weight_bits(weight)]


def route_arrays(ids, signs, weights, cfg: WeightedConfig) -> list[tuple[np.ndarray, np.ndarray]]:
    """Vectorized routing: per bit, the ``(edge ids, signs)`` of its sub-stream."""
    ids = np.asarray(ids, dtype=np.int64)
    signs = np.asarray(signs, dtype=np.float64)
    weights = np.asarray(weights, dtype=np.int64)
    if weights.size and (weights.min() < 1 or weights.max() > cfg.wmax):
        raise InvalidEdgeError(f"weight outside [1, {cfg.wmax}]")
    out = []
    for i in range(cfg.bits):
        sel = ((weights >> i) & 1).astype(bool)
        out.append((ids[sel], signs[sel]))
    return out


def split_graph(edges, weights, cfg: WeightedConfig) -> list[np.ndarray]:
    """Edge sets of the sub-graphs ``G_i`` of a static weighted graph."""
    return [e for e, _ in route_arrays(edges, np.ones(len(edges)), weights, cfg)]


def recombine(sparsifiers: Sequence[Sparsifier]) -> Sparsifier:
    """``sum_i 2^i H_i`` as one weighted edge list (shared edges have weights summed)."""
    if not sparsifiers:
        raise ValueError("nothing to recombine")
    n = sparsifiers[0].n
    edges = np.concatenate([h.edges for h in sparsifiers])
    weights = np.concatenate([np.ldexp(h.weights, i) for i, h in enumerate(sparsifiers)])
    gamma = sum(np.ldexp(h.gamma, i) for i, h in enumerate(sparsifiers))
    uniq, inv = np.unique(edges, return_inverse=True)
    summed = np.bincount(inv.ravel(), weights=weights, minlength=uniq.size)
    return Sparsifier(n, uniq, summed, float(gamma))


def recombined_laplacian(edges, weights, cfg: WeightedConfig, n: int) -> np.ndarray:
    """``sum_i 2^i L(G_i)`` computed in integer arithmetic."""
    total = np.zeros((n, n), dtype=np.int64)
    for i, sub in enumerate(split_graph(edges, weights, cfg)):
        total += exact_laplacian(sub, n).astype(np.int64) << i
    return total


class WeightedSketch:
    """One chain of level stacks per weight bit."""

    def __init__(self, n: int, eps: float, seed: int, cfg: WeightedConfig,
                 constants: Constants = DEFAULT_CONSTANTS, levels: Optional[int] = None):
        self.n, self.eps, self.seed, self.cfg = n, eps, seed, cfg
        self.constants = constants
        self.schedule = build_schedule(n, levels)
        self.chains = [make_stacks(n, eps, seed, self.schedule, constants, tag=f"bit{i}")
                       for i in range(cfg.bits)]

    def ingest_many(self, ids, signs, weights) -> None:
        for chain, (sub_ids, sub_signs) in zip(self.chains, route_arrays(ids, signs, weights, self.cfg)):
            sub_ids, sub_signs = net_updates(sub_ids, sub_signs)
            for stack in chain:
                stack.ingest_many(sub_ids, sub_signs)

    def ingest_updates(self, updates: Iterable[EdgeUpdate]) -> None:
        self.ingest_many(*updates_to_arrays(updates, self.n))

    def recover(self, solve: SolveConfig = DEFAULT_SOLVE) -> tuple[Sparsifier, list[ChainReport]]:
        return recover_weighted(self.chains, self.eps, self.constants, solve)


def recover_weighted(chains: Sequence[Sequence], eps: float,
                     constants: Optional[Constants] = None,
                     solve: SolveConfig = DEFAULT_SOLVE) -> tuple[Sparsifier, list[ChainReport]]:
    parts, reports = [], []
    for chain in chains:
        H, rep = recover_sparsifier(chain, eps, constants, solve)
        parts.append(H)
        reports.append(rep)
    return recombine(parts), reports
