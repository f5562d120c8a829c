"""Recursive recovery along the chain ``K(l) = K + gamma(l) I``.

``gamma(l) = lambda_u / 2^l`` halves at every step, so consecutive chain
members are within a factor two of each other.  Recovery starts from the
trivially known ``gamma(0) I``, refines one level at a time with a fresh
level stack per step, and finishes with a ``gamma = 0`` step that yields a
plain weighted subgraph.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from ._hashing import derive_key
from .config import DEFAULT_CONSTANTS, DEFAULT_SOLVE, Constants, SolveConfig
from .errors import RecoveryError, SolverError
from .graph_core import spectral_certify
from .refine import Sparsifier, refine_sparsifier
from .sampling_levels import LevelStack
from .sdd_solve import CoarseOperator


@dataclass(frozen=True)
class ChainSchedule:
    """Spectrum bounds and chain length; ``gammas`` lists ``gamma(0..d)`` then ``0``."""

    lambda_u: float
    lambda_l: float
    d: int

    def __post_init__(self):
        if not 0 < self.lambda_l <= self.lambda_u:
            raise ValueError("need 0 < lambda_l <= lambda_u")
        if self.d < 0:
            raise ValueError("chain length must be nonnegative")

    def gamma(self, level: int) -> float:
        if level == self.d + 1:
            return 0.0
        if not 0 <= level <= self.d:
            raise IndexError(f"chain level {level} outside [0, {self.d + 1}]")
        return math.ldexp(self.lambda_u, -level)

    @property
    def gammas(self) -> list[float]:
        return [self.gamma(level) for level in range(self.d + 2)]

    @property
    def num_stacks(self) -> int:
        return self.d + 2


def build_schedule(n: int, levels: Optional[int] = None) -> ChainSchedule:
    """Unweighted bounds ``lambda_u = 2n``, ``lambda_l = 8/n^2``, ``d = ceil(log2(n^3/4))``.

    ``levels`` overrides ``d``.
    """
    if n < 2:
        raise ValueError("n must be at least 2")
    lambda_u, lambda_l = 2.0 * n, 8.0 / n**2
    d = math.ceil(math.log2(lambda_u / lambda_l)) if levels is None else int(levels)
    return ChainSchedule(lambda_u, lambda_l, d)


def schedule_from_bounds(lambda_u: float, kappa_u: float,
                         levels: Optional[int] = None) -> ChainSchedule:
    """Chain for a caller-supplied top eigenvalue bound and condition-number bound."""
    if kappa_u < 1:
        raise ValueError("kappa_u must be at least 1")
    d = math.ceil(math.log2(kappa_u)) if levels is None else int(levels)
    return ChainSchedule(float(lambda_u), float(lambda_u) / kappa_u, d)


def stack_seed(seed: int, level: int, tag: str = "graph") -> int:
    """Independent key for the stack used at chain level ``level``."""
    return derive_key("chain-stack", tag, seed, level)


def make_stacks(n: int, eps: float, seed: int, schedule: ChainSchedule,
                constants: Constants = DEFAULT_CONSTANTS, tag: str = "graph") -> list[LevelStack]:
    return [LevelStack(n, eps, g, stack_seed(seed, level, tag), constants)
            for level, g in enumerate(schedule.gammas)]


def ingest_all(stacks: Sequence, idx, signs) -> None:
    """Feed the same batch of updates to every stack."""
    for stack in stacks:
        stack.ingest_many(idx, signs)


@dataclass
class ChainReport:
    gammas: list[float] = field(default_factory=list)
    edge_counts: list[int] = field(default_factory=list)
    certificates: list = field(default_factory=list)

    def lines(self) -> list[str]:
        out = []
        for level, (g, m) in enumerate(zip(self.gammas, self.edge_counts)):
            line = f"level {level}: gamma={g:.6g} edges={m}"
            if level < len(self.certificates) and self.certificates[level] is not None:
                cert = self.certificates[level]
                line += f" certify={'pass' if cert.passed else 'fail'} [{cert.lam_min:.4f}, {cert.lam_max:.4f}]"
            out.append(line)
        return out


def run_chain(stacks: Sequence, gammas: Sequence[float], eps: float,
              base: Callable[[float], object], refine: Callable,
              check: Optional[Callable[[int, object], object]] = None):
    """Generic recursion shared by graph and structured recovery.

    ``base(gamma)`` builds the operator ``gamma I``; ``refine(stack, coarse,
    gamma, c)`` returns an object with ``to_operator(scale)``.  ``check`` is an
    optional per-level hook whose result is stored in the report.
    """
    if len(stacks) != len(gammas):
        raise ValueError(f"expected {len(gammas)} stacks, got {len(stacks)}")
    report = ChainReport()
    shrink = 1.0 / (2.0 * (1.0 + eps))
    c_step = (1.0 - eps) * shrink
    current = None
    for level, (stack, g) in enumerate(zip(stacks, gammas)):
        try:
            if level == 0:
                coarse, c = base(g), 0.5
            else:
                coarse, c = current.to_operator(shrink), c_step
            current = refine(stack, coarse, g, c)
        except (SolverError, ArithmeticError, ValueError) as exc:
            raise RecoveryError(level, exc) from exc
        report.gammas.append(g)
        report.edge_counts.append(int(getattr(current, "num_edges", 0)))
        report.certificates.append(check(level, current) if check else None)
    return current, report


def recover_sparsifier(stacks: Sequence[LevelStack], eps: float,
                       constants: Optional[Constants] = None,
                       solve: SolveConfig = DEFAULT_SOLVE,
                       K_exact: Optional[np.ndarray] = None) -> tuple[Sparsifier, ChainReport]:
    """Run the full chain; with ``K_exact`` every level is certified against ``K + gamma I``."""
    if not stacks:
        raise ValueError("no stacks")
    n = stacks[0].n
    gammas = [s.gamma for s in stacks]
    if gammas[-1] != 0.0:
        raise ValueError("the last stack must have gamma = 0")

    def base(g):
        return CoarseOperator.identity(n, g)

    def step(stack, coarse, g, c):
        return refine_sparsifier(stack, coarse, g, eps, c, constants or stack.constants, solve)

    check = None
    if K_exact is not None:
        def check(level, sparsifier):
            return spectral_certify(K_exact + gammas[level] * np.eye(n), sparsifier.laplacian(), eps)

    return run_chain(stacks, gammas, eps, base, step, check)


# ---------------------------------------------------------------- dense checks


def _relative_eigs(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    """Eigenvalues of ``A^{-1/2} B A^{-1/2}`` for positive definite ``A``."""
    w, V = np.linalg.eigh(A)
    R = V / np.sqrt(w)
    return np.linalg.eigvalsh(R.T @ B @ R)


@dataclass
class ChainRelationReport:
    range_relation: bool
    consecutive: bool
    base: bool
    lambda_min: float
    lambda_bound: float
    worst: dict

    @property
    def all_pass(self) -> bool:
        return (self.range_relation and self.consecutive and self.base
                and (math.isnan(self.lambda_min) or self.lambda_min > self.lambda_bound))


def verify_chain_relations(K: np.ndarray, schedule: ChainSchedule,
                           tol: float = 1e-9) -> ChainRelationReport:
    """Dense check of the three chain relations.

    1. ``K <=_r K(d) <=_r 2K`` on range(K);
    2. ``K(l) <= K(l-1) <= 2 K(l)`` for ``l = 1..d``;
    3. ``K(0) <= 2 gamma(0) I <= 2 K(0)``.
    Also reports the smallest nonzero eigenvalue of ``K`` against ``lambda_l``.
    """
    n = K.shape[0]
    I = np.eye(n)
    w, V = np.linalg.eigh(K)
    top = max(w.max(), 0.0)
    nz = w > 1e-9 * max(top, 1e-300)
    worst = {}
    if nz.any():
        Vr = V[:, nz] / np.sqrt(w[nz])
        rel = np.linalg.eigvalsh(Vr.T @ (K + schedule.gamma(schedule.d) * I) @ Vr)
        ok1 = rel.min() >= 1 - tol and rel.max() <= 2 + tol
        worst["range"] = (float(rel.min()), float(rel.max()))
        lam_min = float(w[nz].min())
    else:
        ok1, lam_min = True, float("nan")
    ok2 = True
    for level in range(1, schedule.d + 1):
        rel = _relative_eigs(K + schedule.gamma(level) * I, K + schedule.gamma(level - 1) * I)
        lo, hi = float(rel.min()), float(rel.max())
        worst.setdefault("consecutive", (lo, hi))
        worst["consecutive"] = (min(lo, worst["consecutive"][0]), max(hi, worst["consecutive"][1]))
        ok2 &= lo >= 1 - tol and hi <= 2 + tol
    g0 = schedule.gamma(0)
    rel = _relative_eigs(K + g0 * I, 2 * g0 * I)
    ok3 = rel.min() >= 1 - tol and rel.max() <= 2 + tol
    worst["base"] = (float(rel.min()), float(rel.max()))
    return ChainRelationReport(bool(ok1), bool(ok2), bool(ok3), lam_min, schedule.lambda_l, worst)
