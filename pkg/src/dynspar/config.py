"""Tunable constants and run configuration."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from typing import Any, Optional


@dataclass(frozen=True)
class Constants:
    """Constants hidden inside the O(.) bounds of the algorithm.

    Attributes:
        c1: heavy-hitter precision for graph mode, eta = eps / (c1 * sqrt(log2 n)).
        c2: leverage-score oversampling constant, p_e = c2 * tau * log2(n) / eps^2.
        c3: concentration constant, used only by diagnostics.
        c_w: bucket constant, w = ceil(c_w / eta^2).
        c_d: row constant, d = ceil(c_d * log2 N).
        level_margin: extra subsampling levels beyond ceil(log2 C(n,2)).
        struct_c1: C = struct_c1 * eps^-3 * log2(m) * log2(n) in structured mode.
        c_t: repetitions per rate in structured mode, T = ceil(c_t * log2 m).
        memory_cap: largest dense table (bytes) a single sketch may describe.
        dense_limit: largest dense table (bytes) that is ever materialized.
    """

    c1: float = 1.0
    c2: float = 4.0
    c3: float = 16.0
    c_w: float = 32.0
    c_d: float = 8.0
    level_margin: int = 10
    struct_c1: float = 4.0
    c_t: float = 1.0
    memory_cap: int = 64 << 30
    dense_limit: int = 64 << 20

    def replace(self, **changes: Any) -> "Constants":
        return dataclasses.replace(self, **changes)


DEFAULT_CONSTANTS = Constants()


@dataclass(frozen=True)
class SolveConfig:
    """Conjugate-gradient settings; ``max_iters=None`` means ``10 * n``."""

    rel_tol: float = 1e-8
    max_iters: Optional[int] = None
    block_size: int = 512

    def __post_init__(self):
        if not 0.0 < self.rel_tol < 1.0:
            raise ValueError("rel_tol must lie in (0, 1)")
        if self.block_size < 1:
            raise ValueError("block_size must be positive")

    def iteration_cap(self, n: int) -> int:
        return self.max_iters if self.max_iters is not None else 10 * n


DEFAULT_SOLVE = SolveConfig()


MODES = ("graph", "weighted", "structured")


@dataclass
class RunConfig:
    """Everything needed to reproduce a sketch/recover run.

    Serialized into every bundle and sparsifier header.
    """

    n: int
    epsilon: float
    seed: int = 0
    mode: str = "graph"
    gamma_levels: Optional[int] = None
    wmax: Optional[int] = None
    kappa_u: Optional[float] = None
    lambda_u: Optional[float] = None
    constants: Constants = field(default_factory=Constants)
    solve: SolveConfig = field(default_factory=SolveConfig)

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.n < 2:
            raise ValueError("n must be at least 2")
        if not 0.0 < self.epsilon < 1.0:
            raise ValueError("epsilon must lie in (0, 1)")
        if self.mode == "weighted" and (self.wmax is None or self.wmax < 1):
            raise ValueError("weighted mode needs wmax >= 1")
        if self.mode == "structured" and (self.kappa_u is None or self.kappa_u < 1):
            raise ValueError("structured mode needs kappa_u >= 1")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        data = dict(data)
        data["constants"] = Constants(**data.get("constants", {}))
        data["solve"] = SolveConfig(**data.get("solve", {}))
        return cls(**data)

    @classmethod
    def from_json(cls, text: str) -> "RunConfig":
        return cls.from_dict(json.loads(text))
