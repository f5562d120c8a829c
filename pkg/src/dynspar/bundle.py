"""Container tying a run configuration to its serialized stacks.

Layout (little-endian): magic ``DSBN``, u16 version, u32 JSON length, the
JSON header (run configuration, mode, chain layout, dictionary digest),
u32 stack count, then each stack as u64 length plus blob.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from typing import Optional, Union

import numpy as np

from .chain import ChainReport, build_schedule, make_stacks, recover_sparsifier
from .config import RunConfig
from .errors import FormatError, SketchMismatchError
from .refine import Sparsifier
from .sampling_levels import LevelStack
from .structured import (Dictionary, MatrixLevelStack, RowSparsifier, make_matrix_stacks,
                         recover_matrix_sparsifier, structured_schedule)
from .weighted import WeightedConfig, WeightedSketch, recover_weighted, route_arrays

_MAGIC = b"DSBN"
_VERSION = 1


@dataclass
class Bundle:
    config: RunConfig
    chains: list[list]
    dictionary: Optional[Dictionary] = None

    @classmethod
    def new(cls, config: RunConfig, dictionary: Optional[Dictionary] = None) -> "Bundle":
        c = config
        if c.mode == "graph":
            schedule = build_schedule(c.n, c.gamma_levels)
            chains = [make_stacks(c.n, c.epsilon, c.seed, schedule, c.constants)]
        elif c.mode == "weighted":
            chains = WeightedSketch(c.n, c.epsilon, c.seed, WeightedConfig(c.wmax),
                                    c.constants, c.gamma_levels).chains
        else:
            if dictionary is None:
                raise ValueError("structured mode needs a dictionary")
            if dictionary.n != c.n:
                raise SketchMismatchError(f"dictionary has n={dictionary.n}, config says {c.n}")
            schedule = structured_schedule(dictionary, c.kappa_u, c.lambda_u, c.gamma_levels)
            chains = [make_matrix_stacks(dictionary, c.epsilon, c.kappa_u, c.seed, schedule,
                                         c.constants)]
        return cls(config, chains, dictionary)

    @property
    def stacks(self) -> list:
        return [s for chain in self.chains for s in chain]

    # ------------------------------------------------------------ ingestion

    def ingest(self, ids, signs, weights=None) -> None:
        """Apply a batch of tokens (edge ids or dictionary row ids) to every stack."""
        ids = np.asarray(ids, dtype=np.int64)
        signs = np.asarray(signs, dtype=np.float64)
        if self.config.mode == "weighted":
            if weights is None:
                weights = np.ones(ids.size, dtype=np.int64)
            routed = route_arrays(ids, signs, weights, WeightedConfig(self.config.wmax))
        else:
            routed = [(ids, signs)]
        for chain, (sub_ids, sub_signs) in zip(self.chains, routed):
            for stack in chain:
                stack.ingest_many(sub_ids, sub_signs)

    # ------------------------------------------------------------ recovery

    def recover(self, K_exact: Optional[np.ndarray] = None
                ) -> tuple[Union[Sparsifier, RowSparsifier], list[ChainReport]]:
        c = self.config
        if c.mode == "graph":
            H, rep = recover_sparsifier(self.chains[0], c.epsilon, c.constants, c.solve, K_exact)
            return H, [rep]
        if c.mode == "weighted":
            return recover_weighted(self.chains, c.epsilon, c.constants, c.solve)
        H, rep = recover_matrix_sparsifier(self.chains[0], c.epsilon, c.constants, c.solve, K_exact)
        return H, [rep]

    # ------------------------------------------------------------ accounting

    @property
    def nbytes(self) -> int:
        return sum(s.nbytes for s in self.stacks)

    def formula_bytes(self) -> int:
        return sum(s.formula_bytes() for s in self.stacks)

    # ------------------------------------------------------------ serialization

    def header(self) -> dict:
        return {
            "config": self.config.to_dict(),
            "chains": len(self.chains),
            "chain_length": len(self.chains[0]) if self.chains else 0,
            "dictionary": None if self.dictionary is None else format(self.dictionary.digest(), "016x"),
        }

    def to_bytes(self) -> bytes:
        head = json.dumps(self.header(), sort_keys=True, separators=(",", ":")).encode("utf-8")
        parts = [_MAGIC, struct.pack("<HI", _VERSION, len(head)), head,
                 struct.pack("<I", len(self.stacks))]
        for stack in self.stacks:
            blob = stack.to_bytes()
            parts.append(struct.pack("<Q", len(blob)))
            parts.append(blob)
        return b"".join(parts)

    @classmethod
    def from_bytes(cls, data: bytes, dictionary: Optional[Dictionary] = None) -> "Bundle":
        if data[:4] != _MAGIC:
            raise FormatError("not a sketch bundle")
        try:
            version, hlen = struct.unpack_from("<HI", data, 4)
            if version != _VERSION:
                raise FormatError(f"unsupported bundle version {version}")
            pos = 10
            head = json.loads(data[pos:pos + hlen].decode("utf-8"))
            pos += hlen
            (count,) = struct.unpack_from("<I", data, pos)
            pos += 4
            config = RunConfig.from_dict(head["config"])
        except (struct.error, ValueError, KeyError, TypeError) as exc:
            raise FormatError(f"corrupt bundle header: {exc}") from None
        if config.mode == "structured":
            if dictionary is None:
                raise FormatError("structured bundle needs its dictionary")
            if format(dictionary.digest(), "016x") != head["dictionary"]:
                raise SketchMismatchError("dictionary does not match the one used for sketching")
        stacks = []
        for _ in range(count):
            (length,) = struct.unpack_from("<Q", data, pos)
            pos += 8
            if config.mode == "structured":
                stack, end = MatrixLevelStack.from_bytes(data, dictionary, config.constants, pos)
            else:
                stack, end = LevelStack.from_bytes(data, config.constants, pos)
            if end != pos + length:
                raise FormatError("stack length mismatch")
            stacks.append(stack)
            pos = end
        if pos != len(data):
            raise FormatError("trailing bytes after last stack")
        k, L = head["chains"], head["chain_length"]
        if k * L != count:
            raise FormatError("chain layout does not match stack count")
        expected = cls.new(config, dictionary)
        for built, ref in zip(stacks, expected.stacks):
            if built.seed != ref.seed or built.gamma != ref.gamma:
                raise SketchMismatchError("stack seeds or gammas differ from the configuration")
        return cls(config, [stacks[i * L:(i + 1) * L] for i in range(k)], dictionary)

    def merge(self, other: "Bundle") -> "Bundle":
        if self.config != other.config:
            raise SketchMismatchError("bundles were built with different configurations")
        chains = [[a.merge(b) for a, b in zip(ca, cb)] for ca, cb in zip(self.chains, other.chains)]
        return Bundle(self.config, chains, self.dictionary)
