"""Single-pass spectral sparsification of dynamic graph and matrix streams.

Edge (or dictionary row) insertions and deletions are folded into linear
sketches; a recursive chain of coarse sparsifiers then recovers a reweighted
row subset whose quadratic form is within ``1 +- eps`` of the final input.
"""

from .bundle import Bundle
from .chain import (ChainReport, ChainSchedule, build_schedule, make_stacks, recover_sparsifier,
                    schedule_from_bounds, verify_chain_relations)
from .config import Constants, RunConfig, SolveConfig
from .errors import (CapacityError, DimensionError, FormatError, InvalidEdgeError, RecoveryError,
                     SketchMismatchError, SolverError, SparsifyError, StreamError, StreamParseError)
from .graph_core import (EdgeMultiplicitySet, EdgeUpdate, Op, edge_index, edge_pair,
                         exact_laplacian, incidence_row, parse_stream, spectral_certify)
from .hh_sketch import HHParams, HHSketch
from .refine import Sparsifier, refine_sparsifier
from .sampling_levels import LevelStack
from .sdd_solve import CoarseOperator, approx_leverage, approx_leverages, solve_pinv
from .structured import (Dictionary, MatrixLevelStack, RowSparsifier, recover_matrix_sparsifier)
from .weighted import WeightedConfig, WeightedSketch, recombine

__version__ = "0.1.0"

__all__ = [
    "Bundle", "ChainReport", "ChainSchedule", "build_schedule", "make_stacks", "recover_sparsifier",
    "schedule_from_bounds", "verify_chain_relations", "Constants", "RunConfig", "SolveConfig",
    "CapacityError", "DimensionError", "FormatError", "InvalidEdgeError", "RecoveryError",
    "SketchMismatchError", "SolverError", "SparsifyError", "StreamError", "StreamParseError",
    "EdgeMultiplicitySet", "EdgeUpdate", "Op", "edge_index", "edge_pair", "exact_laplacian",
    "incidence_row", "parse_stream", "spectral_certify", "HHParams", "HHSketch", "Sparsifier",
    "refine_sparsifier", "LevelStack", "CoarseOperator", "approx_leverage", "approx_leverages",
    "solve_pinv", "Dictionary", "MatrixLevelStack", "RowSparsifier", "recover_matrix_sparsifier",
    "WeightedConfig", "WeightedSketch", "recombine",
]
