"""Command line: ``sketch`` a stream, ``recover`` a sparsifier, ``verify`` it.

Exit codes: 0 pass, 1 certification failure, 2 input error, 3 capacity or
solver error.
"""

from __future__ import annotations

import argparse
import resource
import sys
import time
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .bundle import Bundle
from .config import Constants, MODES, RunConfig, SolveConfig
from .errors import (CapacityError, FormatError, InvalidEdgeError, RecoveryError,
                     SketchMismatchError, SolverError, StreamError, StreamParseError)
from .graph_core import EdgeMultiplicitySet, parse_stream, spectral_certify, updates_to_arrays
from .refine import Sparsifier
from .structured import Dictionary, RowSparsifier, parse_row_stream

EXIT_PASS, EXIT_FAIL, EXIT_INPUT, EXIT_RESOURCE = 0, 1, 2, 3
DENSE_CAP = 500


def _log(msg: str) -> None:
    print(msg, file=sys.stderr, flush=True)


def _peak_mb() -> float:
    return resource.getrusage(resource.RUSAGE_SELF).ru_maxrss / 1024.0


def _load_dictionary(path: Optional[str]) -> Optional[Dictionary]:
    return None if path is None else Dictionary.from_text(Path(path).read_text())


def _read_tokens(path: str, mode: str, n: int, dictionary: Optional[Dictionary]):
    """``(ids, signs, weights)`` of a stream file."""
    with open(path) as fh:
        if mode == "structured":
            ids, signs = parse_row_stream(fh, dictionary.m)
            return ids, signs, None
        updates = list(parse_stream(fh, weighted=mode == "weighted", n=n))
    return updates_to_arrays(updates, n)


# ---------------------------------------------------------------- sketch


def cmd_sketch(args) -> int:
    mode = "weighted" if args.weighted else args.mode
    dictionary = _load_dictionary(args.dict)
    if mode == "structured" and dictionary is None:
        raise ValueError("structured mode needs --dict")
    defaults = Constants()
    constants = Constants(
        c1=args.c1 if args.c1 is not None else defaults.c1,
        c2=args.c2 if args.c2 is not None else defaults.c2,
        c_w=args.cw if args.cw is not None else defaults.c_w,
        c_d=args.cd if args.cd is not None else defaults.c_d,
    )
    config = RunConfig(n=args.n, epsilon=args.epsilon, seed=args.seed, mode=mode,
                       gamma_levels=args.gamma_levels, wmax=args.wmax, kappa_u=args.kappa_u,
                       lambda_u=args.lambda_u, constants=constants,
                       solve=SolveConfig(rel_tol=args.rel_tol))
    start = time.perf_counter()
    ids, signs, weights = _read_tokens(args.stream, mode, args.n, dictionary)
    bundle = Bundle.new(config, dictionary)
    bundle.ingest(ids, signs, weights)
    blob = bundle.to_bytes()
    Path(args.out).write_bytes(blob)
    elapsed = time.perf_counter() - start
    rate = ids.size / elapsed if elapsed > 0 else float("inf")
    _log(f"sketched {ids.size} tokens into {len(bundle.stacks)} stacks in {elapsed:.2f}s "
         f"({rate:.0f} tokens/s)")
    _log(f"sketch memory {bundle.nbytes / 2**20:.1f} MiB (dense formula "
         f"{bundle.formula_bytes() / 2**20:.1f} MiB), peak RSS {_peak_mb():.1f} MiB, "
         f"bundle {len(blob)} bytes")
    return EXIT_PASS


# ---------------------------------------------------------------- recover


def cmd_recover(args) -> int:
    dictionary = _load_dictionary(args.dict)
    bundle = Bundle.from_bytes(Path(args.bundle).read_bytes(), dictionary)
    start = time.perf_counter()
    H, reports = bundle.recover()
    for k, rep in enumerate(reports):
        for line in rep.lines():
            _log(f"chain {k} {line}" if len(reports) > 1 else line)
    Path(args.out).write_text(H.to_text())
    _log(f"recovered {H.num_edges} rows in {time.perf_counter() - start:.2f}s")
    return EXIT_PASS


# ---------------------------------------------------------------- verify


def _monte_carlo(K: np.ndarray, K_tilde: np.ndarray, eps: float, samples: int, seed: int) -> int:
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((K.shape[0], samples))
    X -= X.mean(axis=0) if np.allclose(K.sum(axis=1), 0) else 0.0
    num = np.einsum("ij,ij->j", X, K_tilde @ X)
    den = np.einsum("ij,ij->j", X, K @ X)
    ratios = num[den > 0] / den[den > 0]
    lo, hi = float(ratios.min(initial=1.0)), float(ratios.max(initial=1.0))
    ok = lo >= 1 - eps and hi <= 1 + eps
    print(f"NON-CERTIFYING Monte-Carlo check over {samples} random vectors: "
          f"ratio range [{lo:.6f}, {hi:.6f}] -> {'within' if ok else 'outside'} 1+-{eps}")
    return EXIT_PASS if ok else EXIT_FAIL


def cmd_verify(args) -> int:
    mode = "weighted" if args.weighted else args.mode
    text = Path(args.sparsifier).read_text()
    if mode == "structured":
        dictionary = _load_dictionary(args.dict)
        if dictionary is None:
            raise ValueError("structured mode needs --dict")
        H = RowSparsifier.from_text(text, dictionary)
        ids, signs = parse_row_stream(Path(args.stream).read_text(), dictionary.m)
        mult = np.zeros(dictionary.m)
        np.add.at(mult, ids, signs)
        if mult.min(initial=0) < 0:
            raise StreamError("row deleted more often than inserted")
        present = np.flatnonzero(mult)
        K = dictionary.gram(present, mult[present])
        K_tilde = H.matrix()
        n, count = dictionary.n, H.num_rows
    else:
        H = Sparsifier.from_text(text)
        n = H.n
        if args.n is not None and args.n != n:
            raise ValueError(f"--n {args.n} disagrees with sparsifier header n={n}")
        truth = EdgeMultiplicitySet(n, weighted=mode == "weighted")
        with open(args.stream) as fh:
            truth.apply_all(parse_stream(fh, weighted=mode == "weighted", n=n))
        K = truth.laplacian()
        K_tilde = H.laplacian()
        count = H.num_edges
    if n > args.dense_cap:
        if args.samples:
            return _monte_carlo(K, K_tilde, args.epsilon, args.samples, args.seed)
        _log(f"n={n} exceeds the dense verification cap {args.dense_cap}; "
             f"pass --samples k for a non-certifying Monte-Carlo check")
        return EXIT_INPUT
    cert = spectral_certify(K, K_tilde, args.epsilon)
    status = "PASS" if cert.passed else "FAIL"
    print(f"{status} eps={args.epsilon} rows={count} "
          f"eigenvalue range [{cert.lam_min:.6f}, {cert.lam_max:.6f}]"
          + ("" if cert.passed else f" ({cert.reason})"))
    return EXIT_PASS if cert.passed else EXIT_FAIL


# ---------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dynspar", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    sk = sub.add_parser("sketch", help="single pass over an update stream")
    sk.add_argument("stream")
    sk.add_argument("--n", type=int, required=True)
    sk.add_argument("--epsilon", type=float, required=True)
    sk.add_argument("--seed", type=int, default=0)
    sk.add_argument("--mode", choices=MODES, default="graph")
    sk.add_argument("--weighted", action="store_true", help="shorthand for --mode weighted")
    sk.add_argument("--gamma-levels", type=int, default=None,
                    help="override the chain length d (default from spectrum bounds)")
    sk.add_argument("--wmax", type=int, default=None)
    sk.add_argument("--kappa-u", type=float, default=None)
    sk.add_argument("--lambda-u", type=float, default=None,
                    help="structured mode: top eigenvalue bound (default from the dictionary)")
    sk.add_argument("--dict", default=None)
    sk.add_argument("--c1", type=float, default=None)
    sk.add_argument("--c2", type=float, default=None)
    sk.add_argument("--cw", type=float, default=None)
    sk.add_argument("--cd", type=float, default=None)
    sk.add_argument("--rel-tol", type=float, default=SolveConfig().rel_tol)
    sk.add_argument("--out", required=True)
    sk.set_defaults(func=cmd_sketch)

    rc = sub.add_parser("recover", help="recover a sparsifier from a bundle")
    rc.add_argument("bundle")
    rc.add_argument("--dict", default=None)
    rc.add_argument("--out", required=True)
    rc.set_defaults(func=cmd_recover)

    vf = sub.add_parser("verify", help="certify a sparsifier against the replayed stream")
    vf.add_argument("stream")
    vf.add_argument("sparsifier")
    vf.add_argument("--epsilon", type=float, required=True)
    vf.add_argument("--n", type=int, default=None)
    vf.add_argument("--mode", choices=MODES, default="graph")
    vf.add_argument("--weighted", action="store_true")
    vf.add_argument("--dict", default=None)
    vf.add_argument("--dense-cap", type=int, default=DENSE_CAP)
    vf.add_argument("--samples", type=int, default=0)
    vf.add_argument("--seed", type=int, default=0)
    vf.set_defaults(func=cmd_verify)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (CapacityError, SolverError, RecoveryError, MemoryError) as exc:
        _log(f"error: {exc}")
        return EXIT_RESOURCE
    except (StreamParseError, StreamError, FormatError, SketchMismatchError, InvalidEdgeError,
            OSError, ValueError) as exc:
        _log(f"error: {exc}")
        return EXIT_INPUT


def main_exit() -> None:
    sys.exit(main())


if __name__ == "__main__":
    main_exit()
