"""Sweep the oversampling constant c2 on the end-to-end pipeline.

For each c2, runs the full sketch and chain recovery on G(100, 0.1) and the
10x10 grid for ten seeds at eps = 0.5, and reports certification passes and
edge counts.  Usage: python scripts/calibrate_c2.py [c2 ...]
"""

import sys
import time

import numpy as np

from dynspar.chain import build_schedule, ingest_all, make_stacks, recover_sparsifier
from dynspar.config import Constants
from dynspar.graph_core import exact_laplacian, grid_graph, random_graph, spectral_certify

EPS = 0.5


def run(c2: float, seeds=range(10)) -> None:
    constants = Constants(c2=c2)
    for name in ("er", "grid"):
        passes, counts, t0 = 0, [], time.time()
        for seed in seeds:
            if name == "er":
                n, edges = 100, random_graph(100, 0.1, np.random.default_rng(seed))
            else:
                n, edges = grid_graph(10, 10)
            stacks = make_stacks(n, EPS, seed, build_schedule(n), constants)
            ingest_all(stacks, edges, np.ones(edges.size))
            H, _ = recover_sparsifier(stacks, EPS, constants)
            cert = spectral_certify(exact_laplacian(edges, n), H.laplacian(), EPS)
            passes += cert.passed
            counts.append(H.num_edges)
        print(f"c2={c2:<6} {name:5} pass={passes}/{len(seeds)} "
              f"edges={np.mean(counts):.1f} (max {max(counts)}) {time.time() - t0:.0f}s", flush=True)


if __name__ == "__main__":
    for value in (sys.argv[1:] or ["0.05", "0.1", "0.2", "0.3", "0.5", "1", "2", "4"]):
        run(float(value))
