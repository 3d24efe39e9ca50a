"""Time the compiled kernels against the numpy fallback.

    python3 benchmarks/bench_kernels.py [--repeat 5]

Each case is checked for identical output before it is timed.
"""
from __future__ import annotations

import argparse
import timeit

import numpy as np

from fairgdiff import _kernels_py, kernels
from fairgdiff.graph import SbmSpec, gen_homophily_sbm


def nearest_case(p: int, q: int, d: int, seed: int = 0):
    rng = np.random.default_rng(seed)
    return rng.standard_normal((p, d)), rng.standard_normal((q, d))


def triangle_case(n_per_group: int, seed: int = 0):
    g = gen_homophily_sbm(SbmSpec(n_per_group=n_per_group, p_intra=0.1, p_inter=0.02, seed=seed))
    rows, cols = np.nonzero(g.adjacency)
    indptr = np.concatenate([[0], np.cumsum(np.bincount(rows, minlength=g.n))]).astype(np.intp)
    return indptr, cols.astype(np.intp)


def best_of(fn, repeat: int) -> float:
    return min(timeit.repeat(fn, number=1, repeat=repeat))


def run(repeat: int) -> list[tuple[str, float, float]]:
    if "cython" not in kernels.available_backends():
        raise SystemExit("compiled kernels are not built; run `pip install -e . --no-build-isolation`")
    from fairgdiff import _kernels as compiled

    cases = []
    for p, q, d in [(500, 500, 8), (2000, 2000, 8), (4000, 4000, 16)]:
        a, b = nearest_case(p, q, d)
        ref, got = _kernels_py.nearest_rows(a, b), compiled.nearest_rows(a, b)
        assert np.array_equal(ref[0], got[0]) and ref[1].tobytes() == got[1].tobytes()
        cases.append((f"nearest_rows {p}x{q} d={d}",
                      best_of(lambda: _kernels_py.nearest_rows(a, b), repeat),
                      best_of(lambda: compiled.nearest_rows(a, b), repeat)))
    for m in (100, 400, 1000):
        indptr, indices = triangle_case(m)
        assert np.array_equal(_kernels_py.triangles_per_node(indptr, indices),
                              compiled.triangles_per_node(indptr, indices))
        cases.append((f"triangles_per_node n={2 * m}",
                      best_of(lambda: _kernels_py.triangles_per_node(indptr, indices), repeat),
                      best_of(lambda: compiled.triangles_per_node(indptr, indices), repeat)))
    return cases


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    print(f"{'case':<34}{'python [ms]':>12}{'cython [ms]':>12}{'speedup':>9}")
    for name, py, cy in run(args.repeat):
        print(f"{name:<34}{py * 1e3:>12.2f}{cy * 1e3:>12.2f}{py / cy:>8.1f}x")


if __name__ == "__main__":
    main()
