import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.sparse import csr_matrix

from fairgdiff import _kernels_py, kernels

import oracles

compiled = pytest.importorskip("fairgdiff._kernels")


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 100_000), st.integers(0, 40), st.integers(0, 40), st.integers(1, 5), st.booleans())
def test_nearest_rows_backends_identical(seed, p, q, d, coarse):
    rng = np.random.default_rng(seed)
    a = rng.standard_normal((p, d))
    b = rng.standard_normal((q, d))
    if coarse:  # many exact ties
        a, b = np.round(a), np.round(b)
    i1, d1 = compiled.nearest_rows(a, b)
    i2, d2 = _kernels_py.nearest_rows(a, b)
    assert np.array_equal(i1, i2)
    assert d1.tobytes() == d2.tobytes()


def test_nearest_rows_tie_goes_to_first_candidate():
    q = np.zeros((1, 2))
    c = np.array([[1.0, 0.0], [0.0, 1.0], [-1.0, 0.0]])
    for mod in (compiled, _kernels_py):
        idx, dist = mod.nearest_rows(q, c)
        assert idx.tolist() == [0] and dist.tolist() == [1.0]


def test_nearest_rows_empty_candidates():
    for mod in (compiled, _kernels_py):
        idx, dist = mod.nearest_rows(np.zeros((3, 2)), np.zeros((0, 2)))
        assert idx.tolist() == [-1] * 3 and np.isinf(dist).all()


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 100_000), st.integers(2, 25), st.floats(0.05, 0.9))
def test_triangles_backends_match_oracle(seed, n, p):
    g = oracles.random_graph(np.random.default_rng(seed), n, p)
    csr = csr_matrix(g.adjacency)
    csr.sort_indices()
    ip, ix = csr.indptr.astype(np.intp), csr.indices.astype(np.intp)
    t1 = compiled.triangles_per_node(ip, ix)
    t2 = _kernels_py.triangles_per_node(ip, ix)
    assert np.array_equal(t1, t2)
    assert int(t1.sum()) // 3 == oracles.stats(g.adjacency)["triangle_count"]


def test_backend_switching():
    assert kernels.available_backends() == ["cython", "python"]
    start = kernels.backend()
    try:
        kernels.set_backend("python")
        assert kernels.backend() == "python"
        kernels.set_backend("cython")
        assert kernels.backend() == "cython"
        with pytest.raises(ValueError):
            kernels.set_backend("fortran")
    finally:
        kernels.set_backend(start)
