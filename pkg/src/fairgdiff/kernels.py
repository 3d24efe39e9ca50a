"""Backend selection for the hot loops.

The compiled extension is used when it imports; otherwise the numpy
fallback. Both produce identical results, so the choice only affects speed.
"""
from __future__ import annotations

from types import ModuleType

from . import _kernels_py

try:
    from . import _kernels as _compiled
except ImportError:  # extension not built
    _compiled = None

_active: ModuleType = _compiled if _compiled is not None else _kernels_py


def available_backends() -> list[str]:
    return ["cython", "python"] if _compiled is not None else ["python"]


def backend() -> str:
    return "cython" if _active is _compiled else "python"


def set_backend(name: str) -> None:
    global _active
    if name == "python":
        _active = _kernels_py
    elif name == "cython":
        if _compiled is None:
            raise RuntimeError("compiled kernels are not built")
        _active = _compiled
    else:
        raise ValueError(f"unknown backend {name!r}")


def nearest_rows(queries, candidates):
    return _active.nearest_rows(queries, candidates)


def triangles_per_node(indptr, indices):
    return _active.triangles_per_node(indptr, indices)
