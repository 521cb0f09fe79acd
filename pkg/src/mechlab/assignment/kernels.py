"""Kernel selection: compiled extension when importable, else pure Python.

Set ``MECHLAB_PURE_PYTHON=1`` to force the fallback.
"""
from __future__ import annotations

import os

from . import _pykernel

_compiled = None
if not os.environ.get("MECHLAB_PURE_PYTHON"):
    try:
        from . import _ckernel as _compiled  # type: ignore[no-redef]
    except ImportError:  # extension not built
        _compiled = None

BACKEND = "cython" if _compiled is not None else "python"


def available_backends() -> list[str]:
    return ["cython", "python"] if _compiled is not None else ["python"]


def get_kernel(name: str | None = None):
    """Return the ``best_matching`` function of the named backend."""
    name = name or BACKEND
    if name == "python":
        return _pykernel.best_matching
    if name == "cython":
        if _compiled is None:
            raise RuntimeError("compiled kernel is not available")
        return _compiled.best_matching
    raise ValueError(f"unknown backend {name!r}")
