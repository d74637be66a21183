"""Kernel selection: the compiled core when importable, else the numpy fallback.

Set ``MMSTRAT_PURE_PYTHON=1`` to force the fallback.
"""

from __future__ import annotations

import os

from . import _kernels_py

BACKEND = "python"
_impl = _kernels_py
if os.environ.get("MMSTRAT_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _kernels as _compiled  # type: ignore[attr-defined]

        _impl = _compiled
        BACKEND = "cython"
    except ImportError:
        pass


def get(name, backend: str | None = None):
    """Return kernel ``name`` from the selected (or an explicitly named) backend."""
    if backend is None:
        return getattr(_impl, name)
    if backend == "python":
        return getattr(_kernels_py, name)
    if backend == "cython":
        from . import _kernels  # type: ignore[attr-defined]

        return getattr(_kernels, name)
    raise ValueError(f"unknown backend '{backend}'")


def available_backends():
    out = ["python"]
    try:
        from . import _kernels  # noqa: F401  # type: ignore[attr-defined]

        out.append("cython")
    except ImportError:
        pass
    return out
