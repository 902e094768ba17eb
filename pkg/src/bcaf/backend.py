"""Kernel backend selection.

Prefers the compiled Cython core (``bcaf._kernels``) and falls back to
the numpy implementations when the extension is absent or when
``BCAF_PUREPY`` is set in the environment. Matrix products always go
through numpy's BLAS and are not part of the switch.
"""

from __future__ import annotations

import os

from bcaf import _kernels_py

if os.environ.get("BCAF_PUREPY"):
    kernels = _kernels_py
else:
    try:
        from bcaf import _kernels as kernels  # type: ignore[no-redef]
    except ImportError:
        kernels = _kernels_py

COMPILED = bool(getattr(kernels, "IS_COMPILED", False))


def backend_name() -> str:
    return "compiled" if COMPILED else "numpy"
