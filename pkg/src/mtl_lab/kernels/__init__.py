"""Patch-kernel backend selection.

The compiled Cython extension is preferred; the numpy fallback is selected
when the extension is unavailable or when ``MTL_LAB_PURE_PYTHON=1`` is set.
Both backends are bitwise identical, so the choice never affects results,
only speed. ``benchmarks/bench_kernels.py`` compares the two.
"""

from __future__ import annotations

import os

from . import fallback

if os.environ.get("MTL_LAB_PURE_PYTHON", "0") == "1":
    _impl = fallback
else:
    try:
        from . import _ext as _impl  # type: ignore[no-redef]
    except ImportError:
        _impl = fallback

BACKEND: str = _impl.BACKEND
im2col = _impl.im2col
col2im = _impl.col2im

__all__ = ["BACKEND", "im2col", "col2im", "fallback"]
