"""Kernel backend selection.

The compiled extension is used when importable; set ``FW_POMDP_PURE=1`` to
force the pure-Python kernels.
"""
import os

from . import _kernels_py

if os.environ.get("FW_POMDP_PURE", "") not in ("", "0"):
    kernels = _kernels_py
    BACKEND = "python"
else:
    try:
        from . import _kernels as kernels  # type: ignore[attr-defined]
        BACKEND = "cython"
    except ImportError:
        kernels = _kernels_py
        BACKEND = "python"

bl_distance = kernels.bl_distance
bl_distances = kernels.bl_distances
