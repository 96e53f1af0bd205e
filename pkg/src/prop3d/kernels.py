"""Backend selection for the hot loops.

The compiled extension is used when importable; set ``PROP3D_PURE_PYTHON=1`` to
force the numpy fallback.
"""
import os

from . import _kernels_py

BACKEND = "python"
_impl = _kernels_py

if os.environ.get("PROP3D_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _kernels as _compiled
    except ImportError:  # extension not built
        pass
    else:
        _impl = _compiled
        BACKEND = "cython"

box_sums = _impl.box_sums
potentials = _impl.potentials
carve = _impl.carve
nms_rects = _impl.nms_rects


def get_backend(name: str):
    """Return the kernel module for ``"python"`` or ``"cython"`` (raises if not built)."""
    if name == "python":
        return _kernels_py
    if name == "cython":
        from . import _kernels
        return _kernels
    raise ValueError(f"unknown kernel backend {name!r}")
