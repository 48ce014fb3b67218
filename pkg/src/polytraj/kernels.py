"""Kernel backend selection.

The compiled ``_ckernels`` extension is preferred; the numpy reference in
``_pykernels`` is used when the extension is missing or when the environment
variable ``POLYTRAJ_PURE_PYTHON`` is set to a non-empty value other than "0".
"""

import os

from . import _pykernels

_force_python = os.environ.get("POLYTRAJ_PURE_PYTHON", "") not in ("", "0")

try:
    if _force_python:
        raise ImportError("pure-python backend forced")
    from . import _ckernels as _backend

    BACKEND = "cython"
except ImportError:
    _backend = _pykernels
    BACKEND = "python"

mixture_nll = _backend.mixture_nll
lidar_grid = _backend.lidar_grid


def get_backend(name: str):
    """Return the kernel module named ``"cython"`` or ``"python"``."""
    if name == "python":
        return _pykernels
    if name == "cython":
        from . import _ckernels

        return _ckernels
    raise ValueError(f"unknown kernel backend {name!r}")
