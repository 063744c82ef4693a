"""Kernel backend selection.

At import time the compiled extension (``_kernels_cy``) is preferred; the
NumPy fallback (``_kernels_py``) is used when the extension is missing.
``TRIPLET_TAGGER_BACKEND=python|cython`` forces the choice. Call sites go
through the module attribute ``kernels`` so tests and the benchmark can
swap backends with :func:`use_backend`.
"""

import os

from . import _kernels_py

_FORCE = os.environ.get("TRIPLET_TAGGER_BACKEND", "").strip().lower()

try:
    from . import _kernels_cy
except ImportError:
    _kernels_cy = None

if _FORCE == "python":
    kernels = _kernels_py
elif _FORCE == "cython":
    if _kernels_cy is None:
        raise ImportError(
            "TRIPLET_TAGGER_BACKEND=cython but the compiled extension is not "
            "built; run `pip install -e .` or unset the variable"
        )
    kernels = _kernels_cy
else:
    kernels = _kernels_cy if _kernels_cy is not None else _kernels_py


def active_backend():
    """Name of the backend currently in use: 'cython' or 'python'."""
    return kernels.NAME


def available_backends():
    names = ["python"]
    if _kernels_cy is not None:
        names.append("cython")
    return names


def use_backend(name):
    """Switch kernel backend ('python' or 'cython'). Returns the old name."""
    global kernels
    old = kernels.NAME
    if name == "python":
        kernels = _kernels_py
    elif name == "cython":
        if _kernels_cy is None:
            raise ImportError("compiled kernel extension is not available")
        kernels = _kernels_cy
    else:
        raise ValueError(f"unknown backend {name!r}")
    return old
