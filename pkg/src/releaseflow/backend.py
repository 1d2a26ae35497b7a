"""Kernel backend selection.

The hot per-epoch work (batched MLP forward passes, tangent propagation
and reverse sweeps) lives in a compiled Cython extension when one was
built, with a NumPy implementation as fallback.  Selection happens once
at import; ``RELEASEFLOW_BACKEND=cython|python`` forces a choice, and
:func:`use` switches at runtime for parity tests and benchmarks.
"""

import os

from . import _slowcore

_forced = os.environ.get("RELEASEFLOW_BACKEND")

try:
    from . import _fastcore
except ImportError:
    _fastcore = None

if _forced == "python":
    _active, _name = _slowcore, "python"
elif _forced == "cython":
    if _fastcore is None:
        raise RuntimeError("RELEASEFLOW_BACKEND=cython but the compiled extension is not available")
    _active, _name = _fastcore, "cython"
elif _fastcore is not None:
    _active, _name = _fastcore, "cython"
else:
    _active, _name = _slowcore, "python"


def kernels():
    """Return the active kernel module."""
    return _active


def name():
    return _name


def available():
    out = ["python"]
    if _fastcore is not None:
        out.append("cython")
    return out


def use(which):
    """Switch the active backend ('python' or 'cython')."""
    global _active, _name
    if which == "python":
        _active, _name = _slowcore, "python"
    elif which == "cython":
        if _fastcore is None:
            raise RuntimeError("compiled extension not available")
        _active, _name = _fastcore, "cython"
    else:
        raise ValueError(f"unknown backend {which!r}")
