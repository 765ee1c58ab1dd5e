"""Kernel backend selection.

The compiled extension is used when importable; otherwise the numpy
reference implementation takes over. Set HETERMPC_BACKEND=python|cython
to force a backend (``cython`` raises if the extension is missing).
"""

import os

from . import reference

_REQUESTED = os.environ.get("HETERMPC_BACKEND", "auto").lower()
if _REQUESTED not in ("auto", "cython", "python"):
    raise RuntimeError(f"HETERMPC_BACKEND must be auto, cython or python, got {_REQUESTED!r}")

if _REQUESTED == "python":
    _impl = reference
else:
    try:
        from . import _core as _impl
    except ImportError:
        if _REQUESTED == "cython":
            raise
        _impl = reference

BACKEND = _impl.BACKEND_NAME

layer_norm_fwd = _impl.layer_norm_fwd
layer_norm_bwd = _impl.layer_norm_bwd
softmax_fwd = _impl.softmax_fwd
softmax_bwd = _impl.softmax_bwd
gelu_fwd = _impl.gelu_fwd
gelu_bwd = _impl.gelu_bwd
adamw_update = _impl.adamw_update


def compiled_backend():
    """Return the compiled kernel module, or None when not built."""
    try:
        from . import _core
    except ImportError:
        return None
    return _core
