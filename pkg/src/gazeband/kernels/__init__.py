"""Hot loops of the convolutional embedder.

The compiled Cython module is used when it imports; otherwise the numpy
versions are used.  Setting ``GAZEBAND_PURE_PYTHON=1`` forces the fallback.
"""

import os

from . import _numpy

BACKEND = "numpy"
_impl = _numpy

if os.environ.get("GAZEBAND_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _conv as _compiled
    except ImportError:  # extension not built
        _compiled = None
    if _compiled is not None:
        _impl = _compiled
        BACKEND = "cython"
else:
    _compiled = None

dense_layer_forward = _impl.dense_layer_forward
dense_layer_backward = _impl.dense_layer_backward


def backends():
    """Map of available backend name -> module."""
    out = {"numpy": _numpy}
    if _compiled is not None:
        out["cython"] = _compiled
    return out
