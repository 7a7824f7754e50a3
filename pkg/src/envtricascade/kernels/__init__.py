"""Hot forward kernels with a compiled backend and a NumPy fallback.

The compiled extension is picked at import time when it is importable;
set ``ENVTRICASCADE_PURE=1`` to force the NumPy path. ``BACKEND`` names
the active one.
"""

import os

import numpy as np

from . import _fallback

_impl = _fallback
if os.environ.get("ENVTRICASCADE_PURE", "") not in ("1", "true", "yes"):
    try:
        from . import _core as _impl
    except ImportError:  # extension not built
        pass

BACKEND = "numpy" if _impl is _fallback else "compiled"


def layer_fuse(X, w):
    X = np.ascontiguousarray(X, dtype=np.float64)
    w = np.ascontiguousarray(w, dtype=np.float64)
    return _impl.layer_fuse(X, w)


def attentive_stats(seq, w, b):
    seq = np.ascontiguousarray(seq, dtype=np.float64)
    w = np.ascontiguousarray(w, dtype=np.float64)
    return _impl.attentive_stats(seq, w, float(b))


__all__ = ["BACKEND", "layer_fuse", "attentive_stats"]
