"""Backend selection for the scheduling and chunk-scoring kernels.

The compiled extension is used when it was built; setting
``MOEPLAN_PURE_PYTHON=1`` forces the pure-Python fallback.
"""
import os

from . import _kernels_py

BACKEND = "python"
_impl = _kernels_py

if not os.environ.get("MOEPLAN_PURE_PYTHON"):
    try:
        from . import _kernels as _compiled
    except ImportError:
        pass
    else:
        _impl = _compiled
        BACKEND = "cython"

list_schedule = _impl.list_schedule
score_chunks = _impl.score_chunks

__all__ = ["BACKEND", "list_schedule", "score_chunks"]
