"""Hot kernels: compiled (Cython) when available, numpy otherwise.

Set ``NETDECODE_PURE_PYTHON=1`` to force the numpy fallback.
"""
import os

from . import _pykernels as python_backend

OPTIMAL = python_backend.OPTIMAL
UNBOUNDED = python_backend.UNBOUNDED
PIVOT_LIMIT = python_backend.PIVOT_LIMIT

compiled_backend = None
if not os.environ.get("NETDECODE_PURE_PYTHON"):
    try:
        from . import _ckernels as compiled_backend
    except ImportError:  # extension not built
        compiled_backend = None

_active = compiled_backend if compiled_backend is not None else python_backend
BACKEND = "cython" if _active is compiled_backend else "python"

simplex_pivots = _active.simplex_pivots
hard_threshold = _active.hard_threshold
iht = _active.iht
decode_nodal = _active.decode_nodal


def backends():
    """Available backends by name, compiled first."""
    out = {}
    if compiled_backend is not None:
        out["cython"] = compiled_backend
    out["python"] = python_backend
    return out
