"""Kernel dispatch: the compiled extension when importable, numpy otherwise.

Set ``HMDP_MPC_PURE_PYTHON=1`` to force the fallback.
"""
import os

import numpy as np

from . import _kernels_py

try:
    if os.environ.get("HMDP_MPC_PURE_PYTHON"):
        raise ImportError("pure-Python kernels requested")
    from . import _kernels as _compiled
except ImportError:
    _compiled = None

BACKEND = "cython" if _compiled is not None else "python"


def sequence_feasibility(ego_x, ego_lane, sa_x, tight, sa_lane, d_safe):
    if _compiled is None:
        return _kernels_py.sequence_feasibility(ego_x, ego_lane, sa_x, tight, sa_lane, d_safe)
    H = np.shape(ego_x)[1]
    return _compiled.sequence_feasibility(
        np.ascontiguousarray(ego_x, dtype=np.float64),
        np.ascontiguousarray(ego_lane, dtype=np.int64),
        np.ascontiguousarray(np.reshape(sa_x, (-1, H)), dtype=np.float64),
        np.ascontiguousarray(np.reshape(tight, (-1, H)), dtype=np.float64),
        np.ascontiguousarray(np.reshape(sa_lane, (-1, H)), dtype=np.int64),
        float(d_safe),
    )
