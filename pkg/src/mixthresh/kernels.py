"""Kernel backend selection.

The compiled extension is used when it imports and ``MIXTHRESH_PURE_PYTHON``
is not set; otherwise the NumPy implementation is used.
"""

from __future__ import annotations

import os

from . import _kernels_py

BACKEND = "python"
obs_terms = _kernels_py.obs_terms
cluster_posterior = _kernels_py.cluster_posterior

if os.environ.get("MIXTHRESH_PURE_PYTHON", "").strip() not in ("1", "true", "yes"):
    try:
        from . import _kernels as _compiled
    except ImportError:
        pass
    else:
        BACKEND = "compiled"
        obs_terms = _compiled.obs_terms
        cluster_posterior = _compiled.cluster_posterior


def backends() -> dict:
    """All importable backends by name."""
    found = {"python": _kernels_py}
    try:
        from . import _kernels as _compiled
    except ImportError:
        return found
    found["compiled"] = _compiled
    return found
