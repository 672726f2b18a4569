"""Hot numeric kernels with a compiled core and a numpy fallback.

The compiled extension is used when it was built and importable; setting
``CDNEMIL_PURE_PYTHON=1`` forces the fallback. ``BACKEND`` names the active
implementation.
"""
import os

import numpy as np

from . import _fallback

try:
    from . import _ckernels
except ImportError:  # extension not built
    _ckernels = None

_force_python = os.environ.get("CDNEMIL_PURE_PYTHON", "").lower() in ("1", "true", "yes")

if _ckernels is not None and not _force_python:
    _impl = _ckernels
    BACKEND = "cython"
else:
    _impl = _fallback
    BACKEND = "python"


def available_backends():
    """Map of backend name to kernel module, compiled first when present."""
    found = {}
    if _ckernels is not None:
        found["cython"] = _ckernels
    found["python"] = _fallback
    return found


def _c(a):
    return np.ascontiguousarray(a, dtype=np.float64)


def softmax_rows(x):
    return _impl.softmax_rows(_c(x))


def softmax_rows_backward(y, gy):
    return _impl.softmax_rows_backward(_c(y), _c(gy))


def center_std(z, mu):
    return _impl.center_std(_c(z), _c(mu))


def center_std_backward(z, mu, std, gstd):
    return _impl.center_std_backward(_c(z), _c(mu), _c(std), _c(gstd))


def auroc(scores, labels):
    return _impl.auroc(scores, labels)


def mean_pairwise_distance(x):
    return _impl.mean_pairwise_distance(_c(x))
