"""Backend selection for the hot kernels.

The compiled extension is used when it imports cleanly; otherwise, or when
``REFED_PURE_PYTHON=1`` is set, the numpy fallback is used.
"""
import os

import numpy as np

from . import _fallback

try:
    if os.environ.get("REFED_PURE_PYTHON", "") == "1":
        raise ImportError("pure-python backend forced")
    from . import _kernels as _compiled
except ImportError:
    _compiled = None

_active = _compiled if _compiled is not None else _fallback


def backend_name():
    return "compiled" if _active is _compiled else "python"


def available_backends():
    return ["python"] + (["compiled"] if _compiled is not None else [])


def set_backend(name):
    """Switch the active kernel backend (``"python"`` or ``"compiled"``)."""
    global _active
    if name == "python":
        _active = _fallback
    elif name == "compiled":
        if _compiled is None:
            raise RuntimeError("compiled kernels are not built")
        _active = _compiled
    else:
        raise ValueError(f"unknown backend {name!r}")


_NATIVE = (np.dtype(np.float32), np.dtype(np.float64))


def _impl(arr):
    # the compiled kernels cover float32/float64; other dtypes (e.g. longdouble) use numpy
    return _active if arr.dtype in _NATIVE else _fallback


def im2col(x, k):
    return _impl(x).im2col(x, k)


def col2im(dcols, k, C):
    return _impl(dcols).col2im(dcols, k, C)


def bn_train_forward(x, gamma, beta, eps):
    return _impl(x).bn_train_forward(x, gamma, beta, eps)


def bn_backward(dy, xhat, gamma, invstd):
    return _impl(dy).bn_backward(dy, xhat, gamma, invstd)
