"""Hot-kernel dispatch.

The compiled extension is used when it was built; otherwise the NumPy
fallback is imported. ``DSDUDA_KERNELS=python`` forces the fallback.
"""

import os

from . import _pykernels

try:
    from . import _ckernels
except ImportError:  # extension not built
    _ckernels = None

_BACKENDS = {"python": _pykernels}
if _ckernels is not None:
    _BACKENDS["cython"] = _ckernels

BACKEND = "python"
fft_inplace = _pykernels.fft_inplace
lstm_forward = _pykernels.lstm_forward
lstm_backward = _pykernels.lstm_backward


def available():
    return sorted(_BACKENDS)


def use(name):
    """Switch every kernel to backend ``name`` ("cython" or "python")."""
    global BACKEND, fft_inplace, lstm_forward, lstm_backward
    if name not in _BACKENDS:
        raise ValueError(f"kernel backend {name!r} unavailable; have {available()}")
    mod = _BACKENDS[name]
    BACKEND = name
    fft_inplace = mod.fft_inplace
    lstm_forward = mod.lstm_forward
    lstm_backward = mod.lstm_backward


use(os.environ.get("DSDUDA_KERNELS") or ("cython" if _ckernels is not None else "python"))
