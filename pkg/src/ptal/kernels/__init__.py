"""Hot numeric kernels with a numba path and a pure-numpy fallback.

The backend is chosen once, at import time. Set ``PTAL_BACKEND=numpy`` to
force the fallback; the default is ``numba`` whenever it can be imported.
Both backends implement identical contracts and are cross-checked in the
test-suite; results agree to rounding, not bit-for-bit.
"""

import logging
import os

from . import _numpy

log = logging.getLogger(__name__)

KERNEL_NAMES = (
    "conv1d_forward",
    "conv1d_backward",
    "adam_update",
    "peak_mask",
    "greedy_match",
    "linear_resample",
)


def _select_backend():
    wanted = os.environ.get("PTAL_BACKEND", "numba").strip().lower()
    if wanted not in ("numba", "numpy"):
        raise ValueError(f"PTAL_BACKEND must be 'numba' or 'numpy', got {wanted!r}")
    if wanted == "numba":
        try:
            from . import _numba
        except ImportError:  # pragma: no cover - numba is optional
            log.warning("numba unavailable, using numpy kernels")
            return "numpy", _numpy
        return "numba", _numba
    return "numpy", _numpy


BACKEND, _impl = _select_backend()

conv1d_forward = _impl.conv1d_forward
conv1d_backward = _impl.conv1d_backward
adam_update = _impl.adam_update
peak_mask = _impl.peak_mask
greedy_match = _impl.greedy_match
linear_resample = _impl.linear_resample


def get_backend(name):
    """Return the kernel module for ``name`` ('numba' or 'numpy')."""
    if name == "numpy":
        return _numpy
    if name == "numba":
        from . import _numba

        return _numba
    raise ValueError(name)
