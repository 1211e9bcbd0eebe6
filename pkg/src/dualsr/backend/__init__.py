"""Backend selection for the convolution primitives.

The compiled Cython extension is preferred when it has been built; otherwise
the pure-numpy implementation is used.  Selection happens at import time and
can be forced with the environment variable ``DUALSR_BACKEND`` set to
``cython`` or ``numpy`` (``auto`` is the default).  ``set_backend`` exists so
the parity tests and the benchmark can switch at runtime.
"""

import os

from . import numpy_kernels
from ..errors import ConfigurationError

try:
    from . import _convkernels
except ImportError:
    _convkernels = None

_BACKENDS = {"numpy": numpy_kernels}
if _convkernels is not None:
    _BACKENDS["cython"] = _convkernels

_active_name = None
_active = None


def available_backends():
    return sorted(_BACKENDS)


def set_backend(name):
    """Select the kernel backend by name ('cython' or 'numpy')."""
    global _active_name, _active
    if name not in _BACKENDS:
        raise ConfigurationError(
            f"backend {name!r} not available (have: {', '.join(available_backends())})"
        )
    _active_name = name
    _active = _BACKENDS[name]


def active_backend():
    return _active_name


def corr_forward(x, w, stride, pad):
    return _active.corr_forward(x, w, stride, pad)


def corr_input_grad(gy, w, stride, pad, height, width):
    return _active.corr_input_grad(gy, w, stride, pad, height, width)


def corr_weight_grad(x, gy, stride, pad, kh, kw):
    return _active.corr_weight_grad(x, gy, stride, pad, kh, kw)


_requested = os.environ.get("DUALSR_BACKEND", "auto")
if _requested == "auto":
    set_backend("cython" if _convkernels is not None else "numpy")
else:
    set_backend(_requested)
