"""dualsr: single-image super-resolution with dual-state recurrent networks.

A self-contained SR toolkit: a small reverse-mode autodiff engine with
compiled convolution kernels, recurrent model variants sharing parameters
across unrolling steps, a bicubic/luminance data pipeline, SGD training and
PSNR/SSIM evaluation, all driven by the ``dualsr`` CLI.
"""

from .autodiff import (
    Tensor,
    backward,
    get_default_dtype,
    no_grad,
    set_default_dtype,
)
from .backend import active_backend
from .errors import ConfigurationError, DualsrError, NumericError

__version__ = "0.1.0"

__all__ = [
    "Tensor",
    "backward",
    "no_grad",
    "set_default_dtype",
    "get_default_dtype",
    "active_backend",
    "ConfigurationError",
    "NumericError",
    "DualsrError",
    "__version__",
]
