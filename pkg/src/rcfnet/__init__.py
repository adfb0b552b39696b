"""Multi-stage convolutional edge detection with boundary PR evaluation."""

from .kernels import BACKEND as kernel_backend

__version__ = "0.1.0"
__all__ = ["kernel_backend", "__version__"]
