"""Kernel backend selection.

The compiled Cython extension is used when available; set
RCFNET_KERNELS=python or RCFNET_KERNELS=compiled to force a backend.
Both backends produce bit-identical forward results (same accumulation
order), so the choice only affects speed.
"""

import os

from . import python_ops

_requested = os.environ.get("RCFNET_KERNELS", "auto")
if _requested not in ("auto", "compiled", "python"):
    raise RuntimeError(
        f"RCFNET_KERNELS must be auto, compiled or python, got {_requested!r}")

if _requested == "python":
    _impl = python_ops
    BACKEND = "python"
else:
    try:
        from . import _fastops as _impl
        BACKEND = "compiled"
    except ImportError:
        if _requested == "compiled":
            raise
        _impl = python_ops
        BACKEND = "python"

conv2d_forward = _impl.conv2d_forward
# the numpy backward is BLAS-backed (tensordot) and measures ~5x faster
# than the scalar compiled loops (see benchmarks/bench_kernels.py), so it
# serves both backends; the compiled variant stays available for parity
# testing via rcfnet.kernels._fastops
conv2d_backward = python_ops.conv2d_backward
maxpool_forward = _impl.maxpool_forward
maxpool_backward = _impl.maxpool_backward
conv_out_size = python_ops.conv_out_size
