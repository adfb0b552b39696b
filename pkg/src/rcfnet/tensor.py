"""Dense 4-D tensor container and convolution parameter bundle."""

from dataclasses import dataclass, field

import numpy as np


class ShapeError(ValueError):
    """Raised when tensor dimensions are inconsistent; names the axis."""


class Tensor:
    """A (N, C, H, W) array with an optional accumulating gradient buffer.

    Convolution weights reuse the same container with dims read as
    (out_channels, in_channels, kH, kW).  ``grad`` is lazily allocated and
    accumulates until explicitly zeroed.
    """

    __slots__ = ("data", "grad", "velocity", "name")

    def __init__(self, data, name=None):
        data = np.asarray(data)
        if data.ndim != 4:
            raise ShapeError(f"Tensor requires 4 dims (N,C,H,W), got {data.ndim}")
        self.data = data
        self.grad = None
        self.velocity = None
        self.name = name

    @property
    def dims(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def values(self):
        """Flat row-major view of the values."""
        return self.data.reshape(-1)

    def ensure_grad(self):
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        return self.grad

    def accumulate_grad(self, g):
        if g.shape != self.data.shape:
            raise ShapeError(
                f"gradient shape {g.shape} does not match tensor {self.data.shape}")
        self.ensure_grad()
        self.grad += g

    def zero_grad(self):
        if self.grad is not None:
            self.grad[...] = 0

    def astype(self, dtype):
        t = Tensor(self.data.astype(dtype), name=self.name)
        return t

    def copy(self):
        t = Tensor(self.data.copy(), name=self.name)
        if self.grad is not None:
            t.grad = self.grad.copy()
        if self.velocity is not None:
            t.velocity = self.velocity.copy()
        return t

    def __repr__(self):
        return f"Tensor(dims={self.dims}, dtype={self.dtype}, name={self.name!r})"


@dataclass
class ConvParams:
    """Learnable parameters and geometry of one convolution layer.

    ``weights`` has dims (outC, inC, kH, kW); ``bias`` is stored as a
    (1, outC, 1, 1) tensor so the optimizer treats it uniformly.
    """

    weights: Tensor
    bias: Tensor
    stride: int = 1
    pad: int = 0
    dilation: int = 1

    def __post_init__(self):
        oc, _, kh, kw = self.weights.dims
        if kh < 1 or kw < 1:
            raise ShapeError(f"kernel size must be >= 1, got ({kh}, {kw})")
        if self.dilation < 1:
            raise ShapeError(f"dilation must be >= 1, got {self.dilation}")
        if self.stride < 1:
            raise ShapeError(f"stride must be >= 1, got {self.stride}")
        if self.pad < 0:
            raise ShapeError(f"pad must be >= 0, got {self.pad}")
        if self.bias.dims != (1, oc, 1, 1):
            raise ShapeError(
                f"bias dims {self.bias.dims} do not match out channels {oc}")

    @property
    def out_channels(self):
        return self.weights.dims[0]

    @property
    def in_channels(self):
        return self.weights.dims[1]

    def tensors(self):
        return [self.weights, self.bias]
