"""Single-scale and image-pyramid prediction."""

from dataclasses import dataclass, field

import numpy as np

from . import ops
from .tensor import ShapeError, Tensor


@dataclass
class ScaleSet:
    scales: tuple = (0.5, 1.0, 1.5)

    def __post_init__(self):
        self.scales = tuple(float(s) for s in self.scales)
        if not self.scales:
            raise ValueError("scale set must be non-empty")
        if any(s <= 0 for s in self.scales):
            raise ValueError(f"scales must be positive, got {self.scales}")


def _standardize(image, mean_rgb):
    img = np.asarray(image, dtype=np.float64)
    if img.ndim != 3:
        raise ShapeError(f"image must be (C, H, W), got shape {img.shape}")
    mean = np.asarray(mean_rgb, dtype=np.float64)
    if mean.shape[0] != img.shape[0]:
        raise ShapeError(
            f"{mean.shape[0]} channel means for a {img.shape[0]}-channel image")
    return img - mean[:, None, None]


def predict(model, image):
    """Forward one (C, H, W) image; returns the full SideOutputs."""
    x = _standardize(image, model.config.mean_rgb).astype(model.dtype)
    return model.forward(Tensor(x[None]))


def average_maps(maps):
    """Pointwise arithmetic mean of identically sized maps."""
    if not maps:
        raise ValueError("average_maps needs at least one map")
    shape = np.asarray(maps[0]).shape
    for m in maps[1:]:
        if np.asarray(m).shape != shape:
            raise ShapeError(f"map shape {np.asarray(m).shape} != {shape}")
    acc = np.array(maps[0], dtype=np.float64)
    for m in maps[1:]:
        acc += m
    return acc / len(maps)


def predict_multiscale(model, image, scales=None):
    """Pyramid prediction: run each scale, resize back, average.

    Returns the fused edge map at the original resolution.
    """
    if scales is None:
        scales = ScaleSet()
    img = np.asarray(image)
    h, w = img.shape[-2], img.shape[-1]
    min_size = model.config.min_input_size()
    maps = []
    for s in scales.scales:
        if s == 1.0:
            scaled = img
        else:
            sh = max(int(round(s * h)), min_size)
            sw = max(int(round(s * w)), min_size)
            scaled = ops.resize_bilinear_image(img, sh, sw)
        if scaled.shape[-2] < min_size or scaled.shape[-1] < min_size:
            raise ShapeError(
                f"scale {s} gives image {scaled.shape[-2:]} below the "
                f"model minimum {min_size}")
        out = predict(model, scaled)
        fused = out.fused_map[0, 0]
        if fused.shape != (h, w):
            fused = ops.resize_bilinear_image(fused, h, w)
        maps.append(fused)
    if len(maps) == 1:
        return np.asarray(maps[0], dtype=np.float64)
    return average_maps(maps)
