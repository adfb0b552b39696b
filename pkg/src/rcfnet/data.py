"""Ground-truth consensus, augmentation, synthetic dataset generation
and dataset/prediction I/O.

Dataset layout on disk: ``images/<id>.png`` (8-bit RGB),
``gt/<id>/<k>.png`` (8-bit grayscale, 255 = edge), ids listed one per
line in ``index.txt``.  Predictions are written as 8-bit grayscale PNG
plus an optional raw float32 sidecar ("RCFM" header).
"""

import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .tensor import ShapeError

MAP_MAGIC = b"RCFM"


@dataclass
class AnnotationSet:
    """One image with its per-annotator binary edge maps."""
    image_id: str
    image: np.ndarray            # (3, H, W) float in [0, 1]
    annotator_maps: list         # list of (H, W) binary float maps

    def __post_init__(self):
        if not self.annotator_maps:
            raise ValueError("at least one annotator map required")
        h, w = self.image.shape[1], self.image.shape[2]
        for m in self.annotator_maps:
            if m.shape != (h, w):
                raise ShapeError(
                    f"annotator map {m.shape} does not match image ({h}, {w})")
            vals = np.unique(m)
            if not np.all(np.isin(vals, (0.0, 1.0))):
                raise ValueError("annotator maps must be strictly binary")


@dataclass
class GroundTruth:
    """Per-pixel consensus probability in [0, 1] (multiples of 1/m)."""
    prob: np.ndarray


def consensus(ann):
    """Average the annotator maps into an edge probability map."""
    maps = ann.annotator_maps
    shape = maps[0].shape
    for m in maps[1:]:
        if m.shape != shape:
            raise ShapeError(f"annotator map {m.shape} != {shape}")
    return GroundTruth(prob=np.mean(maps, axis=0))


# -- augmentation ----------------------------------------------------------

FLIP_H = "flip_h"
ROT90 = "rot90"
ROT180 = "rot180"
ROT270 = "rot270"


@dataclass
class Crop:
    x: int
    y: int
    w: int
    h: int


def _apply_one(arr2d_or_img, op):
    a = arr2d_or_img
    axes = (-2, -1)
    if op == FLIP_H:
        return np.flip(a, axis=-1).copy()
    if op == ROT90:
        return np.rot90(a, 1, axes=axes).copy()
    if op == ROT180:
        return np.rot90(a, 2, axes=axes).copy()
    if op == ROT270:
        return np.rot90(a, 3, axes=axes).copy()
    if isinstance(op, Crop):
        h, w = a.shape[-2], a.shape[-1]
        if op.x < 0 or op.y < 0 or op.y + op.h > h or op.x + op.w > w:
            raise ValueError(
                f"crop ({op.x}, {op.y}, {op.w}, {op.h}) outside ({h}, {w})")
        return a[..., op.y:op.y + op.h, op.x:op.x + op.w].copy()
    raise ValueError(f"unknown augmentation op {op!r}")


def augment(ann, augmentation_ops):
    """Apply flips/rotations/crops identically to image and all gt maps."""
    image = ann.image
    maps = list(ann.annotator_maps)
    for op in augmentation_ops:
        image = _apply_one(image, op)
        maps = [_apply_one(m, op) for m in maps]
    return AnnotationSet(image_id=ann.image_id, image=image, annotator_maps=maps)


# -- synthetic shapes ------------------------------------------------------

@dataclass
class Shape:
    """Analytic shape: boundary parametrized over t in [0, 1)."""
    color: tuple = (0.5, 0.5, 0.5)

    def boundary(self, t):
        raise NotImplementedError

    def fill_mask(self, yy, xx):
        raise NotImplementedError


@dataclass
class Rect(Shape):
    x0: float = 0.0
    y0: float = 0.0
    x1: float = 1.0
    y1: float = 1.0

    def boundary(self, t):
        w, h = self.x1 - self.x0, self.y1 - self.y0
        per = 2 * (w + h)
        d = np.asarray(t) * per
        x = np.empty_like(d)
        y = np.empty_like(d)
        m = d < w
        x[m], y[m] = self.x0 + d[m], self.y0
        m2 = (d >= w) & (d < w + h)
        x[m2], y[m2] = self.x1, self.y0 + (d[m2] - w)
        m3 = (d >= w + h) & (d < 2 * w + h)
        x[m3], y[m3] = self.x1 - (d[m3] - w - h), self.y1
        m4 = d >= 2 * w + h
        x[m4], y[m4] = self.x0, self.y1 - (d[m4] - 2 * w - h)
        return y, x

    def fill_mask(self, yy, xx):
        return (xx >= self.x0) & (xx <= self.x1) & (yy >= self.y0) & (yy <= self.y1)


@dataclass
class Ellipse(Shape):
    cy: float = 0.0
    cx: float = 0.0
    ry: float = 1.0
    rx: float = 1.0

    def boundary(self, t):
        a = 2 * math.pi * np.asarray(t)
        return self.cy + self.ry * np.sin(a), self.cx + self.rx * np.cos(a)

    def fill_mask(self, yy, xx):
        return (((xx - self.cx) / self.rx) ** 2
                + ((yy - self.cy) / self.ry) ** 2) <= 1.0


@dataclass
class Triangle(Shape):
    pts: tuple = ((0, 0), (1, 0), (0, 1))   # three (y, x) vertices

    def boundary(self, t):
        p = np.asarray(self.pts, dtype=np.float64)
        segs = [(p[i], p[(i + 1) % 3]) for i in range(3)]
        lens = np.array([np.hypot(*(b - a)) for a, b in segs])
        per = lens.sum()
        d = np.asarray(t) * per
        y = np.empty_like(d)
        x = np.empty_like(d)
        start = 0.0
        for (a, b), ln in zip(segs, lens):
            m = (d >= start) & (d < start + ln)
            f = (d[m] - start) / ln
            y[m] = a[0] + f * (b[0] - a[0])
            x[m] = a[1] + f * (b[1] - a[1])
            start += ln
        return y, x

    def fill_mask(self, yy, xx):
        (ay, ax), (by, bx), (cy, cx) = self.pts
        d1 = (xx - bx) * (ay - by) - (ax - bx) * (yy - by)
        d2 = (xx - cx) * (by - cy) - (bx - cx) * (yy - cy)
        d3 = (xx - ax) * (cy - ay) - (cx - ax) * (yy - ay)
        neg = (d1 < 0) | (d2 < 0) | (d3 < 0)
        pos = (d1 > 0) | (d2 > 0) | (d3 > 0)
        return ~(neg & pos)


@dataclass
class SyntheticSample:
    annotations: AnnotationSet
    shapes: list


def _boundary_normals(shape, t, eps=1e-4):
    y0, x0 = shape.boundary((t - eps) % 1.0)
    y1, x1 = shape.boundary((t + eps) % 1.0)
    ty, tx = y1 - y0, x1 - x0
    norm = np.hypot(ty, tx)
    norm[norm == 0] = 1.0
    # rotate tangent by 90 degrees
    return -tx / norm, ty / norm


def rasterize_boundary(shape, h, w, offset_fn=None, samples_per_px=4):
    """Binary map of a shape boundary, optionally displaced along normals."""
    yb, xb = shape.boundary(np.array([0.0, 0.25, 0.5, 0.75]))
    per_est = 2.0 * (np.ptp(yb) + np.ptp(xb)) + 8
    n = max(64, int(per_est * samples_per_px))
    t = np.arange(n) / n
    y, x = shape.boundary(t)
    if offset_fn is not None:
        ny, nx = _boundary_normals(shape, t)
        off = offset_fn(t)
        y = y + off * ny
        x = x + off * nx
    yi = np.round(y).astype(int)
    xi = np.round(x).astype(int)
    keep = (yi >= 0) & (yi < h) & (xi >= 0) & (xi < w)
    out = np.zeros((h, w))
    out[yi[keep], xi[keep]] = 1.0
    return out


def _smooth_noise(rng, h, w, sigma=6.0):
    from scipy.ndimage import gaussian_filter
    base = rng.standard_normal((h, w))
    sm = gaussian_filter(base, sigma)
    sm /= max(np.abs(sm).max(), 1e-9)
    return sm


def _render_image(shapes, h, w, rng, supersample=4):
    ss = supersample
    yy, xx = np.mgrid[0:h * ss, 0:w * ss]
    yy = (yy + 0.5) / ss - 0.5
    xx = (xx + 0.5) / ss - 0.5
    base = 0.35 + 0.2 * rng.random()
    img = np.full((3, h * ss, w * ss), base)
    for shape in shapes:
        mask = shape.fill_mask(yy, xx)
        for ch in range(3):
            img[ch][mask] = shape.color[ch]
    # box-average the supersampled canvas for anti-aliased boundaries
    img = img.reshape(3, h, ss, w, ss).mean(axis=(2, 4))
    tex = _smooth_noise(rng, h, w, sigma=3.0)
    grain = rng.standard_normal((h, w))
    img = img + 0.05 * tex[None] + 0.015 * grain[None]
    return np.clip(img, 0.0, 1.0)


def _random_shapes(rng, h, w):
    shapes = []
    for _ in range(rng.integers(1, 5)):
        kind = rng.integers(0, 3)
        color = tuple(np.clip(rng.random(3) * 0.9 + 0.05, 0, 1))
        if kind == 0:
            x0 = rng.uniform(2, w * 0.6)
            y0 = rng.uniform(2, h * 0.6)
            shapes.append(Rect(color=color, x0=x0, y0=y0,
                               x1=x0 + rng.uniform(w * 0.2, w * 0.5),
                               y1=y0 + rng.uniform(h * 0.2, h * 0.5)))
        elif kind == 1:
            shapes.append(Ellipse(color=color,
                                  cy=rng.uniform(h * 0.2, h * 0.8),
                                  cx=rng.uniform(w * 0.2, w * 0.8),
                                  ry=rng.uniform(h * 0.12, h * 0.35),
                                  rx=rng.uniform(w * 0.12, w * 0.35)))
        else:
            cy, cx = rng.uniform(h * 0.2, h * 0.8), rng.uniform(w * 0.2, w * 0.8)
            pts = []
            for ang in (rng.uniform(0, 2.1), rng.uniform(2.1, 4.2),
                        rng.uniform(4.2, 6.28)):
                r = rng.uniform(min(h, w) * 0.15, min(h, w) * 0.42)
                pts.append((cy + r * math.sin(ang), cx + r * math.cos(ang)))
            shapes.append(Triangle(color=color, pts=tuple(pts)))
    return shapes


def _jitter_offset(rng, jitter):
    """Smooth low-frequency displacement along the boundary parameter."""
    if jitter <= 0:
        return None
    amps = rng.uniform(-1, 1, size=3)
    phases = rng.uniform(0, 2 * math.pi, size=3)
    freqs = rng.integers(1, 4, size=3)

    def offset(t):
        off = np.zeros_like(t)
        for a, p, f in zip(amps, phases, freqs):
            off += a * np.sin(2 * math.pi * f * t + p)
        peak = max(np.abs(off).max(), 1e-9)
        return off * (jitter / peak) * rng.uniform(0.3, 1.0)

    return offset


def generate_synthetic(count, seed, canvas=(64, 64), annotators=4, jitter=1.0):
    """Desk-scale synthetic dataset: shapes with annotator-jittered edges.

    Returns a list of SyntheticSample; the analytic shapes are retained so
    tests can audit boundary placement exactly.
    """
    h, w = canvas
    if h < 32 or w < 32:
        raise ValueError(f"canvas must be at least 32x32, got {canvas}")
    samples = []
    for idx in range(count):
        # split the rng per sample so generation order never matters
        rng = np.random.default_rng((seed, idx))
        shapes = _random_shapes(rng, h, w)
        image = _render_image(shapes, h, w, rng)
        maps = []
        for _ in range(annotators):
            m = np.zeros((h, w))
            for shape in shapes:
                m = np.maximum(
                    m, rasterize_boundary(shape, h, w,
                                          offset_fn=_jitter_offset(rng, jitter)))
            maps.append(m)
        ann = AnnotationSet(image_id=f"synth{idx:05d}",
                            image=image.astype(np.float32),
                            annotator_maps=maps)
        samples.append(SyntheticSample(annotations=ann, shapes=shapes))
    return samples


# -- disk I/O --------------------------------------------------------------

def _to_u8(arr):
    return np.clip(np.round(np.asarray(arr) * 255.0), 0, 255).astype(np.uint8)


def save_dataset(samples, root):
    root = Path(root)
    (root / "images").mkdir(parents=True, exist_ok=True)
    ids = []
    for s in samples:
        ann = s.annotations if isinstance(s, SyntheticSample) else s
        ids.append(ann.image_id)
        img = _to_u8(ann.image).transpose(1, 2, 0)
        Image.fromarray(img, mode="RGB").save(root / "images" / f"{ann.image_id}.png")
        gdir = root / "gt" / ann.image_id
        gdir.mkdir(parents=True, exist_ok=True)
        for k, m in enumerate(ann.annotator_maps):
            Image.fromarray(_to_u8(m), mode="L").save(gdir / f"{k}.png")
    with open(root / "index.txt", "w", encoding="utf-8") as fh:
        fh.write("".join(f"{i}\n" for i in ids))


def load_dataset(root):
    root = Path(root)
    index = root / "index.txt"
    if not index.exists():
        raise FileNotFoundError(f"{index} not found")
    samples = []
    for image_id in index.read_text(encoding="utf-8").split():
        img_path = root / "images" / f"{image_id}.png"
        img = np.asarray(Image.open(img_path).convert("RGB"), dtype=np.float32)
        img = img.transpose(2, 0, 1) / 255.0
        gdir = root / "gt" / image_id
        maps = []
        for p in sorted(gdir.iterdir()):
            m = np.asarray(Image.open(p).convert("L"), dtype=np.float64) / 255.0
            maps.append((m >= 0.5).astype(np.float64))
        samples.append(AnnotationSet(image_id=image_id, image=img,
                                     annotator_maps=maps))
    return samples


def save_prediction(prob_map, path, float_sidecar=True):
    """Write a probability map as 8-bit PNG (+ raw float sidecar)."""
    path = Path(path)
    arr = np.asarray(prob_map, dtype=np.float32)
    if arr.ndim != 2:
        raise ShapeError(f"prediction map must be 2-D, got shape {arr.shape}")
    Image.fromarray(_to_u8(arr), mode="L").save(path)
    if float_sidecar:
        h, w = arr.shape
        with open(path.with_suffix(".rcfm"), "wb") as fh:
            fh.write(MAP_MAGIC)
            fh.write(struct.pack("<II", h, w))
            fh.write(arr.astype("<f4").tobytes())


def load_prediction(path):
    """Read a prediction map, preferring the float sidecar when present."""
    path = Path(path)
    sidecar = path.with_suffix(".rcfm")
    if sidecar.exists():
        blob = sidecar.read_bytes()
        if blob[:4] != MAP_MAGIC:
            raise ValueError(f"{sidecar}: bad magic bytes")
        h, w = struct.unpack_from("<II", blob, 4)
        arr = np.frombuffer(blob, dtype="<f4", count=h * w, offset=12)
        if arr.size != h * w:
            raise ValueError(f"{sidecar}: truncated map")
        return arr.reshape(h, w).astype(np.float64)
    return np.asarray(Image.open(path).convert("L"), dtype=np.float64) / 255.0
