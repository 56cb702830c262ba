"""Bounding-box geometry, frames and patch extraction.

Boxes use continuous corner form (x, y, w, h) with sub-pixel coordinates;
absence is part of the box record itself so every per-frame stream has
exactly one entry per frame.  All types are immutable values and all
operations are pure functions.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels


@dataclass(frozen=True)
class Box:
    """Axis-aligned box; ``present=False`` encodes "no target in this frame".

    Coordinates of absent boxes are canonically zeroed and must be ignored
    by consumers.
    """

    x: float
    y: float
    w: float
    h: float
    present: bool = True

    def __post_init__(self):
        if self.present:
            if not (self.w > 0 and self.h > 0):
                raise ValueError(f"present box needs positive size, got w={self.w}, h={self.h}")
            object.__setattr__(self, "x", float(self.x))
            object.__setattr__(self, "y", float(self.y))
            object.__setattr__(self, "w", float(self.w))
            object.__setattr__(self, "h", float(self.h))
        else:
            object.__setattr__(self, "x", 0.0)
            object.__setattr__(self, "y", 0.0)
            object.__setattr__(self, "w", 0.0)
            object.__setattr__(self, "h", 0.0)

    @classmethod
    def absent(cls) -> "Box":
        return cls(0.0, 0.0, 0.0, 0.0, present=False)

    @classmethod
    def from_vector(cls, v) -> "Box":
        x, y, w, h = (float(c) for c in v)
        return cls(x, y, w, h)

    def to_vector(self) -> np.ndarray:
        return np.array([self.x, self.y, self.w, self.h])

    @property
    def x2(self) -> float:
        return self.x + self.w

    @property
    def y2(self) -> float:
        return self.y + self.h

    @property
    def cx(self) -> float:
        return self.x + 0.5 * self.w

    @property
    def cy(self) -> float:
        return self.y + 0.5 * self.h

    @property
    def area(self) -> float:
        return self.w * self.h if self.present else 0.0


@dataclass(frozen=True)
class Frame:
    """A grayscale frame; row-major float64 intensities in [0, 1].

    The pixel array is frozen in place so frames are genuinely immutable
    values; pass a copy if you need to keep a writable handle.
    """

    pixels: np.ndarray

    def __post_init__(self):
        px = np.ascontiguousarray(self.pixels, dtype=np.float64)
        if px.ndim != 2 or px.size == 0:
            raise ValueError("pixels must be a non-empty 2-D array")
        if px.min() < 0.0 or px.max() > 1.0:
            raise ValueError("intensities must lie in [0, 1]")
        px.setflags(write=False)
        object.__setattr__(self, "pixels", px)

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    def __eq__(self, other) -> bool:
        if not isinstance(other, Frame):
            return NotImplemented
        return self.pixels.shape == other.pixels.shape and np.array_equal(
            self.pixels, other.pixels
        )

    __hash__ = None


def iou(a: Box, b: Box) -> float:
    """Intersection over union of two present boxes."""
    if not (a.present and b.present):
        raise ValueError("iou requires both boxes to be present")
    ix = min(a.x2, b.x2) - max(a.x, b.x)
    iy = min(a.y2, b.y2) - max(a.y, b.y)
    if ix <= 0.0 or iy <= 0.0:
        return 0.0
    inter = ix * iy
    # x2 = x + w reconstruction can overshoot the true area by an ulp
    return min(inter / (a.area + b.area - inter), 1.0)


def clip_box(b: Box, width: int, height: int) -> Box:
    """Intersect a present box with the frame rectangle; absent if empty."""
    if not b.present:
        raise ValueError("clip_box requires a present box")
    x1 = max(b.x, 0.0)
    y1 = max(b.y, 0.0)
    x2 = min(b.x2, float(width))
    y2 = min(b.y2, float(height))
    if x2 - x1 <= 0.0 or y2 - y1 <= 0.0:
        return Box.absent()
    return Box(x1, y1, x2 - x1, y2 - y1)


def extract_patch(f: Frame, b: Box, out_w: int, out_h: int) -> Frame:
    """Bilinear resample of region b into an out_w x out_h frame.

    Sample points outside the frame read as intensity 0 (black padding).
    """
    if not b.present:
        raise ValueError("extract_patch requires a present box")
    if out_w <= 0 or out_h <= 0:
        raise ValueError("output size must be positive")
    vals = kernels.bilinear_sample_box(f.pixels, b.x, b.y, b.w, b.h, out_w, out_h)
    # convex interpolation of [0, 1] data can overshoot by ~1 ulp
    return Frame(np.clip(vals, 0.0, 1.0))
