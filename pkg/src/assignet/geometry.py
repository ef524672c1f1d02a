"""Axis-aligned bounding boxes, affine warps and pairwise box similarities.

Boxes are kept in corner form (x_min, y_min, x_max, y_max); the MOT-style
(x, y, w, h) form is converted at the I/O boundary.  All arithmetic is done
in 64-bit floats.

Two similarity metrics are provided:

* ``iou`` -- intersection over union, in [0, 1], higher is more similar.
* ``ulbr1`` -- a corner-based L1 ratio, bounded above by 0, higher is more
  similar.  Unlike IoU it keeps varying smoothly for non-overlapping boxes,
  which makes it a better gating metric when boxes may be far apart.

Scalar functions operate on :class:`BBox`; the ``pairwise_*`` variants are
vectorized over (N, 4) / (M, 4) corner arrays and produce (N, M) matrices.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "BBox",
    "Warp2D",
    "iou",
    "ulbr1",
    "normalize",
    "denormalize",
    "apply_warp",
    "pairwise_iou",
    "pairwise_ulbr1",
    "pairwise_similarity",
]


@dataclass(frozen=True)
class BBox:
    """Axis-aligned box with ``x_min <= x_max`` and ``y_min <= y_max``."""

    x_min: float
    y_min: float
    x_max: float
    y_max: float

    def __post_init__(self) -> None:
        if self.x_min > self.x_max or self.y_min > self.y_max:
            raise ValueError(
                f"inverted box corners: ({self.x_min}, {self.y_min}, "
                f"{self.x_max}, {self.y_max})"
            )

    @property
    def ul(self) -> tuple[float, float]:
        return (self.x_min, self.y_min)

    @property
    def br(self) -> tuple[float, float]:
        return (self.x_max, self.y_max)

    @property
    def width(self) -> float:
        return self.x_max - self.x_min

    @property
    def height(self) -> float:
        return self.y_max - self.y_min

    @property
    def area(self) -> float:
        return self.width * self.height

    @classmethod
    def from_xywh(cls, x: float, y: float, w: float, h: float) -> "BBox":
        """Build from top-left corner plus size (MOT file convention)."""
        return cls(float(x), float(y), float(x) + float(w), float(y) + float(h))

    def to_xywh(self) -> tuple[float, float, float, float]:
        return (self.x_min, self.y_min, self.width, self.height)

    def to_array(self) -> np.ndarray:
        return np.array(
            [self.x_min, self.y_min, self.x_max, self.y_max], dtype=np.float64
        )

    @classmethod
    def from_array(cls, arr: np.ndarray) -> "BBox":
        x0, y0, x1, y1 = (float(v) for v in arr)
        return cls(x0, y0, x1, y1)


@dataclass(frozen=True)
class Warp2D:
    """2x3 affine transform mapping points of one frame into the next.

    ``(x, y) -> (a*x + b*y + c, d*x + e*y + f)`` with coefficient layout
    ``[[a, b, c], [d, e, f]]``.
    """

    a: float
    b: float
    c: float
    d: float
    e: float
    f: float

    @classmethod
    def identity(cls) -> "Warp2D":
        return cls(1.0, 0.0, 0.0, 0.0, 1.0, 0.0)

    @classmethod
    def from_matrix(cls, m: np.ndarray) -> "Warp2D":
        m = np.asarray(m, dtype=np.float64)
        if m.shape != (2, 3):
            raise ValueError(f"expected a 2x3 warp matrix, got shape {m.shape}")
        return cls(*(float(v) for v in m.ravel()))

    def matrix(self) -> np.ndarray:
        return np.array(
            [[self.a, self.b, self.c], [self.d, self.e, self.f]], dtype=np.float64
        )

    def apply_point(self, x: float, y: float) -> tuple[float, float]:
        return (
            self.a * x + self.b * y + self.c,
            self.d * x + self.e * y + self.f,
        )

    def compose(self, inner: "Warp2D") -> "Warp2D":
        """Return the warp equivalent to applying ``inner`` first, then self."""
        A = np.eye(3)
        B = np.eye(3)
        A[:2] = self.matrix()
        B[:2] = inner.matrix()
        return Warp2D.from_matrix((A @ B)[:2])

    def rescaled(self, sx: float, sy: float) -> "Warp2D":
        """Conjugate the warp into coordinates scaled by (sx, sy).

        If this warp acts on pixel coordinates, ``rescaled(1/W, 1/H)`` is the
        same motion expressed in [0, 1]-normalized coordinates.
        """
        scale = Warp2D(sx, 0.0, 0.0, 0.0, sy, 0.0)
        unscale = Warp2D(1.0 / sx, 0.0, 0.0, 0.0, 1.0 / sy, 0.0)
        return scale.compose(self).compose(unscale)

    def is_identity(self, tol: float = 0.0) -> bool:
        return bool(
            np.all(np.abs(self.matrix() - Warp2D.identity().matrix()) <= tol)
        )


def iou(a: BBox, b: BBox) -> float:
    """Intersection over union of two boxes; 0 for disjoint or zero-area."""
    ix = min(a.x_max, b.x_max) - max(a.x_min, b.x_min)
    iy = min(a.y_max, b.y_max) - max(a.y_min, b.y_min)
    if ix <= 0.0 or iy <= 0.0:
        return 0.0
    inter = ix * iy
    union = a.area + b.area - inter
    if union <= 0.0:
        return 0.0
    return inter / union


def ulbr1(a: BBox, b: BBox) -> float:
    """Corner-based L1 similarity, always <= 0; 0 only for identical boxes.

    Computed as ``-|num / den|`` with ``num`` the summed L1 distances between
    matching corners and ``den`` the difference of the cross-corner L1
    distances.  A zero denominator with zero numerator means identical boxes
    (best score, 0); a zero denominator with positive numerator is mapped to
    ``-inf`` (worst score) so ordering is preserved without raising.
    """
    num = (
        abs(a.x_min - b.x_min)
        + abs(a.y_min - b.y_min)
        + abs(a.x_max - b.x_max)
        + abs(a.y_max - b.y_max)
    )
    den = (
        abs(a.x_min - b.x_max)
        + abs(a.y_min - b.y_max)
        - abs(a.x_max - b.x_min)
        - abs(a.y_max - b.y_min)
    )
    if den == 0.0:
        return 0.0 if num == 0.0 else float("-inf")
    return -abs(num / den)


def normalize(b: BBox, image_width: float, image_height: float) -> BBox:
    """Divide box coordinates elementwise by the image size."""
    if image_width <= 0 or image_height <= 0:
        raise ValueError(
            f"image size must be positive, got {image_width}x{image_height}"
        )
    return BBox(
        b.x_min / image_width,
        b.y_min / image_height,
        b.x_max / image_width,
        b.y_max / image_height,
    )


def denormalize(b: BBox, image_width: float, image_height: float) -> BBox:
    """Inverse of :func:`normalize`."""
    if image_width <= 0 or image_height <= 0:
        raise ValueError(
            f"image size must be positive, got {image_width}x{image_height}"
        )
    return BBox(
        b.x_min * image_width,
        b.y_min * image_height,
        b.x_max * image_width,
        b.y_max * image_height,
    )


def apply_warp(b: BBox, w: Warp2D) -> BBox:
    """Map both corners through the affine warp and re-canonicalize."""
    x0, y0 = w.apply_point(b.x_min, b.y_min)
    x1, y1 = w.apply_point(b.x_max, b.y_max)
    return BBox(min(x0, x1), min(y0, y1), max(x0, x1), max(y0, y1))


def _as_corners(boxes: np.ndarray) -> np.ndarray:
    arr = np.asarray(boxes, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[1] != 4:
        raise ValueError(f"expected an (N, 4) corner array, got shape {arr.shape}")
    return arr


def pairwise_iou(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """(N, M) IoU matrix for corner arrays ``a`` (N, 4) and ``b`` (M, 4)."""
    a = _as_corners(a)
    b = _as_corners(b)
    ix = np.minimum(a[:, None, 2], b[None, :, 2]) - np.maximum(
        a[:, None, 0], b[None, :, 0]
    )
    iy = np.minimum(a[:, None, 3], b[None, :, 3]) - np.maximum(
        a[:, None, 1], b[None, :, 1]
    )
    inter = np.clip(ix, 0.0, None) * np.clip(iy, 0.0, None)
    area_a = (a[:, 2] - a[:, 0]) * (a[:, 3] - a[:, 1])
    area_b = (b[:, 2] - b[:, 0]) * (b[:, 3] - b[:, 1])
    union = area_a[:, None] + area_b[None, :] - inter
    out = np.zeros_like(inter)
    np.divide(inter, union, out=out, where=union > 0.0)
    return out


def pairwise_ulbr1(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """(N, M) corner-L1 similarity matrix; singular entries follow the
    identical-box rule of :func:`ulbr1` (0 or -inf)."""
    a = _as_corners(a)
    b = _as_corners(b)
    d = np.abs(a[:, None, :] - b[None, :, :])
    num = d.sum(axis=2)
    ul_vs_br = np.abs(a[:, None, :2] - b[None, :, 2:]).sum(axis=2)
    br_vs_ul = np.abs(a[:, None, 2:] - b[None, :, :2]).sum(axis=2)
    den = ul_vs_br - br_vs_ul
    out = np.full(num.shape, -np.inf)
    np.divide(num, den, out=out, where=den != 0.0)
    out = -np.abs(out)
    out[(den == 0.0) & (num == 0.0)] = 0.0
    return out


def pairwise_similarity(a: np.ndarray, b: np.ndarray, metric: str) -> np.ndarray:
    """Dispatch to a pairwise metric by name ("iou" or "ulbr1")."""
    if metric == "iou":
        return pairwise_iou(a, b)
    if metric == "ulbr1":
        return pairwise_ulbr1(a, b)
    raise ValueError(f"unknown box similarity metric: {metric!r}")
