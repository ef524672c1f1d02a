"""Appearance features for detections, and per-target appearance memory.

The heavy re-identification CNN stays outside this package: features either
arrive precomputed in a feature file, or come from a small built-in color
histogram descriptor so the whole system stays runnable with nothing but a
sequence directory.

Each target remembers the raw feature of the detection most recently
assigned to it; unassigned frames leave that memory untouched.
"""

from __future__ import annotations

import numpy as np

from .geometry import BBox

__all__ = [
    "HISTOGRAM_WIDTH",
    "PrecomputedFeatureProvider",
    "PatchHistogramProvider",
    "AppearanceState",
]

HISTOGRAM_BINS = 8
HISTOGRAM_WIDTH = 3 * HISTOGRAM_BINS


class PrecomputedFeatureProvider:
    """Serves per-detection features from a loaded feature table.

    The table maps (frame, detection_index) to a feature vector; a missing
    record is a hard error because silently substituting features would
    corrupt the appearance stream.
    """

    def __init__(self, records: dict[tuple[int, int], np.ndarray], width: int) -> None:
        self.width = int(width)
        self._records = records

    def features_for_frame(self, frame_id: int, boxes: list[BBox]) -> np.ndarray:
        out = np.empty((len(boxes), self.width), dtype=np.float64)
        for i in range(len(boxes)):
            key = (int(frame_id), i)
            if key not in self._records:
                raise KeyError(
                    f"no precomputed feature for frame {frame_id}, detection {i}"
                )
            vec = self._records[key]
            if vec.shape != (self.width,):
                raise ValueError(
                    f"feature for frame {frame_id}, detection {i} has width "
                    f"{vec.shape[0]}, expected {self.width}"
                )
            out[i] = vec
        return out


class PatchHistogramProvider:
    """L1-normalized 8-bin-per-channel color histogram over each box patch.

    A deterministic stand-in for a learned descriptor: it needs only the
    frame images on disk (``<img_dir>/<frame:06d>.jpg`` by default).
    """

    width = HISTOGRAM_WIDTH

    def __init__(self, img_dir, pattern: str = "{frame:06d}.jpg") -> None:
        from pathlib import Path

        self.img_dir = Path(img_dir)
        self.pattern = pattern
        self._cache: tuple[int, np.ndarray] | None = None

    def _load_frame(self, frame_id: int) -> np.ndarray:
        if self._cache is not None and self._cache[0] == frame_id:
            return self._cache[1]
        from PIL import Image

        path = self.img_dir / self.pattern.format(frame=frame_id)
        if not path.exists():
            raise FileNotFoundError(f"frame image not found: {path}")
        img = np.asarray(Image.open(path).convert("RGB"))
        self._cache = (frame_id, img)
        return img

    def features_for_frame(self, frame_id: int, boxes: list[BBox]) -> np.ndarray:
        img = self._load_frame(frame_id)
        out = np.zeros((len(boxes), self.width), dtype=np.float64)
        for i, box in enumerate(boxes):
            out[i] = patch_histogram(img, box)
        return out


def patch_histogram(img: np.ndarray, box: BBox) -> np.ndarray:
    """Histogram descriptor of one pixel-coordinate box patch."""
    h, w = img.shape[:2]
    x0 = int(np.clip(np.floor(box.x_min), 0, w))
    x1 = int(np.clip(np.ceil(box.x_max), 0, w))
    y0 = int(np.clip(np.floor(box.y_min), 0, h))
    y1 = int(np.clip(np.ceil(box.y_max), 0, h))
    patch = img[y0:y1, x0:x1]
    feat = np.zeros(HISTOGRAM_WIDTH, dtype=np.float64)
    if patch.size == 0:
        return feat
    for c in range(3):
        hist, _ = np.histogram(patch[:, :, c], bins=HISTOGRAM_BINS, range=(0, 256))
        feat[c * HISTOGRAM_BINS : (c + 1) * HISTOGRAM_BINS] = hist
    total = feat.sum()
    if total > 0:
        feat /= total
    return feat


class AppearanceState:
    """Feature of the most recently assigned detection, fixed width."""

    def __init__(self, feature: np.ndarray) -> None:
        feature = np.asarray(feature, dtype=np.float64)
        if feature.ndim != 1:
            raise ValueError(f"feature must be a vector, got shape {feature.shape}")
        self.width = feature.shape[0]
        self._feature = feature.copy()

    def step(self) -> np.ndarray:
        return self._feature

    def update(self, feature: np.ndarray) -> None:
        feature = np.asarray(feature, dtype=np.float64)
        if feature.shape != (self.width,):
            raise ValueError(
                f"feature width changed: got {feature.shape}, "
                f"expected ({self.width},)"
            )
        self._feature = feature.copy()
