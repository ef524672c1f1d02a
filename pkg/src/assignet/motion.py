"""Per-target motion models.

Both models share one surface so the tracker can swap them:

* ``predict()``     -- advance one time step, return the predicted box.
* ``update(box)``   -- correct with a measured box (after predict()).
* ``propagate()``   -- advance one time step with no measurement; used on
                       frames where no inputs were built (same step as
                       predict, different call site).
* ``apply_cmc(w)``  -- re-express the state in the next frame's coordinates
                       using a camera-motion warp.

State lives in whatever coordinate frame the boxes are given in; the tracker
uses [0, 1]-normalized coordinates and rescales warps accordingly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import BBox, Warp2D, apply_warp

__all__ = ["KalmanParams", "KalmanBoxModel", "LinearBoxModel", "make_motion_model"]

_MIN_SIZE = 1e-9


def _encode(box: BBox) -> np.ndarray:
    """Box -> (cx, cy, w, h)."""
    return np.array(
        [
            (box.x_min + box.x_max) / 2.0,
            (box.y_min + box.y_max) / 2.0,
            box.width,
            box.height,
        ],
        dtype=np.float64,
    )


def _decode(z: np.ndarray) -> BBox:
    cx, cy, w, h = z
    w = max(float(w), _MIN_SIZE)
    h = max(float(h), _MIN_SIZE)
    return BBox(cx - w / 2.0, cy - h / 2.0, cx + w / 2.0, cy + h / 2.0)


@dataclass
class KalmanParams:
    """Noise scales, all relative to the current box height.

    The position/velocity split follows the usual tracking-by-detection
    convention; every scale is independently settable so noise-free
    configurations remain well defined.
    """

    process_position_std: float = 0.05
    process_velocity_std: float = 0.00625
    measurement_std: float = 0.05
    init_position_std: float = 0.1
    init_velocity_std: float = 0.0625


class KalmanBoxModel:
    """Constant-velocity Kalman filter over (cx, cy, w, h).

    The 8-dim state is the box encoding plus its per-frame velocities.  The
    covariance is kept symmetric (and PSD via the Joseph-form update); a
    singular innovation matrix falls back to the pseudo-inverse so exact
    zero-noise configurations work without faults.
    """

    ndim = 8

    def __init__(self, box: BBox, params: KalmanParams | None = None) -> None:
        self.params = params or KalmanParams()
        z = _encode(box)
        self.mean = np.zeros(self.ndim)
        self.mean[:4] = z
        h = z[3]
        stds = np.array(
            [self.params.init_position_std * h] * 4
            + [self.params.init_velocity_std * h] * 4
        )
        self.covariance = np.diag(stds**2)
        self._transition = np.eye(self.ndim)
        self._transition[:4, 4:] = np.eye(4)
        self._observation = np.eye(4, self.ndim)

    def _time_update(self) -> None:
        h = max(abs(self.mean[3]), _MIN_SIZE)
        q = np.array(
            [self.params.process_position_std * h] * 4
            + [self.params.process_velocity_std * h] * 4
        )
        F = self._transition
        self.mean = F @ self.mean
        self.covariance = F @ self.covariance @ F.T + np.diag(q**2)
        self.covariance = (self.covariance + self.covariance.T) / 2.0

    def predict(self) -> BBox:
        self._time_update()
        return _decode(self.mean[:4])

    def propagate(self) -> BBox:
        return self.predict()

    def update(self, measurement: BBox) -> None:
        if measurement.width <= 0 or measurement.height <= 0:
            raise ValueError(
                f"degenerate measurement box: {measurement.width}x{measurement.height}"
            )
        z = _encode(measurement)
        h = max(abs(self.mean[3]), _MIN_SIZE)
        R = np.diag(np.full(4, (self.params.measurement_std * h) ** 2))
        H = self._observation
        innovation = z - H @ self.mean
        S = H @ self.covariance @ H.T + R
        try:
            K = self.covariance @ H.T @ np.linalg.inv(S)
        except np.linalg.LinAlgError:
            K = self.covariance @ H.T @ np.linalg.pinv(S, hermitian=True)
        self.mean = self.mean + K @ innovation
        I_KH = np.eye(self.ndim) - K @ H
        self.covariance = I_KH @ self.covariance @ I_KH.T + K @ R @ K.T
        self.covariance = (self.covariance + self.covariance.T) / 2.0
        self.mean[2] = max(self.mean[2], _MIN_SIZE)
        self.mean[3] = max(self.mean[3], _MIN_SIZE)

    def apply_cmc(self, warp: Warp2D) -> None:
        if warp.is_identity():
            return
        box = apply_warp(_decode(self.mean[:4]), warp)
        self.mean[:4] = _encode(box)
        A = warp.matrix()[:, :2]
        self.mean[4:6] = A @ self.mean[4:6]
        # Size velocities scale with the per-axis stretch of the linear part;
        # exact for scale/translation warps, a close approximation otherwise.
        self.mean[6] *= float(np.hypot(A[0, 0], A[1, 0]))
        self.mean[7] *= float(np.hypot(A[0, 1], A[1, 1]))

    def current_box(self) -> BBox:
        return _decode(self.mean[:4])


class LinearBoxModel:
    """Constant-displacement extrapolation from the last two boxes.

    A freshly spawned state predicts itself; once a second box is observed
    the per-frame corner displacement is repeated.
    """

    def __init__(self, box: BBox, params: KalmanParams | None = None) -> None:
        arr = box.to_array()
        self._prev = arr.copy()
        self._last = arr.copy()

    def predict(self) -> BBox:
        pred = self._last + (self._last - self._prev)
        self._prev = self._last
        self._last = pred
        return BBox.from_array(pred)

    def propagate(self) -> BBox:
        return self.predict()

    def update(self, measurement: BBox) -> None:
        if measurement.width <= 0 or measurement.height <= 0:
            raise ValueError(
                f"degenerate measurement box: {measurement.width}x{measurement.height}"
            )
        self._last = measurement.to_array()

    def apply_cmc(self, warp: Warp2D) -> None:
        if warp.is_identity():
            return
        self._prev = apply_warp(BBox.from_array(self._prev), warp).to_array()
        self._last = apply_warp(BBox.from_array(self._last), warp).to_array()

    def current_box(self) -> BBox:
        return BBox.from_array(self._last)


MOTION_MODELS = {"kalman": KalmanBoxModel, "linear": LinearBoxModel}


def make_motion_model(kind: str, box: BBox, params: KalmanParams | None = None):
    try:
        cls = MOTION_MODELS[kind]
    except KeyError:
        raise ValueError(
            f"unknown motion model {kind!r}; choose from {sorted(MOTION_MODELS)}"
        ) from None
    return cls(box, params)
