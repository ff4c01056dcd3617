"""Pinhole cameras, 2D heatmaps, and heatmap-to-voxel aggregation.

Coordinate conventions:

* World frame: right-handed, millimeters.
* Camera frame: standard computer vision (x right, y down, z forward
  along the optical axis). A world point p maps to the camera frame as
  ``p_cam = R @ p + t``; it is visible only when ``p_cam[2] > 0``.
* Image frame: pixels, origin at the top-left; ``u`` grows to the right
  and ``v`` downwards. Projection is ``u = fx * x/z + cx``,
  ``v = fy * y/z + cy``. No lens distortion model.

Heatmap sampling is bilinear with zero outside ``[0, W-1] x [0, H-1]``.
A camera "observes" a voxel when the voxel center is in front of the
camera and its projection point lies inside that rectangle; the per-voxel
feature is the mean heatmap score over observing cameras (zero when no
camera observes the voxel).
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .grid import GridSpec, unflatten_volume


@dataclass(frozen=True)
class CameraCalib:
    """Calibrated pinhole camera: intrinsics in pixels, extrinsics world->camera."""

    fx: float
    fy: float
    cx: float
    cy: float
    rotation: np.ndarray
    translation: np.ndarray
    image_width: int
    image_height: int

    def __post_init__(self):
        object.__setattr__(self, "rotation", np.asarray(self.rotation, dtype=np.float64).reshape(3, 3))
        object.__setattr__(self, "translation", np.asarray(self.translation, dtype=np.float64).reshape(3))
        if self.fx <= 0 or self.fy <= 0:
            raise ConfigError(f"focal lengths must be positive, got fx={self.fx}, fy={self.fy}")
        if self.image_width <= 0 or self.image_height <= 0:
            raise ConfigError("image dimensions must be positive")
        err = np.abs(self.rotation.T @ self.rotation - np.eye(3)).max()
        if err > 1e-9:
            raise ConfigError(f"rotation is not orthonormal (max |R^T R - I| = {err:.3e})")

    def to_json(self):
        return {
            "fx": self.fx,
            "fy": self.fy,
            "cx": self.cx,
            "cy": self.cy,
            "R": [float(v) for v in self.rotation.reshape(-1)],
            "t": [float(v) for v in self.translation],
            "width": self.image_width,
            "height": self.image_height,
        }

    @staticmethod
    def from_json(obj):
        try:
            return CameraCalib(
                fx=float(obj["fx"]),
                fy=float(obj["fy"]),
                cx=float(obj["cx"]),
                cy=float(obj["cy"]),
                rotation=np.asarray(obj["R"], dtype=np.float64).reshape(3, 3),
                translation=obj["t"],
                image_width=int(obj["width"]),
                image_height=int(obj["height"]),
            )
        except KeyError as e:
            raise ConfigError(f"camera entry missing field {e}") from e


@dataclass(frozen=True)
class Heatmap:
    """Per-joint 2D confidence maps, shape (J, H, W), values in [0, 1]."""

    values: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "values", np.asarray(self.values))
        if self.values.ndim != 3 or min(self.values.shape) < 1:
            raise ValueError(f"heatmap values must be (J, H, W), got shape {self.values.shape}")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("heatmap contains non-finite values")
        if self.values.min() < 0.0 or self.values.max() > 1.0:
            raise ValueError("heatmap values must lie in [0, 1]")

    @property
    def n_joints(self):
        return self.values.shape[0]

    @property
    def height(self):
        return self.values.shape[1]

    @property
    def width(self):
        return self.values.shape[2]


def project_point(cam: CameraCalib, world_point):
    """Project a world point (mm) to pixel (u, v); None when at or behind the camera.

    The projection is returned even when it falls outside the image
    rectangle; bounds are the sampler's concern.
    """
    p = np.asarray(world_point, dtype=np.float64)
    if not np.all(np.isfinite(p)):
        raise ValueError(f"world point must be finite, got {world_point}")
    p_cam = cam.rotation @ p + cam.translation
    z = p_cam[2]
    if z <= 0:
        return None
    u = cam.fx * p_cam[0] / z + cam.cx
    v = cam.fy * p_cam[1] / z + cam.cy
    return (float(u), float(v))


def sample_heatmap(hm: Heatmap, joint: int, pixel):
    """Bilinear heatmap score at a (u, v) pixel; 0.0 outside [0, W-1] x [0, H-1]."""
    if joint < 0 or joint >= hm.n_joints:
        raise IndexError(f"joint {joint} out of range for {hm.n_joints} joints")
    u, v = float(pixel[0]), float(pixel[1])
    w, h = hm.width, hm.height
    if not (0.0 <= u <= w - 1 and 0.0 <= v <= h - 1):
        return 0.0
    x0 = int(np.floor(u))
    y0 = int(np.floor(v))
    x1 = min(x0 + 1, w - 1)
    y1 = min(y0 + 1, h - 1)
    wx = u - x0
    wy = v - y0
    plane = hm.values[joint]
    top = (1 - wx) * plane[y0, x0] + wx * plane[y0, x1]
    bottom = (1 - wx) * plane[y1, x0] + wx * plane[y1, x1]
    return float((1 - wy) * top + wy * bottom)


def _bilinear_batch(values, u, v):
    """Sample all channels of (J, H, W) `values` at in-bounds pixel arrays. Returns (J, n)."""
    _, h, w = values.shape
    x0 = np.floor(u).astype(np.int64)
    y0 = np.floor(v).astype(np.int64)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    wx = u - x0
    wy = v - y0
    top = (1 - wx) * values[:, y0, x0] + wx * values[:, y0, x1]
    bottom = (1 - wx) * values[:, y1, x0] + wx * values[:, y1, x1]
    return (1 - wy) * top + wy * bottom


def aggregate_feature_volume(cams, heatmaps, grid: GridSpec, dtype=np.float64):
    """Average projected heatmap scores per voxel over the cameras observing it.

    Returns a (J, X, Y, Z) volume. Voxels observed by no camera get 0;
    the divisor is the per-voxel count of observing cameras.
    """
    if len(cams) == 0:
        raise ValueError("empty camera list")
    if len(cams) != len(heatmaps):
        raise ValueError(f"{len(cams)} cameras but {len(heatmaps)} heatmaps")
    n_joints = heatmaps[0].n_joints
    if any(hm.n_joints != n_joints for hm in heatmaps):
        raise ValueError("heatmaps disagree on joint count")

    centers = grid.voxel_centers().astype(dtype)
    n = centers.shape[0]
    accum = np.zeros((n_joints, n), dtype=dtype)
    count = np.zeros(n, dtype=dtype)

    for cam, hm in zip(cams, heatmaps):
        p_cam = centers @ cam.rotation.T.astype(dtype) + cam.translation.astype(dtype)
        depth = p_cam[:, 2]
        front = depth > 0
        u = np.zeros(n, dtype=dtype)
        v = np.zeros(n, dtype=dtype)
        u[front] = dtype(cam.fx) * p_cam[front, 0] / depth[front] + dtype(cam.cx)
        v[front] = dtype(cam.fy) * p_cam[front, 1] / depth[front] + dtype(cam.cy)
        observed = front.copy()
        observed[front] &= (
            (u[front] >= 0.0)
            & (u[front] <= hm.width - 1)
            & (v[front] >= 0.0)
            & (v[front] <= hm.height - 1)
        )
        if observed.any():
            vals = _bilinear_batch(hm.values.astype(dtype), u[observed], v[observed])
            accum[:, observed] += vals
            count[observed] += 1

    divisor = np.maximum(count, 1.0)
    seq = np.where(count > 0, accum / divisor, dtype(0.0))
    return unflatten_volume(seq.T, grid.resolution)


def load_cameras_json(source):
    """Read cameras from the calibration JSON document (path or parsed dict)."""
    if isinstance(source, (str, bytes)) or hasattr(source, "__fspath__"):
        with open(source) as f:
            doc = json.load(f)
    else:
        doc = source
    if "cameras" not in doc:
        raise ConfigError("calibration document has no 'cameras' list")
    return [CameraCalib.from_json(entry) for entry in doc["cameras"]]


def cameras_to_json(cams):
    return {"cameras": [cam.to_json() for cam in cams]}
