"""Pinhole camera model, rigid transforms and LiDAR-to-image projection.

Conventions
-----------
Camera frame: x right, y down, z forward along the optical axis.
Image frame: origin top-left, u along columns, v along rows, in pixels.
Extrinsics passed to the projection functions map LiDAR frame -> camera frame.

The projection divides by camera-frame z, so ``u, v`` are true pixel
coordinates and ``d`` is planar (z) depth, not ray length.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple, Optional

import numpy as np

from .errors import DomainError, FormatError, ValidationError

Z_MIN = 0.01  # meters
ORTHO_TOL = 1e-9
DIRECTION = "lidar_to_camera"


@dataclass(frozen=True)
class CameraModel:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        for name in ("fx", "fy", "cx", "cy"):
            v = getattr(self, name)
            if isinstance(v, bool) or not isinstance(v, (int, float, np.floating, np.integer)):
                raise ValidationError(f"{name} must be a number, got {v!r}")
            if not math.isfinite(v):
                raise ValidationError(f"{name} must be finite, got {v!r}")
            object.__setattr__(self, name, float(v))
        if self.fx <= 0 or self.fy <= 0:
            raise ValidationError("focal lengths must be positive")
        for name in ("width", "height"):
            v = getattr(self, name)
            if isinstance(v, bool) or not isinstance(v, (int, np.integer)) or v < 1:
                raise ValidationError(f"{name} must be a positive integer, got {v!r}")
            object.__setattr__(self, name, int(v))

    @classmethod
    def from_fov(cls, fov_degrees: float, width: int, height: int) -> "CameraModel":
        """Square-pixel camera with horizontal FOV and centered principal point."""
        f = fov_to_focal(fov_degrees, width)
        return cls(f, f, width / 2.0, height / 2.0, width, height)

    @property
    def K(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    def to_dict(self) -> dict:
        return {"fx": self.fx, "fy": self.fy, "cx": self.cx, "cy": self.cy,
                "width": self.width, "height": self.height}


class RigidTransform:
    """Rotation + translation, ``p -> R @ p + t``. Immutable."""

    __slots__ = ("_R", "_t")

    def __init__(self, rotation=None, translation=None, *, check: bool = True):
        R = np.eye(3) if rotation is None else np.array(rotation, dtype=np.float64).reshape(3, 3)
        t = np.zeros(3) if translation is None else np.array(translation, dtype=np.float64).reshape(3)
        if check:
            if not (np.all(np.isfinite(R)) and np.all(np.isfinite(t))):
                raise ValidationError("transform entries must be finite")
            if np.max(np.abs(R.T @ R - np.eye(3))) > ORTHO_TOL:
                raise ValidationError("rotation is not orthonormal")
            if abs(np.linalg.det(R) - 1.0) > ORTHO_TOL:
                raise ValidationError("rotation determinant must be +1")
        R.setflags(write=False)
        t.setflags(write=False)
        self._R = R
        self._t = t

    @property
    def rotation(self) -> np.ndarray:
        return self._R

    @property
    def translation(self) -> np.ndarray:
        return self._t

    @classmethod
    def identity(cls) -> "RigidTransform":
        return cls()

    @classmethod
    def from_matrix(cls, T) -> "RigidTransform":
        T = np.asarray(T, dtype=np.float64)
        return cls(T[:3, :3], T[:3, 3])

    def matrix(self) -> np.ndarray:
        T = np.eye(4)
        T[:3, :3] = self._R
        T[:3, 3] = self._t
        return T

    def compose(self, other: "RigidTransform") -> "RigidTransform":
        """``self ∘ other``: apply ``other`` first, then ``self``."""
        R = self._R @ other._R
        # re-orthonormalize to keep long chains inside ORTHO_TOL
        u, _, vt = np.linalg.svd(R)
        R = u @ vt
        return RigidTransform(R, self._R @ other._t + self._t)

    def __matmul__(self, other: "RigidTransform") -> "RigidTransform":
        return self.compose(other)

    def __eq__(self, other):
        if not isinstance(other, RigidTransform):
            return NotImplemented
        return np.array_equal(self._R, other._R) and np.array_equal(self._t, other._t)

    def __hash__(self):
        return hash((self._R.tobytes(), self._t.tobytes()))

    def __repr__(self):
        return f"RigidTransform(rotation={self._R.tolist()}, translation={self._t.tolist()})"

    def to_dict(self) -> dict:
        return {"rotation": [float(v) for v in self._R.ravel()],
                "translation": [float(v) for v in self._t]}


class Point3(NamedTuple):
    x: float
    y: float
    z: float


class ProjectedPoint(NamedTuple):
    u: float
    v: float
    d: float


def rotation_about_axis(axis, angle_rad: float) -> np.ndarray:
    """Rodrigues rotation matrix."""
    k = np.asarray(axis, dtype=np.float64)
    k = k / np.linalg.norm(k)
    K = np.array([[0, -k[2], k[1]], [k[2], 0, -k[0]], [-k[1], k[0], 0]])
    return np.eye(3) + math.sin(angle_rad) * K + (1 - math.cos(angle_rad)) * (K @ K)


def transform_point(t: RigidTransform, p) -> Point3:
    R = t._R
    tr = t._t
    x, y, z = float(p[0]), float(p[1]), float(p[2])
    # fixed evaluation order; project_cloud mirrors it exactly
    return Point3(
        float(R[0, 0]) * x + float(R[0, 1]) * y + float(R[0, 2]) * z + float(tr[0]),
        float(R[1, 0]) * x + float(R[1, 1]) * y + float(R[1, 2]) * z + float(tr[1]),
        float(R[2, 0]) * x + float(R[2, 1]) * y + float(R[2, 2]) * z + float(tr[2]),
    )


def transform_points(t: RigidTransform, pts) -> np.ndarray:
    """Vectorized transform_point over an (N, 3) array, same rounding."""
    P = np.asarray(pts, dtype=np.float64).reshape(-1, 3)
    R, tr = t._R, t._t
    x, y, z = P[:, 0], P[:, 1], P[:, 2]
    return np.stack([
        R[0, 0] * x + R[0, 1] * y + R[0, 2] * z + tr[0],
        R[1, 0] * x + R[1, 1] * y + R[1, 2] * z + tr[1],
        R[2, 0] * x + R[2, 1] * y + R[2, 2] * z + tr[2],
    ], axis=1)


def invert_transform(t: RigidTransform) -> RigidTransform:
    Rt = t._R.T.copy()
    return RigidTransform(Rt, -(Rt @ t._t))


def fov_to_focal(fov_degrees: float, extent_pixels: int) -> float:
    """Focal length in pixels for a field of view spanning ``extent_pixels``."""
    if not (0.0 < fov_degrees < 180.0):
        raise DomainError(f"fov must lie in (0, 180) degrees, got {fov_degrees}")
    if extent_pixels < 1:
        raise DomainError(f"extent must be >= 1 pixel, got {extent_pixels}")
    return (extent_pixels / 2.0) / math.tan(math.radians(fov_degrees) / 2.0)


def project_point(cam: CameraModel, extrinsics: RigidTransform, p,
                  z_min: float = Z_MIN) -> Optional[ProjectedPoint]:
    x, y, z = transform_point(extrinsics, p)
    if z <= z_min:
        return None
    u = cam.fx * x / z + cam.cx
    v = cam.fy * y / z + cam.cy
    if not (0.0 <= u < cam.width and 0.0 <= v < cam.height):
        return None
    return ProjectedPoint(u, v, z)


def project_cloud(cam: CameraModel, extrinsics: RigidTransform, cloud,
                  z_min: float = Z_MIN) -> list[tuple[int, ProjectedPoint]]:
    """Project every point of ``cloud`` (a PointCloud or (N, 3) array).

    Returns ``(index, ProjectedPoint)`` pairs in input order, dropping points
    behind the camera or outside the image.
    """
    xyz = getattr(cloud, "xyz", cloud)
    P = transform_points(extrinsics, xyz)
    if len(P) == 0:
        return []
    z = P[:, 2]
    ahead = z > z_min
    safe_z = np.where(ahead, z, 1.0)
    u = cam.fx * P[:, 0] / safe_z + cam.cx
    v = cam.fy * P[:, 1] / safe_z + cam.cy
    keep = ahead & (u >= 0.0) & (u < cam.width) & (v >= 0.0) & (v < cam.height)
    idx = np.flatnonzero(keep)
    return [(int(i), ProjectedPoint(float(u[i]), float(v[i]), float(z[i]))) for i in idx]


# -- calibration files -------------------------------------------------------

def _num(obj, key):
    v = obj.get(key)
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise FormatError(f"calibration field {key!r} must be a number")
    return v


def camera_from_dict(d: dict) -> CameraModel:
    if not isinstance(d, dict):
        raise FormatError("camera calibration must be a JSON object")
    w, h = d.get("width"), d.get("height")
    if isinstance(w, bool) or isinstance(h, bool) or not isinstance(w, int) or not isinstance(h, int):
        raise FormatError("width/height must be integers")
    try:
        return CameraModel(_num(d, "fx"), _num(d, "fy"), _num(d, "cx"), _num(d, "cy"), w, h)
    except ValidationError as e:
        raise FormatError(f"invalid camera calibration: {e}") from e


def extrinsics_from_dict(d: dict) -> RigidTransform:
    if not isinstance(d, dict):
        raise FormatError("extrinsic calibration must be a JSON object")
    if d.get("direction") != DIRECTION:
        raise FormatError(f'extrinsics must declare "direction": "{DIRECTION}"')
    rot, tr = d.get("rotation"), d.get("translation")
    if not (isinstance(rot, list) and len(rot) == 9 and isinstance(tr, list) and len(tr) == 3):
        raise FormatError("rotation must hold 9 numbers and translation 3")
    for v in rot + tr:
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            raise FormatError("rotation/translation entries must be numbers")
    try:
        return RigidTransform(rot, tr)
    except ValidationError as e:
        raise FormatError(f"invalid extrinsics: {e}") from e


def extrinsics_to_dict(t: RigidTransform) -> dict:
    d = t.to_dict()
    d["direction"] = DIRECTION
    return d


def load_calibration(path) -> tuple[CameraModel, RigidTransform]:
    """Read a calibration JSON.

    Accepts either one object holding both the intrinsic fields and the
    extrinsic block under ``"extrinsics"``, or ``{"camera": {...},
    "extrinsics": {...}}``.
    """
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as e:
        raise FormatError(f"{path}: not valid JSON ({e})") from e
    if not isinstance(doc, dict) or "extrinsics" not in doc:
        raise FormatError(f"{path}: missing extrinsics block")
    cam_block = doc.get("camera", doc)
    return camera_from_dict(cam_block), extrinsics_from_dict(doc["extrinsics"])


def calibration_to_dict(cam: CameraModel, extrinsics: RigidTransform) -> dict:
    return {"camera": cam.to_dict(), "extrinsics": extrinsics_to_dict(extrinsics)}
