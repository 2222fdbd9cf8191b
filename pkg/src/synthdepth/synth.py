"""Analytic raycast renderer for procedural indoor scenes.

Scenes are a closed axis-aligned room containing axis-aligned boxes and
spheres. Every ray from inside the room hits something, so depth maps are
dense and strictly positive.

World frame is z-up. Camera poses map camera frame (x right, y down,
z forward) to world. LiDAR sensor frame is x forward, y left, z up.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Literal, Union

import numpy as np

from .depthio import DepthMap, PointCloud
from .errors import ConfigurationError, FormatError, ValidationError
from .geometry import CameraModel, RigidTransform, fov_to_focal

DepthMode = Literal["planar", "perspective"]

EPS = 1e-9
AMBIENT = 0.1
WALL_ALBEDO = (0.8, 0.8, 0.8)

# LiDAR axes (x fwd, y left, z up) expressed in camera axes (x right, y down, z fwd)
LIDAR_TO_CAMERA_AXES = np.array([[0.0, -1.0, 0.0],
                                 [0.0, 0.0, -1.0],
                                 [1.0, 0.0, 0.0]])


def _vec3(v, name) -> np.ndarray:
    a = np.asarray(v, dtype=np.float64).reshape(-1)
    if a.shape != (3,) or not np.all(np.isfinite(a)):
        raise ValidationError(f"{name} must be 3 finite numbers")
    return a


@dataclass(frozen=True, eq=False)
class Box:
    min: np.ndarray
    max: np.ndarray
    albedo: np.ndarray = field(default_factory=lambda: np.array(WALL_ALBEDO))

    def __post_init__(self):
        lo, hi = _vec3(self.min, "box min"), _vec3(self.max, "box max")
        if np.any(hi <= lo):
            raise ValidationError("box extents must be positive")
        object.__setattr__(self, "min", lo)
        object.__setattr__(self, "max", hi)
        object.__setattr__(self, "albedo", np.clip(_vec3(self.albedo, "albedo"), 0.0, 1.0))

    def contains(self, p, strict: bool = True) -> bool:
        p = np.asarray(p, dtype=np.float64)
        if strict:
            return bool(np.all(p > self.min) and np.all(p < self.max))
        return bool(np.all(p >= self.min) and np.all(p <= self.max))

    def to_dict(self) -> dict:
        return {"type": "box", "min": self.min.tolist(), "max": self.max.tolist(),
                "albedo": self.albedo.tolist()}


@dataclass(frozen=True, eq=False)
class Sphere:
    center: np.ndarray
    radius: float
    albedo: np.ndarray = field(default_factory=lambda: np.array(WALL_ALBEDO))

    def __post_init__(self):
        object.__setattr__(self, "center", _vec3(self.center, "sphere center"))
        if not (math.isfinite(self.radius) and self.radius > 0):
            raise ValidationError("sphere radius must be positive")
        object.__setattr__(self, "radius", float(self.radius))
        object.__setattr__(self, "albedo", np.clip(_vec3(self.albedo, "albedo"), 0.0, 1.0))

    def contains(self, p, strict: bool = True) -> bool:
        d = float(np.linalg.norm(np.asarray(p, dtype=np.float64) - self.center))
        return d < self.radius if strict else d <= self.radius

    def to_dict(self) -> dict:
        return {"type": "sphere", "center": self.center.tolist(), "radius": self.radius,
                "albedo": self.albedo.tolist()}


Primitive = Union[Box, Sphere]


@dataclass(frozen=True, eq=False)
class Scene:
    room: Box
    primitives: tuple = ()
    light: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        object.__setattr__(self, "primitives", tuple(self.primitives))
        object.__setattr__(self, "light", _vec3(self.light, "light"))
        for p in self.primitives:
            if isinstance(p, Box):
                inside = np.all(p.min > self.room.min) and np.all(p.max < self.room.max)
            elif isinstance(p, Sphere):
                inside = (np.all(p.center - p.radius > self.room.min)
                          and np.all(p.center + p.radius < self.room.max))
            else:
                raise ValidationError(f"unknown primitive {p!r}")
            if not inside:
                raise ValidationError("primitives must lie strictly inside the room")

    def check_viewpoint(self, origin) -> None:
        """Raise ConfigurationError unless ``origin`` is in free space."""
        if not self.room.contains(origin):
            raise ConfigurationError(f"sensor at {np.asarray(origin).tolist()} is outside the room")
        for p in self.primitives:
            if p.contains(origin, strict=False):
                raise ConfigurationError(f"sensor at {np.asarray(origin).tolist()} is inside a primitive")

    def to_dict(self) -> dict:
        return {"room": {"min": self.room.min.tolist(), "max": self.room.max.tolist(),
                         "albedo": self.room.albedo.tolist()},
                "primitives": [p.to_dict() for p in self.primitives],
                "light": self.light.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "Scene":
        try:
            room = d["room"]
            prims = []
            for p in d.get("primitives", []):
                albedo = p.get("albedo", WALL_ALBEDO)
                if p["type"] == "box":
                    prims.append(Box(p["min"], p["max"], albedo))
                elif p["type"] == "sphere":
                    prims.append(Sphere(p["center"], p["radius"], albedo))
                else:
                    raise FormatError(f"unknown primitive type {p['type']!r}")
            return cls(Box(room["min"], room["max"], room.get("albedo", WALL_ALBEDO)),
                       prims, d["light"])
        except (KeyError, TypeError) as e:
            raise FormatError(f"malformed scene description: {e!r}") from e
        except ValidationError as e:
            raise FormatError(f"invalid scene: {e}") from e


def load_scene(path) -> Scene:
    try:
        return Scene.from_dict(json.loads(Path(path).read_text()))
    except json.JSONDecodeError as e:
        raise FormatError(f"{path}: not valid JSON ({e})") from e


@dataclass(frozen=True)
class LidarConfig:
    channels: int = 32
    elevation_min: float = -25.0
    elevation_max: float = 15.0
    azimuth_step: float = 0.2
    max_range: float = 100.0
    min_range: float = 0.3

    def __post_init__(self):
        if self.channels < 1:
            raise ValidationError("channels must be >= 1")
        if not self.elevation_min < self.elevation_max:
            raise ValidationError("elevation_min must be below elevation_max")
        if not (0 < self.azimuth_step <= 360):
            raise ValidationError("azimuth_step must lie in (0, 360]")
        if not (0 <= self.min_range < self.max_range):
            raise ValidationError("need 0 <= min_range < max_range")

    def elevations(self) -> np.ndarray:
        """Channel elevations in degrees, bottom first. One channel sits mid-band."""
        if self.channels == 1:
            return np.array([(self.elevation_min + self.elevation_max) / 2.0])
        return np.linspace(self.elevation_min, self.elevation_max, self.channels)

    def azimuths(self) -> np.ndarray:
        n = int(math.floor(360.0 / self.azimuth_step + 1e-9))
        return np.arange(max(n, 1)) * self.azimuth_step

    def directions(self) -> np.ndarray:
        """Unit ray directions in the sensor frame, channel-major, shape (C*A, 3)."""
        el = np.radians(self.elevations())[:, None]
        az = np.radians(self.azimuths())[None, :]
        d = np.stack(np.broadcast_arrays(np.cos(el) * np.cos(az), np.cos(el) * np.sin(az), np.sin(el)),
                     axis=-1)
        return d.reshape(-1, 3)


# -- intersection kernels ------------------------------------------------------

def _room_hit(room: Box, o, d):
    """Exit distance of rays starting inside the room, with inward normals."""
    with np.errstate(divide="ignore", invalid="ignore"):
        bound = np.where(d > 0, room.max, room.min)
        t_axis = np.where(d != 0, (bound - o) / d, np.inf)
    axis = np.argmin(t_axis, axis=1)
    t = t_axis[np.arange(len(d)), axis]
    n = np.zeros_like(d)
    n[np.arange(len(d)), axis] = -np.sign(d[np.arange(len(d)), axis])
    return t, n


def _box_hit(box: Box, o, d):
    with np.errstate(divide="ignore", invalid="ignore"):
        t1 = (box.min - o) / d
        t2 = (box.max - o) / d
    inside_slab = (o > box.min) & (o < box.max)
    zero = d == 0
    lo = np.where(zero, np.where(inside_slab, -np.inf, np.inf), np.minimum(t1, t2))
    hi = np.where(zero, np.where(inside_slab, np.inf, -np.inf), np.maximum(t1, t2))
    axis = np.argmax(lo, axis=1)
    rows = np.arange(len(d))
    t_near = lo[rows, axis]
    t_far = np.min(hi, axis=1)
    hit = (t_near <= t_far) & (t_near > EPS)
    t = np.where(hit, t_near, np.inf)
    n = np.zeros_like(d)
    n[rows, axis] = -np.sign(d[rows, axis])
    return t, n


def _sphere_hit(s: Sphere, o, d):
    oc = o - s.center
    a = np.einsum("ij,ij->i", d, d)
    half_b = d @ oc
    c = float(oc @ oc) - s.radius * s.radius
    disc = half_b * half_b - a * c
    ok = disc >= 0
    root = np.sqrt(np.where(ok, disc, 0.0))
    # roots as q/a and c/q avoid cancellation
    q = -(half_b + np.copysign(root, half_b))
    with np.errstate(divide="ignore", invalid="ignore"):
        r1 = q / a
        r2 = np.where(q != 0, c / q, np.inf)
    t_near = np.minimum(r1, r2)
    hit = ok & (t_near > EPS)
    return np.where(hit, t_near, np.inf)


def cast_rays(scene: Scene, origin, directions):
    """Nearest hit along each ray ``origin + t * direction`` from one origin.

    Directions need not be unit length; ``t`` is in units of the direction's
    length. Returns ``(t, normals, albedo)`` with unit normals facing the ray.
    """
    o = np.asarray(origin, dtype=np.float64).reshape(3)
    d = np.asarray(directions, dtype=np.float64).reshape(-1, 3)
    t, n = _room_hit(scene.room, o, d)
    albedo = np.broadcast_to(scene.room.albedo, d.shape).copy()
    winner = np.full(len(d), -1)
    for k, prim in enumerate(scene.primitives):
        if isinstance(prim, Box):
            tp, nb = _box_hit(prim, o, d)
        else:
            tp, nb = _sphere_hit(prim, o, d), None
        closer = tp < t
        if not closer.any():
            continue
        t = np.where(closer, tp, t)
        albedo[closer] = prim.albedo
        winner[closer] = k
        if nb is not None:
            n[closer] = nb[closer]
    for k, prim in enumerate(scene.primitives):
        if isinstance(prim, Sphere):
            m = winner == k
            if m.any():
                n[m] = (o + t[m, None] * d[m] - prim.center) / prim.radius
    return t, n, albedo


def _pixel_rays_camera(cam: CameraModel) -> np.ndarray:
    """Camera-frame ray through each pixel center, z component 1, shape (H*W, 3)."""
    u = (np.arange(cam.width) + 0.5 - cam.cx) / cam.fx
    v = (np.arange(cam.height) + 0.5 - cam.cy) / cam.fy
    uu, vv = np.meshgrid(u, v)
    return np.stack([uu.ravel(), vv.ravel(), np.ones(uu.size)], axis=1)


def _cast_chunked(scene, origin, dirs, threads: int):
    if threads <= 1 or len(dirs) < 2 * threads:
        return cast_rays(scene, origin, dirs)
    chunks = np.array_split(np.arange(len(dirs)), threads)
    with ThreadPoolExecutor(max_workers=threads) as ex:
        parts = list(ex.map(lambda ix: cast_rays(scene, origin, dirs[ix]), chunks))
    return tuple(np.concatenate([p[k] for p in parts]) for k in range(3))


def _camera_hits(scene, cam, pose, threads):
    origin = pose.translation
    scene.check_viewpoint(origin)
    rays_cam = _pixel_rays_camera(cam)
    rays_world = rays_cam @ pose.rotation.T
    t, n, albedo = _cast_chunked(scene, origin, rays_world, threads)
    return rays_cam, rays_world, t, n, albedo


def raycast_depth(scene: Scene, cam: CameraModel, pose: RigidTransform,
                  mode: DepthMode = "planar", threads: int = 1) -> DepthMap:
    """Render a depth map through pixel centers.

    ``planar`` records camera-frame z of the hit; ``perspective`` records the
    Euclidean distance from the camera center.
    """
    if mode not in ("planar", "perspective"):
        raise ValidationError(f"unknown depth mode {mode!r}")
    rays_cam, _, t, _, _ = _camera_hits(scene, cam, pose, threads)
    return DepthMap(_depth_from_t(rays_cam, t, mode).reshape(cam.height, cam.width))


def _depth_from_t(rays_cam, t, mode):
    # rays have unit z, so t is already the planar depth
    if mode == "planar":
        return t
    return t * np.linalg.norm(rays_cam, axis=1)


def _shade(scene, origin, rays_world, t, n, albedo):
    p = origin + t[:, None] * rays_world
    to_light = scene.light - p
    dist = np.linalg.norm(to_light, axis=1, keepdims=True)
    l_hat = to_light / np.where(dist > 0, dist, 1.0)
    lambert = np.maximum(0.0, np.einsum("ij,ij->i", n, l_hat))
    return np.clip(albedo * (lambert + AMBIENT)[:, None], 0.0, 1.0)


def render_rgb(scene: Scene, cam: CameraModel, pose: RigidTransform, threads: int = 1) -> np.ndarray:
    """Lambertian shading plus ambient, no shadows. Returns (H, W, 3) in [0, 1]."""
    _, rays_world, t, n, albedo = _camera_hits(scene, cam, pose, threads)
    rgb = _shade(scene, pose.translation, rays_world, t, n, albedo)
    return rgb.reshape(cam.height, cam.width, 3)


def simulate_lidar(scene: Scene, pose: RigidTransform, cfg: LidarConfig = LidarConfig(),
                   threads: int = 1) -> PointCloud:
    """Multi-ring LiDAR sweep. Points are in the sensor frame, channel-major."""
    origin = pose.translation
    scene.check_viewpoint(origin)
    dirs = cfg.directions()
    t, _, _ = _cast_chunked(scene, origin, dirs @ pose.rotation.T, threads)
    keep = (t >= cfg.min_range) & (t <= cfg.max_range)
    pts = dirs[keep] * t[keep, None]
    return PointCloud(pts, np.ones(len(pts)))


# -- synchronized capture ------------------------------------------------------

@dataclass(frozen=True, eq=False)
class Frame:
    rgb: np.ndarray
    depth_planar: DepthMap
    depth_perspective: DepthMap
    cloud: PointCloud
    camera: CameraModel
    extrinsics: RigidTransform  # LiDAR -> camera
    camera_pose: RigidTransform  # camera -> world

    def calibration(self) -> dict:
        from .geometry import calibration_to_dict
        d = calibration_to_dict(self.camera, self.extrinsics)
        d["camera_pose"] = self.camera_pose.to_dict()
        return d


def generate_frame(scene: Scene, cam: CameraModel, camera_pose: RigidTransform,
                   lidar_offset: RigidTransform, cfg: LidarConfig = LidarConfig(),
                   threads: int = 1) -> Frame:
    """Render RGB, both depth flavours and a LiDAR sweep from one rig pose.

    ``lidar_offset`` maps the LiDAR frame into the camera frame, i.e. it is
    the extrinsic calibration consumed by ``project_cloud``.
    """
    rays_cam, rays_world, t, n, albedo = _camera_hits(scene, cam, camera_pose, threads)
    planar = DepthMap(_depth_from_t(rays_cam, t, "planar").reshape(cam.height, cam.width))
    persp = DepthMap(_depth_from_t(rays_cam, t, "perspective").reshape(cam.height, cam.width))
    rgb = _shade(scene, camera_pose.translation, rays_world, t, n, albedo).reshape(cam.height, cam.width, 3)
    cloud = simulate_lidar(scene, camera_pose @ lidar_offset, cfg, threads)
    return Frame(rgb, planar, persp, cloud, cam, lidar_offset, camera_pose)


# -- poses and procedural content ----------------------------------------------

def look_at(eye, target, up=(0.0, 0.0, 1.0)) -> RigidTransform:
    """Camera -> world pose for a camera at ``eye`` looking at ``target``."""
    eye, target, up = (np.asarray(v, dtype=np.float64) for v in (eye, target, up))
    f = target - eye
    f = f / np.linalg.norm(f)
    r = np.cross(f, up)
    if np.linalg.norm(r) < 1e-9:
        raise ValidationError("view direction is parallel to the up vector")
    r = r / np.linalg.norm(r)
    down = np.cross(f, r)
    return RigidTransform(np.stack([r, down, f], axis=1), eye)


def lidar_mount(translation=(0.0, 0.0, 0.0)) -> RigidTransform:
    """LiDAR -> camera extrinsics for an upright LiDAR facing along the optical axis."""
    return RigidTransform(LIDAR_TO_CAMERA_AXES, translation)


def default_camera(width: int = 640, height: int = 480, fov_degrees: float = 57.0) -> CameraModel:
    """Square pixels; the FOV is taken as horizontal."""
    f = fov_to_focal(fov_degrees, width)
    return CameraModel(f, f, width / 2.0, height / 2.0, width, height)


def procedural_scene(seed: int) -> Scene:
    """A furnished room, reproducible from ``seed``. Fits inside a 10 m range gate."""
    rng = np.random.default_rng(seed)
    size = np.array([rng.uniform(4.0, 7.0), rng.uniform(3.0, 5.5), rng.uniform(2.5, 3.2)])
    room = Box(np.zeros(3), size, rng.uniform(0.5, 0.9, 3))
    prims: list[Primitive] = []
    for _ in range(int(rng.integers(2, 5))):
        ext = np.array([rng.uniform(0.4, 1.2), rng.uniform(0.4, 1.2), rng.uniform(0.4, 1.4)])
        lo = np.array([rng.uniform(0.1, size[0] - ext[0] - 0.1),
                       rng.uniform(0.1, size[1] - ext[1] - 0.1), 0.05])
        prims.append(Box(lo, lo + ext, rng.uniform(0.2, 1.0, 3)))
    for _ in range(int(rng.integers(1, 3))):
        r = rng.uniform(0.2, 0.5)
        c = np.array([rng.uniform(r + 0.1, size[0] - r - 0.1),
                      rng.uniform(r + 0.1, size[1] - r - 0.1),
                      rng.uniform(r + 0.1, size[2] - r - 0.1)])
        prims.append(Sphere(c, r, rng.uniform(0.2, 1.0, 3)))
    light = np.array([size[0] / 2, size[1] / 2, size[2] - 0.05])
    return Scene(room, prims, light)


def random_camera_pose(scene: Scene, rng: np.random.Generator, clearance: float = 0.3,
                       max_tries: int = 1000) -> RigidTransform:
    """Pose in free space with ``clearance`` meters to every surface."""
    lo, hi = scene.room.min + clearance, scene.room.max - clearance
    for _ in range(max_tries):
        eye = rng.uniform(lo, hi)
        eye[2] = rng.uniform(max(lo[2], 0.5), min(hi[2], 2.0))
        if any(_near(p, eye, clearance) for p in scene.primitives):
            continue
        target = rng.uniform(scene.room.min, scene.room.max)
        target[2] = rng.uniform(0.2, scene.room.max[2] - 0.2)
        f = target - eye
        if np.linalg.norm(f) < 0.5 or abs(f[2]) > 0.8 * np.linalg.norm(f):
            continue
        return look_at(eye, target)
    raise ConfigurationError("could not find a free camera pose")


def _near(p: Primitive, x, margin: float) -> bool:
    if isinstance(p, Box):
        return bool(np.all(x > p.min - margin) and np.all(x < p.max + margin))
    return float(np.linalg.norm(x - p.center)) < p.radius + margin


def load_pose(path) -> RigidTransform:
    """Camera -> world pose from JSON: rotation/translation or eye/target."""
    try:
        d = json.loads(Path(path).read_text())
    except json.JSONDecodeError as e:
        raise FormatError(f"{path}: not valid JSON ({e})") from e
    try:
        if "eye" in d:
            return look_at(d["eye"], d["target"], d.get("up", (0.0, 0.0, 1.0)))
        return RigidTransform(d["rotation"], d["translation"])
    except (KeyError, TypeError, ValueError) as e:
        raise FormatError(f"{path}: malformed pose ({e})") from e
