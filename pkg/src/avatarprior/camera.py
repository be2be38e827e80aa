"""Pinhole cameras, the flattened 25-value conditioning vector, and ray generation.

Conventions used throughout the package:

* Camera frame is right-handed with +X right, +Y up, and the camera looking
  along **-Z** (OpenGL style).
* ``Extrinsics`` stores the **camera-to-world** transform: the rotation
  columns are the camera axes expressed in world coordinates and the
  translation is the camera center.  This makes ray origins trivially equal
  to the translation.
* ``Intrinsics`` are normalized by image size, so the same pose renders at
  any resolution.  Pixel (row ``i``, column ``j``) has normalized image
  coordinates ``u = (j + 0.5) / W`` (rightward) and ``v = (i + 0.5) / H``
  (downward).
* The flattened conditioning vector is the row-major 4x4 homogeneous
  extrinsic matrix (16 values) followed by the row-major 3x3 intrinsic
  matrix (9 values); raw values, no whitening.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateBasisError, ShapeError, ValidationError

ROTATION_TOL = 1e-6

# Camera file: one JSON object per line with exactly these fields.
CAMERA_FILE_FIELDS = ("frame_id", "K", "E")


@dataclass(frozen=True)
class Intrinsics:
    """Normalized pinhole intrinsics (focal lengths and principal point in image units)."""

    fx: float
    fy: float
    cx: float = 0.5
    cy: float = 0.5
    skew: float = 0.0

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValidationError(f"focal lengths must be positive, got fx={self.fx}, fy={self.fy}")
        if not (0.0 <= self.cx <= 1.0 and 0.0 <= self.cy <= 1.0):
            raise ValidationError(f"principal point must lie in [0,1]^2, got ({self.cx}, {self.cy})")

    def matrix(self):
        """3x3 intrinsic matrix K."""
        return np.array(
            [
                [self.fx, self.skew, self.cx],
                [0.0, self.fy, self.cy],
                [0.0, 0.0, 1.0],
            ]
        )

    @staticmethod
    def from_matrix(k):
        k = np.asarray(k, dtype=float)
        if k.shape != (3, 3):
            raise ShapeError(f"intrinsic matrix must be 3x3, got {k.shape}")
        return Intrinsics(fx=k[0, 0], fy=k[1, 1], cx=k[0, 2], cy=k[1, 2], skew=k[0, 1])


@dataclass(frozen=True)
class Extrinsics:
    """Camera-to-world rotation and camera center."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        rot = np.asarray(self.rotation, dtype=float)
        t = np.asarray(self.translation, dtype=float).reshape(-1)
        if rot.shape != (3, 3):
            raise ShapeError(f"rotation must be 3x3, got {rot.shape}")
        if t.shape != (3,):
            raise ShapeError(f"translation must be a 3-vector, got {t.shape}")
        if np.max(np.abs(rot.T @ rot - np.eye(3))) > ROTATION_TOL:
            raise ValidationError("rotation is not orthonormal within 1e-6")
        if abs(np.linalg.det(rot) - 1.0) > ROTATION_TOL:
            raise ValidationError("rotation determinant is not +1 within 1e-6")
        object.__setattr__(self, "rotation", rot)
        object.__setattr__(self, "translation", t)

    def matrix(self):
        """4x4 homogeneous camera-to-world matrix."""
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m

    @staticmethod
    def from_matrix(e):
        e = np.asarray(e, dtype=float)
        if e.shape != (4, 4):
            raise ShapeError(f"extrinsic matrix must be 4x4, got {e.shape}")
        if np.max(np.abs(e[3] - np.array([0.0, 0.0, 0.0, 1.0]))) > ROTATION_TOL:
            raise ValidationError("bottom row of extrinsic matrix must be [0,0,0,1]")
        return Extrinsics(rotation=e[:3, :3], translation=e[:3, 3])


@dataclass(frozen=True)
class CameraPose:
    intrinsics: Intrinsics
    extrinsics: Extrinsics


@dataclass(frozen=True)
class RayBundle:
    """One ray per pixel: origins and unit directions in world coordinates."""

    origins: np.ndarray
    directions: np.ndarray
    near: float
    far: float

    def __post_init__(self):
        o = np.asarray(self.origins, dtype=float)
        d = np.asarray(self.directions, dtype=float)
        if o.ndim != 3 or o.shape[-1] != 3 or o.shape != d.shape:
            raise ShapeError(f"origins/directions must both be HxWx3, got {o.shape} and {d.shape}")
        norms = np.linalg.norm(d, axis=-1)
        if np.max(np.abs(norms - 1.0)) > 1e-6:
            raise ValidationError("ray directions must be unit length within 1e-6")
        if not (0.0 <= self.near < self.far):
            raise ValidationError(f"need 0 <= near < far, got near={self.near}, far={self.far}")
        object.__setattr__(self, "origins", o)
        object.__setattr__(self, "directions", d)

    @property
    def shape(self):
        return self.origins.shape[:2]


def flatten_camera(pose: CameraPose) -> np.ndarray:
    """Concatenate the row-major 4x4 extrinsic and 3x3 intrinsic matrices (25 values)."""
    return np.concatenate(
        [pose.extrinsics.matrix().reshape(16), pose.intrinsics.matrix().reshape(9)]
    )


def unflatten_camera(vec) -> CameraPose:
    """Inverse of :func:`flatten_camera`."""
    vec = np.asarray(vec, dtype=float).reshape(-1)
    if vec.shape != (25,):
        raise ShapeError(f"flattened camera must have 25 values, got {vec.shape}")
    return CameraPose(
        intrinsics=Intrinsics.from_matrix(vec[16:].reshape(3, 3)),
        extrinsics=Extrinsics.from_matrix(vec[:16].reshape(4, 4)),
    )


def generate_rays(pose: CameraPose, height: int, width: int, near: float, far: float) -> RayBundle:
    """Back-project every pixel center into a world-space ray.

    Directions are unit normalized; all origins equal the camera center.
    """
    if height < 1 or width < 1:
        raise ValidationError(f"image size must be at least 1x1, got {height}x{width}")
    intr = pose.intrinsics
    rows = (np.arange(height) + 0.5) / height
    cols = (np.arange(width) + 0.5) / width
    v, u = np.meshgrid(rows, cols, indexing="ij")
    # Invert u = fx*x' + skew*y_img + cx, v = fy*y_img + cy with y_img = -y'/1.
    y_img = (v - intr.cy) / intr.fy
    x_cam = (u - intr.cx - intr.skew * y_img) / intr.fx
    dirs_cam = np.stack([x_cam, -y_img, -np.ones_like(x_cam)], axis=-1)
    dirs_world = dirs_cam @ pose.extrinsics.rotation.T
    dirs_world /= np.linalg.norm(dirs_world, axis=-1, keepdims=True)
    origins = np.broadcast_to(pose.extrinsics.translation, dirs_world.shape).copy()
    return RayBundle(origins=origins, directions=dirs_world, near=float(near), far=float(far))


def look_at(eye, target, up=(0.0, 1.0, 0.0)) -> Extrinsics:
    """Camera-to-world extrinsics with the forward (-Z) axis pointing at ``target``."""
    eye = np.asarray(eye, dtype=float).reshape(3)
    target = np.asarray(target, dtype=float).reshape(3)
    up = np.asarray(up, dtype=float).reshape(3)
    forward = target - eye
    fn = np.linalg.norm(forward)
    if fn < 1e-12:
        raise DegenerateBasisError("eye and target coincide")
    forward = forward / fn
    right = np.cross(forward, up)
    rn = np.linalg.norm(right)
    if rn < 1e-9:
        raise DegenerateBasisError("up vector is parallel to the viewing direction")
    right = right / rn
    true_up = np.cross(right, forward)
    rotation = np.stack([right, true_up, -forward], axis=1)
    return Extrinsics(rotation=rotation, translation=eye)


def orbit_pose(intrinsics: Intrinsics, azimuth: float, elevation: float, radius: float,
               target=(0.0, 0.0, 0.0)) -> CameraPose:
    """Pose on a sphere around ``target``; azimuth 0 looks down -Z from +Z side."""
    target = np.asarray(target, dtype=float).reshape(3)
    eye = target + radius * np.array(
        [
            np.cos(elevation) * np.sin(azimuth),
            np.sin(elevation),
            np.cos(elevation) * np.cos(azimuth),
        ]
    )
    return CameraPose(intrinsics=intrinsics, extrinsics=look_at(eye, target))


def save_cameras(path, poses: dict[int, CameraPose]) -> None:
    """Write a line-delimited camera file with fields {frame_id, K, E}."""
    with open(path, "w") as fh:
        for frame_id in sorted(poses):
            pose = poses[frame_id]
            record = {
                "frame_id": int(frame_id),
                "K": pose.intrinsics.matrix().reshape(9).tolist(),
                "E": pose.extrinsics.matrix().reshape(16).tolist(),
            }
            fh.write(json.dumps(record) + "\n")


def load_cameras(path) -> dict[int, CameraPose]:
    poses = {}
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            record = json.loads(line)
            poses[int(record["frame_id"])] = CameraPose(
                intrinsics=Intrinsics.from_matrix(np.array(record["K"]).reshape(3, 3)),
                extrinsics=Extrinsics.from_matrix(np.array(record["E"]).reshape(4, 4)),
            )
    return poses
