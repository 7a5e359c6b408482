"""Pinhole camera model, point-cloud lifting, and SE(3) arithmetic.

Conventions:
    - Pixel coordinates (u, v): u along image width (columns), v along
      height (rows). Pixel centers sit at integer coordinates.
    - Camera frame: x right, y down, z forward (into the scene). The world
      frame defaults to the camera frame of the observation; a configurable
      rigid extrinsic maps camera to world where needed.
    - Depth is metric (meters) along the camera z axis. Invalid depth is
      stored as 0 with valid=False and is never interpolated.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import BehindCamera, EmptySelection, ShapeMismatch

# Construction rejects rotations with more orthonormality drift than this.
ROTATION_ORTHO_TOL = 1e-6
# compose() re-orthonormalizes the product when drift exceeds this.
COMPOSE_DRIFT_TOL = 1e-12


@dataclass(frozen=True)
class CameraIntrinsics:
    """Pinhole intrinsics: focal lengths, principal point, image size (pixels)."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError(f"focal lengths must be positive, got fx={self.fx}, fy={self.fy}")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError(
                f"principal point ({self.cx}, {self.cy}) outside "
                f"{self.width}x{self.height} image"
            )

    def to_dict(self):
        return {
            "fx": self.fx, "fy": self.fy, "cx": self.cx, "cy": self.cy,
            "width": self.width, "height": self.height,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(fx=d["fx"], fy=d["fy"], cx=d["cx"], cy=d["cy"],
                   width=int(d["width"]), height=int(d["height"]))


@dataclass
class RgbdFrame:
    """One RGBD observation: H x W x 3 color in [0,1], H x W metric depth, validity mask."""

    rgb: np.ndarray
    depth: np.ndarray
    valid: np.ndarray

    def __post_init__(self):
        self.rgb = np.asarray(self.rgb, dtype=np.float64)
        self.depth = np.asarray(self.depth, dtype=np.float64)
        self.valid = np.asarray(self.valid, dtype=bool)
        h, w = self.depth.shape
        if self.rgb.shape != (h, w, 3):
            raise ShapeMismatch(f"rgb shape {self.rgb.shape} does not match depth {self.depth.shape}")
        if self.valid.shape != (h, w):
            raise ShapeMismatch(f"valid shape {self.valid.shape} does not match depth {self.depth.shape}")
        if np.any(self.depth[self.valid] <= 0):
            raise ValueError("valid pixels must have positive depth")

    @property
    def shape(self):
        return self.depth.shape


@dataclass
class PartMask:
    """Boolean H x W selection of the target object part."""

    mask: np.ndarray

    def __post_init__(self):
        self.mask = np.asarray(self.mask, dtype=bool)
        if self.mask.ndim != 2:
            raise ShapeMismatch(f"mask must be 2-D, got shape {self.mask.shape}")

    @property
    def pixel_count(self) -> int:
        return int(self.mask.sum())


@dataclass
class PointCloud:
    """M x 3 points (meters) with the M x 2 integer source pixels they came from."""

    points: np.ndarray
    source_pixels: np.ndarray

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64)
        self.source_pixels = np.asarray(self.source_pixels)
        if self.points.ndim != 2 or self.points.shape[1] != 3:
            raise ShapeMismatch(f"points must be Mx3, got {self.points.shape}")
        if self.points.shape[0] < 1:
            raise ValueError("a point cloud needs at least one point")
        if self.source_pixels.shape != (self.points.shape[0], 2):
            raise ShapeMismatch(
                f"source_pixels shape {self.source_pixels.shape} does not match M={self.points.shape[0]}"
            )
        if not np.all(np.isfinite(self.points)):
            raise ValueError("point coordinates must be finite")

    def __len__(self):
        return self.points.shape[0]


def _check_rotation(rotation: np.ndarray) -> np.ndarray:
    rotation = np.asarray(rotation, dtype=np.float64)
    if rotation.shape != (3, 3):
        raise ShapeMismatch(f"rotation must be 3x3, got {rotation.shape}")
    drift = np.linalg.norm(rotation.T @ rotation - np.eye(3))
    if drift > ROTATION_ORTHO_TOL:
        raise ValueError(f"rotation is not orthonormal (||R^T R - I||_F = {drift:.3e})")
    if np.linalg.det(rotation) < 0:
        raise ValueError("rotation has negative determinant (reflection)")
    return rotation


def orthonormalize(rotation: np.ndarray) -> np.ndarray:
    """Nearest rotation matrix by polar decomposition (Frobenius projection)."""
    u, _, vt = np.linalg.svd(np.asarray(rotation, dtype=np.float64))
    r = u @ vt
    if np.linalg.det(r) < 0:
        u[:, -1] = -u[:, -1]
        r = u @ vt
    return r


@dataclass(frozen=True)
class RigidTransform:
    """SE(3) element: 3x3 rotation plus 3-vector translation (meters).

    Construction rejects matrices that are not proper rotations
    (orthonormality drift above 1e-6 or negative determinant).
    """

    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        object.__setattr__(self, "rotation", _check_rotation(self.rotation))
        t = np.asarray(self.translation, dtype=np.float64).reshape(3)
        if not np.all(np.isfinite(t)):
            raise ValueError("translation must be finite")
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> "RigidTransform":
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_matrix(cls, m: np.ndarray) -> "RigidTransform":
        m = np.asarray(m, dtype=np.float64)
        if m.shape != (4, 4):
            raise ShapeMismatch(f"expected 4x4 matrix, got {m.shape}")
        return cls(m[:3, :3], m[:3, 3])

    def as_matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m

    def apply(self, points: np.ndarray) -> np.ndarray:
        """Map points (3,) or (M,3) through R p + t."""
        points = np.asarray(points, dtype=np.float64)
        return points @ self.rotation.T + self.translation

    def inverse(self) -> "RigidTransform":
        return RigidTransform(self.rotation.T, -self.rotation.T @ self.translation)


def compose(t_a: RigidTransform, t_b: RigidTransform) -> RigidTransform:
    """Composition applying t_b first, then t_a: (t_a o t_b)(p) = t_a(t_b(p)).

    The product rotation is re-orthonormalized when accumulated drift
    exceeds 1e-12, so long composition chains stay on SO(3).
    """
    r = t_a.rotation @ t_b.rotation
    if np.linalg.norm(r.T @ r - np.eye(3)) > COMPOSE_DRIFT_TOL:
        r = orthonormalize(r)
    return RigidTransform(r, t_a.rotation @ t_b.translation + t_a.translation)


def rotation_angle(rotation: np.ndarray) -> float:
    """Rotation angle in radians via atan2(|skew part|, trace part).

    Well-conditioned near 0 where the arccos form loses half the digits.
    """
    r = np.asarray(rotation)
    skew = np.array([r[2, 1] - r[1, 2], r[0, 2] - r[2, 0], r[1, 0] - r[0, 1]])
    s = np.linalg.norm(skew) / 2.0
    c = (np.trace(r) - 1.0) / 2.0
    return float(np.arctan2(s, c))


def transform_distance(t_a: RigidTransform, t_b: RigidTransform):
    """(rotation angle in radians, translation distance in meters) between two transforms."""
    return (
        rotation_angle(t_a.rotation.T @ t_b.rotation),
        float(np.linalg.norm(t_a.translation - t_b.translation)),
    )


def lift_pixels(u, v, depth, intrinsics: CameraIntrinsics) -> np.ndarray:
    """Back-project pixels (u, v) with depth d to camera-frame 3D points.

        x = (u - cx) * d / fx,  y = (v - cy) * d / fy,  z = d

    u, v may be sub-pixel; every consumer of this formula shares this one
    implementation so lifted points agree bit-for-bit across modules.
    """
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    depth = np.asarray(depth, dtype=np.float64)
    x = (u - intrinsics.cx) * depth / intrinsics.fx
    y = (v - intrinsics.cy) * depth / intrinsics.fy
    return np.stack([x, y, depth], axis=-1)


def unproject(frame: RgbdFrame, mask: PartMask, intrinsics: CameraIntrinsics) -> PointCloud:
    """Lift every masked pixel with valid depth to a 3D point.

    Points are emitted in row-major pixel scan order. Masked pixels whose
    depth is invalid are dropped, not interpolated.

    Raises:
        EmptySelection: no masked pixel has valid depth.
    """
    h, w = frame.shape
    if mask.mask.shape != (h, w):
        raise ShapeMismatch(f"mask shape {mask.mask.shape} does not match frame {frame.shape}")
    if (h, w) != (intrinsics.height, intrinsics.width):
        raise ShapeMismatch(
            f"frame {h}x{w} does not match intrinsics {intrinsics.height}x{intrinsics.width}"
        )
    select = mask.mask & frame.valid
    vs, us = np.nonzero(select)
    if vs.size == 0:
        raise EmptySelection("no masked pixel has valid depth")
    points = lift_pixels(us, vs, frame.depth[vs, us], intrinsics)
    return PointCloud(points, np.stack([us, vs], axis=1))


def project(point: np.ndarray, intrinsics: CameraIntrinsics):
    """Project camera-frame point(s) to (u, v, depth).

        u = fx * x / z + cx,  v = fy * y / z + cy,  depth = z

    Accepts a single 3-vector or an (M, 3) array.

    Raises:
        BehindCamera: any point has z <= 0.
    """
    point = np.asarray(point, dtype=np.float64)
    single = point.ndim == 1
    pts = np.atleast_2d(point)
    z = pts[:, 2]
    if np.any(z <= 0):
        raise BehindCamera("cannot project points with z <= 0")
    u = intrinsics.fx * pts[:, 0] / z + intrinsics.cx
    v = intrinsics.fy * pts[:, 1] / z + intrinsics.cy
    if single:
        return float(u[0]), float(v[0]), float(z[0])
    return u, v, z


def to_homogeneous(cloud: PointCloud) -> np.ndarray:
    """M x 4 homogeneous coordinates: each point p becomes (p, 1)."""
    m = cloud.points.shape[0]
    return np.hstack([cloud.points, np.ones((m, 1))])


def apply_transform(transform: RigidTransform, cloud: PointCloud) -> PointCloud:
    """Map every cloud point through R p + t; source pixels are preserved."""
    return PointCloud(transform.apply(cloud.points), cloud.source_pixels.copy())
