"""Initial end-effector pose: grasp proposal on the part cloud plus
collision filtering against the whole scene.

Candidates come from a deterministic PCA heuristic: the gripper closes
along the part's minor principal axis and approaches along the camera ray,
a cone of directions around it, or one of the remaining principal axes.
Externally detected candidates can be injected instead; the filter only
ever selects from the list it is given.

Gripper frame convention: closing axis = +x, approach direction = -z
(the palm sits on the +z side). The collision model is three boxes (two
fingers and a palm) plus the corridor they sweep while closing in along
the approach direction over one finger length.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import AllCollide, NoFeasibleGrasp, TooFewPoints
from .geometry import PointCloud, RigidTransform

CONE_HALF_ANGLE = np.deg2rad(20.0)
CONE_DIRECTIONS = 8
WIDTH_CLEARANCE = 0.002
SUPPORT_BAND = 0.01  # meters along the approach axis counted as "support"


@dataclass
class GraspCandidate:
    pose: RigidTransform
    width: float
    score: float

    def __post_init__(self):
        if not self.width > 0:
            raise ValueError(f"grasp width must be positive, got {self.width}")


@dataclass
class GripperModel:
    """Parallel-jaw collision proxy, dimensions in meters."""

    finger_thickness: float = 0.02
    finger_depth: float = 0.01
    finger_length: float = 0.04
    palm_thickness: float = 0.015

    def boxes(self, width):
        """Axis-aligned boxes in the gripper frame as (lo, hi) corner pairs.

        Fingers straddle the opening at +-(width/2); the palm closes the
        +z end. Each box's +z face is extended by one finger length to
        cover the approach corridor.
        """
        half_l = self.finger_length / 2.0
        sweep = self.finger_length
        y = self.finger_depth / 2.0
        boxes = []
        for side in (-1.0, 1.0):
            x_in = side * width / 2.0
            x_out = side * (width / 2.0 + self.finger_thickness)
            lo_x, hi_x = min(x_in, x_out), max(x_in, x_out)
            boxes.append((np.array([lo_x, -y, -half_l]),
                          np.array([hi_x, y, half_l + sweep])))
        palm_x = width / 2.0 + self.finger_thickness
        boxes.append((np.array([-palm_x, -y, half_l]),
                      np.array([palm_x, y, half_l + self.palm_thickness + sweep])))
        return boxes


@dataclass
class OccupancyGrid:
    """Voxelized scene: boolean occupancy over a padded AABB."""

    origin: np.ndarray
    voxel_size: float
    dims: tuple
    occupied: np.ndarray

    def voxel_of(self, points):
        idx = np.floor((np.asarray(points, dtype=np.float64) - self.origin) / self.voxel_size)
        return idx.astype(np.int64)

    def contains(self, idx):
        return np.all((idx >= 0) & (idx < np.asarray(self.dims)), axis=-1)


def build_occupancy(scene: PointCloud, voxel_size: float) -> OccupancyGrid:
    """Mark every voxel containing at least one scene point occupied."""
    if voxel_size <= 0:
        raise ValueError("voxel_size must be positive")
    pts = scene.points
    lo = pts.min(axis=0) - voxel_size
    hi = pts.max(axis=0) + voxel_size
    dims = tuple(np.ceil((hi - lo) / voxel_size).astype(np.int64) + 1)
    occupied = np.zeros(dims, dtype=bool)
    idx = np.floor((pts - lo) / voxel_size).astype(np.int64)
    occupied[idx[:, 0], idx[:, 1], idx[:, 2]] = True
    return OccupancyGrid(origin=lo, voxel_size=voxel_size, dims=dims, occupied=occupied)


def _signed_axis(vec, points, centroid, reference=None):
    """Orient an eigenvector deterministically and covariantly.

    Primary rule: the farthest-projecting point goes positive. For nearly
    flat clouds the projections onto the normal are all ~0 and that rule
    would decide on rounding noise, so a reference direction (the camera
    ray) breaks the tie; a fixed component convention is the last resort.
    """
    proj = (points - centroid) @ vec
    i = int(np.argmax(np.abs(proj)))
    scale = float(np.abs(points - centroid).max())
    if abs(proj[i]) > 1e-9 * max(scale, 1e-12):
        return -vec if proj[i] < 0 else vec
    if reference is not None:
        d = float(vec @ reference)
        if abs(d) > 1e-9:
            return -vec if d < 0 else vec
    j = int(np.argmax(np.abs(vec)))
    return -vec if vec[j] < 0 else vec


def _frame_from(closing, approach):
    """Rotation whose x column is the closing axis and -z the approach."""
    a = approach / np.linalg.norm(approach)
    x = closing - (closing @ a) * a
    nx = np.linalg.norm(x)
    if nx < 1e-6:
        return None
    x = x / nx
    z = -a
    y = np.cross(z, x)
    return np.column_stack([x, y, z])


def propose_grasps(part: PointCloud, max_width: float, count: int = 16,
                   camera_position=(0.0, 0.0, 0.0)) -> list:
    """Deterministic heuristic grasp candidates on the part cloud.

    Closing axis is the minor principal axis of the cloud; approach
    directions are the camera ray, a cone around it, and the remaining
    principal axes. Candidates are scored by how thin the part is along
    the closing axis and how much of it sits inside the closing band,
    then sorted by descending score.

    Raises:
        TooFewPoints: fewer than 3 part points.
        NoFeasibleGrasp: the part is wider than max_width along every axis.
    """
    if max_width <= 0:
        raise ValueError("max_width must be positive")
    pts = part.points
    if pts.shape[0] < 3:
        raise TooFewPoints(f"grasp proposal needs >= 3 points, got {pts.shape[0]}")
    centroid = pts.mean(axis=0)
    centered = pts - centroid
    cov = centered.T @ centered / pts.shape[0]
    _, vecs = np.linalg.eigh(cov)  # ascending eigenvalues
    cam = np.asarray(camera_position, dtype=np.float64)
    ray_ref = centroid - cam
    axes = [_signed_axis(vecs[:, i], pts, centroid, reference=ray_ref) for i in range(3)]
    extents = [float((centered @ ax).max() - (centered @ ax).min()) for ax in axes]

    closing = axes[0]
    closing_extent = extents[0]
    if closing_extent > max_width:
        raise NoFeasibleGrasp(
            f"part spans {[f'{e:.3f}' for e in extents]} m along its principal axes; "
            f"none fits a {max_width:.3f} m opening"
        )
    width = min(closing_extent + WIDTH_CLEARANCE, max_width)

    ray = ray_ref
    ray_norm = np.linalg.norm(ray)
    approaches = []
    if ray_norm > 1e-9:
        ray = ray / ray_norm
        approaches.append(ray)
        # ring of directions on a cone around the camera ray
        e1 = np.cross(ray, closing)
        if np.linalg.norm(e1) < 1e-6:
            e1 = np.cross(ray, axes[2])
        e1 = e1 / np.linalg.norm(e1)
        e2 = np.cross(ray, e1)
        for k in range(CONE_DIRECTIONS):
            phi = 2.0 * np.pi * k / CONE_DIRECTIONS
            d = (np.cos(CONE_HALF_ANGLE) * ray
                 + np.sin(CONE_HALF_ANGLE) * (np.cos(phi) * e1 + np.sin(phi) * e2))
            approaches.append(d)
    for ax in (axes[1], axes[2]):
        approaches.append(ax)
        approaches.append(-ax)

    candidates = []
    for a in approaches:
        rot = _frame_from(closing, a)
        if rot is None:
            continue
        support = float(np.mean(np.abs(centered @ (a / np.linalg.norm(a))) <= SUPPORT_BAND))
        score = (1.0 - closing_extent / max_width) + support
        candidates.append(GraspCandidate(RigidTransform(rot, centroid), width, score))

    candidates.sort(key=lambda c: -c.score)  # stable: ties keep insertion order
    return candidates[:count]


def _box_collides(lo, hi, pose: RigidTransform, grid: OccupancyGrid, blocked):
    """Does any blocked voxel center fall inside this gripper-frame box?"""
    corners_local = np.array([[x, y, z] for x in (lo[0], hi[0])
                              for y in (lo[1], hi[1]) for z in (lo[2], hi[2])])
    corners = pose.apply(corners_local)
    vmin = grid.voxel_of(corners.min(axis=0))
    vmax = grid.voxel_of(corners.max(axis=0))
    vmin = np.maximum(vmin, 0)
    vmax = np.minimum(vmax, np.asarray(grid.dims) - 1)
    if np.any(vmin > vmax):
        return False
    ix, iy, iz = [np.arange(vmin[d], vmax[d] + 1) for d in range(3)]
    gx, gy, gz = np.meshgrid(ix, iy, iz, indexing="ij")
    sub = blocked[vmin[0]:vmax[0] + 1, vmin[1]:vmax[1] + 1, vmin[2]:vmax[2] + 1]
    if not sub.any():
        return False
    occ = np.stack([gx[sub], gy[sub], gz[sub]], axis=1)
    centers = grid.origin + (occ + 0.5) * grid.voxel_size
    local = (centers - pose.translation) @ pose.rotation
    pad = grid.voxel_size / 2.0  # conservative: voxel inflated to its half-diagonal box
    inside = np.all((local >= lo - pad) & (local <= hi + pad), axis=1)
    return bool(inside.any())


def filter_collisions(candidates, grid: OccupancyGrid, gripper: GripperModel,
                      part: PointCloud) -> GraspCandidate:
    """Highest-scoring candidate whose swept gripper volume is collision-free.

    Voxels occupied by the part itself are exempt: the gripper must touch
    the part. Everything else in the grid blocks.

    Raises:
        AllCollide: every candidate intersects the scene.
    """
    if not candidates:
        raise ValueError("candidate list is empty")
    part_idx = grid.voxel_of(part.points)
    keep = grid.contains(part_idx)
    blocked = grid.occupied.copy()
    pi = part_idx[keep]
    blocked[pi[:, 0], pi[:, 1], pi[:, 2]] = False

    order = sorted(range(len(candidates)), key=lambda i: (-candidates[i].score, i))
    for i in order:
        cand = candidates[i]
        boxes = gripper.boxes(cand.width)
        if not any(_box_collides(lo, hi, cand.pose, grid, blocked) for lo, hi in boxes):
            return cand
    raise AllCollide(f"all {len(candidates)} grasp candidates intersect the scene")
