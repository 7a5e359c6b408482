"""Procedural RGBD scenes with exact ground truth.

Renders textured quads (planes and box faces) with a minimal perspective
z-buffer rasterizer: no lighting, flat per-face textures, point sampling at
pixel centers. The texture exists only to give trackers and the video model
something to chew on.

A scene scripts a rigid "object part" through N frame-to-frame transforms
in front of static distractors. Ground truth for every downstream module
comes out of the same arithmetic the modules themselves use: the part cloud
is lifted from the rendered frame-0 depth via geometry.unproject, the flow
is that cloud pushed through the scripted transforms, and tracks are exact
projections of the moving points.

Benchmark scenes keep the part a camera-facing plane and restrict rotations
to the camera axis, so every part point sits at a single depth per frame
and nearest-neighbor depth lookups at sub-pixel track positions are exact.
General rotations are exercised solver-side, where no rendering is needed.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateScene, ShapeMismatch
from .geometry import (
    CameraIntrinsics,
    PartMask,
    PointCloud,
    RgbdFrame,
    RigidTransform,
    compose,
    unproject,
)
from .sceneflow import SceneFlowField, TrackSet, nearest_pixel

PART_ID = 1
NEAR_PLANE = 0.05
# rendered depth at a track's nearest pixel must match the point's depth
# this closely for the point to count as visible (z-buffer occlusion check);
# loose enough to tolerate the slightly tilted parts replanning produces,
# far tighter than any occluder/background depth gap in these scenes
OCCLUSION_DEPTH_TOL = 5e-3

TASKS = ("slide left", "slide right", "slide up", "slide down")

# corner order: (0,0) (1,0) (1,1) (0,1) in texture coordinates
_QUAD_UV = np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]])
_QUAD_TRIS = ((0, 1, 2), (0, 2, 3))


@dataclass
class TexturedQuad:
    """Planar rectangle: 4 corners (world meters), a texture grid, an object id."""

    corners: np.ndarray
    texture: np.ndarray
    object_id: int

    def __post_init__(self):
        self.corners = np.asarray(self.corners, dtype=np.float64)
        self.texture = np.asarray(self.texture, dtype=np.float64)
        if self.corners.shape != (4, 3):
            raise ShapeMismatch(f"quad corners must be (4, 3), got {self.corners.shape}")
        if self.texture.ndim != 3 or self.texture.shape[2] != 3:
            raise ShapeMismatch(f"texture must be (T, T, 3), got {self.texture.shape}")

    def transformed(self, transform: RigidTransform) -> "TexturedQuad":
        return TexturedQuad(transform.apply(self.corners), self.texture, self.object_id)


@dataclass
class SyntheticScene:
    """Scripted scene: part quads, static distractor quads, per-step motion."""

    part_geometry: list
    distractor_geometry: list
    motion_script: list
    intrinsics: CameraIntrinsics
    seed: int = 0

    def __post_init__(self):
        if not self.part_geometry:
            raise ValueError("part geometry must be non-empty")
        if not self.distractor_geometry:
            raise ValueError("distractor geometry must be non-empty")


@dataclass
class GroundTruth:
    """Exact per-episode truth: masks, tracks, flow, transforms, goal pose."""

    masks: list
    tracks: TrackSet
    flow: SceneFlowField
    transforms: list
    goal_pose: RigidTransform
    cloud0: PointCloud = field(repr=False, default=None)


def plane_quad(center, half_u, half_v, texture, object_id,
               axis_u=(1.0, 0.0, 0.0), axis_v=(0.0, 1.0, 0.0)):
    """Rectangle spanned by two half-axes around a center."""
    c = np.asarray(center, dtype=np.float64)
    au = np.asarray(axis_u, dtype=np.float64) * half_u
    av = np.asarray(axis_v, dtype=np.float64) * half_v
    corners = np.array([c - au - av, c + au - av, c + au + av, c - au + av])
    return TexturedQuad(corners, texture, object_id)


def box_quads(center, size, rng, object_id, texels=6):
    """Six textured faces of an axis-aligned box."""
    c = np.asarray(center, dtype=np.float64)
    hx, hy, hz = np.asarray(size, dtype=np.float64) / 2.0
    quads = []
    faces = [
        ((0, 0, -hz), (1, 0, 0), (0, 1, 0), hx, hy),
        ((0, 0, +hz), (1, 0, 0), (0, 1, 0), hx, hy),
        ((-hx, 0, 0), (0, 0, 1), (0, 1, 0), hz, hy),
        ((+hx, 0, 0), (0, 0, 1), (0, 1, 0), hz, hy),
        ((0, -hy, 0), (1, 0, 0), (0, 0, 1), hx, hz),
        ((0, +hy, 0), (1, 0, 0), (0, 0, 1), hx, hz),
    ]
    for offset, au, av, ha, hb in faces:
        tex = rng.uniform(0.1, 1.0, size=(texels, texels, 3))
        quads.append(plane_quad(c + offset, ha, hb, tex, object_id, au, av))
    return quads


def _rasterize_triangle(verts, uvs, texture, object_id, intrinsics,
                        zbuf, rgb, ids):
    z = verts[:, 2]
    if np.any(z <= NEAR_PLANE):
        return
    u = intrinsics.fx * verts[:, 0] / z + intrinsics.cx
    v = intrinsics.fy * verts[:, 1] / z + intrinsics.cy
    h, w = zbuf.shape
    u0 = max(0, int(np.ceil(u.min())))
    u1 = min(w - 1, int(np.floor(u.max())))
    v0 = max(0, int(np.ceil(v.min())))
    v1 = min(h - 1, int(np.floor(v.max())))
    if u0 > u1 or v0 > v1:
        return

    # signed areas of the sub-triangles at every pixel center (edge functions)
    area = (u[1] - u[0]) * (v[2] - v[0]) - (v[1] - v[0]) * (u[2] - u[0])
    if area == 0.0:
        return
    px, py = np.meshgrid(np.arange(u0, u1 + 1, dtype=np.float64),
                         np.arange(v0, v1 + 1, dtype=np.float64))
    w0 = (u[2] - u[1]) * (py - v[1]) - (v[2] - v[1]) * (px - u[1])
    w1 = (u[0] - u[2]) * (py - v[2]) - (v[0] - v[2]) * (px - u[2])
    w2 = (u[1] - u[0]) * (py - v[0]) - (v[1] - v[0]) * (px - u[0])
    if area < 0:
        w0, w1, w2, area = -w0, -w1, -w2, -area
    inside = (w0 >= 0) & (w1 >= 0) & (w2 >= 0)
    if not inside.any():
        return

    l0 = w0[inside] / area
    l1 = w1[inside] / area
    l2 = w2[inside] / area
    inv_z = l0 / z[0] + l1 / z[1] + l2 / z[2]
    depth = 1.0 / inv_z

    rows = py[inside].astype(np.int64)
    cols = px[inside].astype(np.int64)
    closer = depth < zbuf[rows, cols]
    if not closer.any():
        return
    rows, cols, depth = rows[closer], cols[closer], depth[closer]

    tex_uv = (l0[closer, None] * uvs[0] / z[0]
              + l1[closer, None] * uvs[1] / z[1]
              + l2[closer, None] * uvs[2] / z[2]) * depth[:, None]
    t = texture.shape[0]
    ti = np.clip((tex_uv * t).astype(np.int64), 0, t - 1)

    zbuf[rows, cols] = depth
    rgb[rows, cols] = texture[ti[:, 1], ti[:, 0]]
    ids[rows, cols] = object_id


def render(quads, intrinsics: CameraIntrinsics):
    """Z-buffer render. Returns (RgbdFrame, object-id buffer)."""
    h, w = intrinsics.height, intrinsics.width
    zbuf = np.full((h, w), np.inf)
    rgb = np.zeros((h, w, 3))
    ids = np.zeros((h, w), dtype=np.int32)
    for quad in quads:
        for tri in _QUAD_TRIS:
            _rasterize_triangle(quad.corners[list(tri)], _QUAD_UV[list(tri)],
                                quad.texture, quad.object_id, intrinsics,
                                zbuf, rgb, ids)
    valid = np.isfinite(zbuf)
    depth = np.where(valid, zbuf, 0.0)
    return RgbdFrame(rgb, depth, valid), ids


def _track_visibility(u, v, z, frame, intrinsics):
    """In-frame and unoccluded: rendered depth at the nearest pixel matches z."""
    h, w = frame.shape
    ui, vi = nearest_pixel(u, v)
    inb = (ui >= 0) & (ui < w) & (vi >= 0) & (vi < h) & (z > NEAR_PLANE)
    ui_c = np.clip(ui, 0, w - 1)
    vi_c = np.clip(vi, 0, h - 1)
    match = np.abs(frame.depth[vi_c, ui_c] - z) <= OCCLUSION_DEPTH_TOL
    return inb & frame.valid[vi_c, ui_c] & match


def generate_scene(config: SyntheticScene):
    """Render the scripted scene. Returns (frames, GroundTruth).

    Deterministic: rendering is a pure function of the config (any
    randomness lives in the scene-construction helpers, driven by the
    config seed).

    Raises:
        DegenerateScene: the part is not visible in frame 0.
    """
    intr = config.intrinsics
    frames = []
    static = list(config.distractor_geometry)

    frame0, ids0 = render(config.part_geometry + static, intr)
    mask0 = PartMask(ids0 == PART_ID)
    if mask0.pixel_count == 0:
        raise DegenerateScene("part is not visible in frame 0")
    frames.append(frame0)
    masks = [mask0]

    cloud0 = unproject(frame0, mask0, intr)
    m = len(cloud0)
    n_steps = len(config.motion_script)

    positions = np.zeros((m, 2, n_steps + 1))
    visible = np.zeros((m, n_steps + 1), dtype=bool)
    positions[:, 0, 0] = cloud0.source_pixels[:, 0]
    positions[:, 1, 0] = cloud0.source_pixels[:, 1]
    visible[:, 0] = True

    disp = np.zeros((m, 3, n_steps))
    flow_valid = np.zeros((m, n_steps), dtype=bool)

    points = cloud0.points.copy()
    cumulative = RigidTransform.identity()
    for n, step in enumerate(config.motion_script, start=1):
        cumulative = compose(step, cumulative)
        moved_part = [q.transformed(cumulative) for q in config.part_geometry]
        frame_n, ids_n = render(moved_part + static, intr)
        frames.append(frame_n)
        masks.append(PartMask(ids_n == PART_ID))

        new_points = step.apply(points)
        disp[:, :, n - 1] = new_points - points
        points = new_points

        z = points[:, 2]
        front = z > NEAR_PLANE
        u = np.where(front, intr.fx * points[:, 0] / np.where(front, z, 1.0) + intr.cx, -1.0)
        v = np.where(front, intr.fy * points[:, 1] / np.where(front, z, 1.0) + intr.cy, -1.0)
        positions[:, 0, n] = u
        positions[:, 1, n] = v
        visible[:, n] = _track_visibility(u, v, z, frame_n, intr)
        flow_valid[:, n - 1] = visible[:, n - 1] & visible[:, n]

    gt = GroundTruth(
        masks=masks,
        tracks=TrackSet(positions, visible),
        flow=SceneFlowField(disp, flow_valid),
        transforms=list(config.motion_script),
        goal_pose=cumulative,
        cloud0=cloud0,
    )
    return frames, gt


def oracle_tracks(gt: GroundTruth, frame_index: int):
    """Exact tracked pixel positions and visibility at one frame."""
    n_frames = gt.tracks.num_frames
    if not 0 <= frame_index < n_frames:
        raise IndexError(f"frame {frame_index} outside 0..{n_frames - 1}")
    return gt.tracks.positions[:, :, frame_index].copy(), gt.tracks.visible[:, frame_index].copy()


def rotation_about_z(angle):
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def step_about_point(angle, pivot, translation):
    """Rotate about the camera axis through `pivot`, then translate."""
    r = rotation_about_z(angle)
    pivot = np.asarray(pivot, dtype=np.float64)
    t = np.asarray(translation, dtype=np.float64) + pivot - r @ pivot
    return RigidTransform(r, t)


def default_intrinsics(width=128, height=96, focal=110.0):
    return CameraIntrinsics(fx=focal, fy=focal, cx=(width - 1) / 2.0,
                            cy=(height - 1) / 2.0, width=width, height=height)


def sample_scene(seed, width=128, height=96, n_steps=8, max_step_angle=0.06,
                 max_step_shift=0.008, max_step_dz=0.015, texels=12):
    """Random benchmark scene: camera-facing planar part, wall, side boxes.

    The part plane stays perpendicular to the camera axis (rotations are
    about z only), keeping every part point at one depth per frame.
    """
    rng = np.random.default_rng(np.random.SeedSequence([0x5CEE, seed]))
    intr = default_intrinsics(width, height)

    z0 = rng.uniform(0.65, 0.85)
    cx_m = rng.uniform(-0.06, 0.06)
    cy_m = rng.uniform(-0.04, 0.04)
    half_u = rng.uniform(0.05, 0.09)
    half_v = rng.uniform(0.04, 0.07)
    part_tex = rng.uniform(0.0, 1.0, size=(texels, texels, 3))
    part = [plane_quad([cx_m, cy_m, z0], half_u, half_v, part_tex, PART_ID)]

    wall_z = rng.uniform(1.6, 2.0)
    wall_half_u = wall_z * width / intr.fx
    wall_half_v = wall_z * height / intr.fy
    wall_tex = rng.uniform(0.05, 0.6, size=(8, 8, 3))
    distractors = [plane_quad([0.0, 0.0, wall_z], wall_half_u, wall_half_v, wall_tex, 2)]
    for k in range(int(rng.integers(1, 4))):
        side = -1.0 if rng.uniform() < 0.5 else 1.0
        center = [side * rng.uniform(0.25, 0.4), rng.uniform(-0.1, 0.1), rng.uniform(1.0, 1.4)]
        size = rng.uniform(0.08, 0.2, size=3)
        distractors.extend(box_quads(center, size, rng, object_id=3 + k))

    script = []
    pivot = np.array([cx_m, cy_m, z0])
    for _ in range(n_steps):
        angle = rng.uniform(-max_step_angle, max_step_angle)
        shift = np.array([
            rng.uniform(-max_step_shift, max_step_shift),
            rng.uniform(-max_step_shift, max_step_shift),
            rng.uniform(-max_step_dz, max_step_dz),
        ])
        step = step_about_point(angle, pivot, shift)
        pivot = step.apply(pivot)
        script.append(step)

    return SyntheticScene(part, distractors, script, intr, seed=seed)


def sample_task_scene(seed, task_id, width=16, height=16, n_steps=4):
    """Tiny scene for video-model clips; motion direction encodes the task."""
    if not 0 <= task_id < len(TASKS):
        raise ValueError(f"task_id must be in 0..{len(TASKS) - 1}")
    rng = np.random.default_rng(np.random.SeedSequence([0x7A5C, seed, task_id]))
    intr = default_intrinsics(width, height, focal=float(width))

    z0 = rng.uniform(0.6, 0.8)
    half = rng.uniform(0.14, 0.2) * z0
    part_tex = rng.uniform(0.5, 1.0, size=(4, 4, 3))
    part = [plane_quad([rng.uniform(-0.05, 0.05) * z0, rng.uniform(-0.05, 0.05) * z0, z0],
                       half, half, part_tex, PART_ID)]
    wall_tex = rng.uniform(0.0, 0.25, size=(4, 4, 3))
    wall_z = 1.6
    distractors = [plane_quad([0.0, 0.0, wall_z], 2.0, 2.0, wall_tex, 2)]

    direction = {
        0: np.array([-1.0, 0.0, 0.0]),
        1: np.array([1.0, 0.0, 0.0]),
        2: np.array([0.0, -1.0, 0.0]),
        3: np.array([0.0, 1.0, 0.0]),
    }[task_id]
    step_len = rng.uniform(0.03, 0.05) * z0
    script = [RigidTransform(np.eye(3), direction * step_len) for _ in range(n_steps)]
    return SyntheticScene(part, distractors, script, intr, seed=seed)
