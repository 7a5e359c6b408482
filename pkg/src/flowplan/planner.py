"""End-to-end pipeline: mask and frames in, end-effector trajectory out.

plan() chains the stages: lift the part cloud, track it through the future
frames, build scene flow, solve per-step rigid transforms, pick a grasp
pose, and left-compose the transforms onto it. Any stage failure is
re-raised tagged with the stage name.

All geometry is solved in the world frame. The world defaults to the
camera frame of the observation; a configurable camera-to-world extrinsic
(never inferred) maps everything out of the camera when one is supplied.

run_episode() closes the loop against the simulator: plan, virtually
execute by applying the solved transforms to the part, compare against the
goal pose, and replan from the reached state within a fixed budget.
"""

from __future__ import annotations

from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DegenerateScene, FlowPlanError, PipelineStageError
from .geometry import (
    CameraIntrinsics,
    PartMask,
    PointCloud,
    RgbdFrame,
    RigidTransform,
    apply_transform,
    compose,
    lift_pixels,
    rotation_angle,
    transform_distance,
    unproject,
)
from .grasp import GraspCandidate, GripperModel, build_occupancy, filter_collisions, propose_grasps
from .sceneflow import TrackSet, block_match_tracks, build_scene_flow, nearest_pixel
from .simulator import SyntheticScene, generate_scene
from .solver import solve_transform_sequence
from . import io as fio

DEFAULT_MAX_REPLANS = 10
GOAL_POSITION_TOL = 0.005           # meters
GOAL_ROTATION_TOL = np.deg2rad(2.0)


@dataclass
class PlanConfig:
    intrinsics: CameraIntrinsics
    robust: bool = False
    ransac_iterations: int = 100
    ransac_threshold: float = 0.02
    max_width: float = 0.08
    candidate_count: int = 16
    voxel_size: float = 0.005
    gripper: GripperModel = field(default_factory=GripperModel)
    world_from_camera: RigidTransform = field(default_factory=RigidTransform.identity)
    external_candidates: list = None
    block_window: int = 7
    block_radius: int = 8
    zncc_threshold: float = 0.5
    seed: int = 0
    dump_dir: Path = None
    mask_source: str = "provided"
    sampler_mode: str = "none"


@dataclass
class Trajectory:
    """End-effector poses P_0..P_N with per-step fit residuals and provenance."""

    poses: list
    residuals: list
    provenance: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.poses)

    def to_dict(self):
        return {
            "poses": [fio.matrix_to_list(p.as_matrix()) for p in self.poses],
            "residuals": [float(r) for r in self.residuals],
            "provenance": self.provenance,
        }

    @classmethod
    def from_dict(cls, doc):
        poses = [RigidTransform.from_matrix(fio.matrix_from_list(m)) for m in doc["poses"]]
        return cls(poses, list(doc["residuals"]), dict(doc.get("provenance", {})))


@dataclass
class EpisodeResult:
    success: bool
    replans_used: int
    final_part_pose_error: tuple  # (meters, radians)


def compose_trajectory(p0: RigidTransform, steps, provenance=None) -> Trajectory:
    """Left-compose per-step transforms onto the grasp pose.

    steps may be TransformFitResult objects (residuals are copied) or bare
    RigidTransforms (residuals 0). The chain invariant
    poses[n] = steps[n] o poses[n-1] is re-verified before returning.
    """
    poses = [p0]
    residuals = []
    transforms = []
    for s in steps:
        t = s.transform if hasattr(s, "transform") else s
        transforms.append(t)
        residuals.append(float(s.rms_residual) if hasattr(s, "rms_residual") else 0.0)
        poses.append(compose(t, poses[-1]))
    for n, t in enumerate(transforms, start=1):
        check = compose(t, poses[n - 1])
        if not (np.array_equal(check.rotation, poses[n].rotation)
                and np.array_equal(check.translation, poses[n].translation)):
            raise AssertionError(f"trajectory chain broke at step {n}")
    return Trajectory(poses, residuals, provenance or {})


@contextmanager
def _stage(name):
    try:
        yield
    except FlowPlanError as err:
        raise PipelineStageError(name, err) from err


def _lift_track_sources(tracks: TrackSet, frame: RgbdFrame, intrinsics):
    """Frame-0 positions of every track as 3D points; NaN where unusable."""
    u = tracks.positions[:, 0, 0]
    v = tracks.positions[:, 1, 0]
    h, w = frame.shape
    ui, vi = nearest_pixel(u, v)
    inb = (ui >= 0) & (ui < w) & (vi >= 0) & (vi < h)
    ui_c = np.clip(ui, 0, w - 1)
    vi_c = np.clip(vi, 0, h - 1)
    ok = tracks.visible[:, 0] & inb & frame.valid[vi_c, ui_c]
    depth = np.where(ok, frame.depth[vi_c, ui_c], np.nan)
    return lift_pixels(u, v, depth, intrinsics)


def plan(observation: RgbdFrame, mask: PartMask, future_frames, tracker,
         config: PlanConfig) -> Trajectory:
    """Full pipeline. tracker is a TrackSet (oracle or external detections)
    or the string "blockmatch" for the built-in baseline tracker.

    Raises:
        PipelineStageError: wraps the failing stage's domain error.
    """
    intr = config.intrinsics
    ext = config.world_from_camera
    frames = [observation] + list(future_frames)

    with _stage("geometry"):
        part_cam = unproject(observation, mask, intr)
        scene_cam = unproject(observation, PartMask(np.ones(observation.shape, bool)), intr)

    with _stage("tracking"):
        if isinstance(tracker, TrackSet):
            tracks = tracker
            tracker_id = "external"
        elif tracker == "blockmatch":
            tracks = block_match_tracks(frames, mask, window=config.block_window,
                                        search_radius=config.block_radius,
                                        zncc_threshold=config.zncc_threshold)
            tracker_id = "blockmatch"
        else:
            raise ValueError(f"unknown tracker {tracker!r}")

    with _stage("sceneflow"):
        flow = build_scene_flow(tracks, frames, intr)

    # move everything into the world frame
    source_pts = ext.apply(_lift_track_sources(tracks, observation, intr))
    flow.displacements = np.einsum("ij,mjn->min", ext.rotation, flow.displacements)
    part_world = apply_transform(ext, part_cam)
    scene_world = apply_transform(ext, scene_cam)

    with _stage("solver"):
        fits = solve_transform_sequence(source_pts, flow, robust=config.robust,
                                        ransac_iterations=config.ransac_iterations,
                                        ransac_threshold=config.ransac_threshold,
                                        seed=config.seed)

    with _stage("grasp"):
        if config.external_candidates:
            candidates = list(config.external_candidates)
            candidate_source = "external"
        else:
            candidates = propose_grasps(part_world, config.max_width,
                                        config.candidate_count,
                                        camera_position=ext.translation)
            candidate_source = "pca-heuristic"
        grid = build_occupancy(scene_world, config.voxel_size)
        p0 = filter_collisions(candidates, grid, config.gripper, part_world)

    provenance = {
        "mask_source": config.mask_source,
        "tracker": tracker_id,
        "grasp_candidates": candidate_source,
        "grasp_rule": "highest score after collision filter",
        "sampler_mode": config.sampler_mode,
        "seed": config.seed,
        "robust": config.robust,
    }
    trajectory = compose_trajectory(p0.pose, fits, provenance)

    if config.dump_dir is not None:
        dump = Path(config.dump_dir)
        dump.mkdir(parents=True, exist_ok=True)
        fio.write_tracks(dump / "tracks.trks", tracks.positions, tracks.visible)
        fio.write_flow(dump / "flow.sflw", flow.displacements, flow.valid)
        fio.write_json(dump / "transforms.json", [
            {"step": n + 1, "matrix": fio.matrix_to_list(f.transform.as_matrix()),
             "rms_residual": f.rms_residual, "inlier_count": f.inlier_count}
            for n, f in enumerate(fits)
        ])
        fio.write_json(dump / "grasp.json", {
            "matrix": fio.matrix_to_list(p0.pose.as_matrix()),
            "width": p0.width, "score": p0.score,
        })
    return trajectory


def solved_step_transforms(trajectory: Trajectory):
    """Recover T_n = poses[n] o poses[n-1]^-1 from a trajectory."""
    out = []
    for a, b in zip(trajectory.poses[:-1], trajectory.poses[1:]):
        out.append(compose(b, a.inverse()))
    return out


def perturb_tracks(tracks: TrackSet, sigma_px, rng) -> TrackSet:
    """Gaussian pixel noise on tracked positions (frame 0 is the query, exact)."""
    positions = tracks.positions.copy()
    if sigma_px > 0:
        positions[:, :, 1:] += rng.normal(0.0, sigma_px, size=positions[:, :, 1:].shape)
    return TrackSet(positions, tracks.visible.copy())


# execution slip injected when an episode corrupts its first plan: several
# times the goal tolerance, small enough that the part stays in view
FIRST_PLAN_SLIP = np.array([0.03, 0.0, 0.02])


def interpolate_transform_steps(gap: RigidTransform, n_steps: int):
    """n equal screw steps whose composition is exactly the gap transform."""
    if n_steps < 1:
        raise ValueError("n_steps must be >= 1")
    theta = rotation_angle(gap.rotation)
    if theta < 1e-12:
        r_step = np.eye(3)
    else:
        r = gap.rotation
        axis = np.array([r[2, 1] - r[1, 2], r[0, 2] - r[2, 0], r[1, 0] - r[0, 1]])
        norm = np.linalg.norm(axis)
        if norm < 1e-12:  # theta ~ pi; take any stable axis from R + I
            m = gap.rotation + np.eye(3)
            axis = m[:, int(np.argmax(np.linalg.norm(m, axis=0)))]
            norm = np.linalg.norm(axis)
        axis = axis / norm
        a = theta / n_steps
        k = np.array([[0, -axis[2], axis[1]], [axis[2], 0, -axis[0]], [-axis[1], axis[0], 0]])
        r_step = np.eye(3) + np.sin(a) * k + (1 - np.cos(a)) * (k @ k)
    acc = np.eye(3)
    series = np.zeros((3, 3))
    for _ in range(n_steps):
        series += acc
        acc = r_step @ acc
    t_step = np.linalg.solve(series, gap.translation)
    return [RigidTransform(r_step, t_step)] * n_steps


@dataclass
class EpisodeConfig:
    max_replans: int = DEFAULT_MAX_REPLANS
    goal_position_tol: float = GOAL_POSITION_TOL
    goal_rotation_tol: float = GOAL_ROTATION_TOL
    tracker: str = "oracle"          # "oracle" or "blockmatch"
    track_noise_px: float = 0.0
    corrupt_first_plan: bool = False
    robust: bool = False
    seed: int = 0
    max_width: float = 0.25
    voxel_size: float = 0.005
    world_from_camera: RigidTransform = field(default_factory=RigidTransform.identity)


def run_episode(scene: SyntheticScene, config: EpisodeConfig = None) -> EpisodeResult:
    """Plan and virtually execute one scripted episode, replanning on failure.

    Execution applies the solved part transforms to the part's pose; the
    goal is reached when the final pose sits within the position/rotation
    tolerances of the scripted goal pose. Each replan re-renders the scene
    from the reached part pose with a fresh script that closes the
    remaining gap. Failure is a result, never an exception.
    """
    config = config or EpisodeConfig()
    rng = np.random.default_rng(np.random.SeedSequence([0xE9150DE, config.seed, scene.seed]))
    _, gt0 = generate_scene(scene)
    goal = gt0.goal_pose  # camera-frame part pose change over the episode
    ext = config.world_from_camera

    achieved = RigidTransform.identity()
    success = False
    attempts = 0
    pos_err = rot_err = float("inf")
    n_steps = len(scene.motion_script)

    for attempt in range(config.max_replans + 1):
        if attempt == 0:
            attempt_scene = scene
        else:
            gap = compose(goal, achieved.inverse())
            script = interpolate_transform_steps(gap, n_steps)
            attempt_scene = SyntheticScene(
                [q.transformed(achieved) for q in scene.part_geometry],
                scene.distractor_geometry, script, scene.intrinsics, scene.seed)
        try:
            frames, gt = generate_scene(attempt_scene)
        except DegenerateScene:
            break  # part drifted out of view; unrecoverable
        attempts = attempt + 1

        plan_config = PlanConfig(
            intrinsics=scene.intrinsics, robust=config.robust,
            max_width=config.max_width, voxel_size=config.voxel_size,
            world_from_camera=ext, seed=config.seed, mask_source="simulator")
        if config.tracker == "blockmatch":
            tracker = "blockmatch"
        else:
            tracker = gt.tracks
            if config.track_noise_px > 0:
                tracker = perturb_tracks(tracker, config.track_noise_px, rng)
        try:
            trajectory = plan(frames[0], gt.masks[0], frames[1:], tracker, plan_config)
        except FlowPlanError:
            continue

        # composing all per-step transforms telescopes to poses[N] o poses[0]^-1;
        # the trajectory lives in the world frame, execution state in the camera frame
        executed_world = compose(trajectory.poses[-1], trajectory.poses[0].inverse())
        executed = compose(compose(ext.inverse(), executed_world), ext)
        if config.corrupt_first_plan and attempt == 0:
            executed = compose(RigidTransform(np.eye(3), FIRST_PLAN_SLIP), executed)
        achieved = compose(executed, achieved)
        rot_err, pos_err = transform_distance(achieved, goal)
        if pos_err <= config.goal_position_tol and rot_err <= config.goal_rotation_tol:
            success = True
            break

    replans_used = max(0, attempts - 1)
    return EpisodeResult(success, replans_used, (pos_err, rot_err))
