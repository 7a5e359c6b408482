"""Object-part 3D scene flow from 2D point tracks plus per-frame depth.

A track set follows M pixels across N+1 frames. Lifting each tracked
position with the depth channel of its frame gives per-step 3D displacement
vectors: displacement[i, :, n-1] = lift(track_i at frame n) - lift(track_i
at frame n-1). Depth at sub-pixel track positions is read nearest-neighbor,
never bilinearly: interpolating across a depth discontinuity would invent
phantom points between surfaces.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import AllInvalid, ShapeMismatch, TooFewPoints
from .geometry import CameraIntrinsics, PartMask, lift_pixels

DEFAULT_ZNCC_THRESHOLD = 0.5
DEFAULT_SEARCH_RADIUS = 8


@dataclass
class TrackSet:
    """Pixel trajectories: positions (M, 2, N+1) as (u, v), visibility (M, N+1)."""

    positions: np.ndarray
    visible: np.ndarray

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=np.float64)
        self.visible = np.asarray(self.visible, dtype=bool)
        if self.positions.ndim != 3 or self.positions.shape[1] != 2:
            raise ShapeMismatch(f"positions must be (M, 2, N+1), got {self.positions.shape}")
        m, _, f = self.positions.shape
        if self.visible.shape != (m, f):
            raise ShapeMismatch(
                f"visible shape {self.visible.shape} does not match positions {self.positions.shape}"
            )
        seen = self.positions.transpose(0, 2, 1)[self.visible]  # (K, 2)
        if not np.all(np.isfinite(seen)):
            raise ValueError("positions must be finite wherever visible")

    @property
    def num_points(self) -> int:
        return self.positions.shape[0]

    @property
    def num_frames(self) -> int:
        return self.positions.shape[2]


@dataclass
class SceneFlowField:
    """Per-point, per-step 3D displacements (M, 3, N) with validity (M, N).

    Invalid entries are stored as zero and excluded from any solving.
    """

    displacements: np.ndarray
    valid: np.ndarray

    def __post_init__(self):
        self.displacements = np.asarray(self.displacements, dtype=np.float64)
        self.valid = np.asarray(self.valid, dtype=bool)
        if self.displacements.ndim != 3 or self.displacements.shape[1] != 3:
            raise ShapeMismatch(f"displacements must be (M, 3, N), got {self.displacements.shape}")
        m, _, n = self.displacements.shape
        if self.valid.shape != (m, n):
            raise ShapeMismatch(
                f"valid shape {self.valid.shape} does not match displacements {self.displacements.shape}"
            )
        finite = np.isfinite(self.displacements).all(axis=1)  # (M, N)
        if np.any(self.valid & ~finite):
            raise ValueError("valid displacements must be finite")
        # zero-fill invalid entries so downstream code can sum blindly
        self.displacements = np.where(self.valid[:, None, :], self.displacements, 0.0)

    @property
    def num_steps(self) -> int:
        return self.displacements.shape[2]


def nearest_pixel(u, v):
    """Nearest integer pixel for sub-pixel coordinates (half rounds up)."""
    return (
        np.floor(np.asarray(u, dtype=np.float64) + 0.5).astype(np.int64),
        np.floor(np.asarray(v, dtype=np.float64) + 0.5).astype(np.int64),
    )


def _lift_tracked_frame(frame, u, v, visible, intrinsics):
    """Lift one frame's tracked positions; returns (points with NaN holes, ok mask)."""
    h, w = frame.shape
    ui, vi = nearest_pixel(u, v)
    inb = (ui >= 0) & (ui < w) & (vi >= 0) & (vi < h)
    ui_c = np.clip(ui, 0, w - 1)
    vi_c = np.clip(vi, 0, h - 1)
    ok = visible & inb & frame.valid[vi_c, ui_c]
    depth = np.where(ok, frame.depth[vi_c, ui_c], np.nan)
    points = lift_pixels(u, v, depth, intrinsics)
    return points, ok


def build_scene_flow(tracks: TrackSet, frames, intrinsics: CameraIntrinsics) -> SceneFlowField:
    """Lift tracks through per-frame depth and difference consecutive frames.

    A step is valid for a point only when both endpoints are visible, land
    in-frame, and read valid depth.

    Raises:
        TooFewPoints: fewer than 3 tracked points.
        ShapeMismatch: frame count does not match the track set.
        AllInvalid: no step ends up with >= 3 valid points.
    """
    frames = list(frames)
    m = tracks.num_points
    n_frames = tracks.num_frames
    if m < 3:
        raise TooFewPoints(f"tracking {m} points cannot constrain a rigid transform")
    if len(frames) != n_frames:
        raise ShapeMismatch(f"{len(frames)} frames for a track set spanning {n_frames}")

    points = np.empty((n_frames, m, 3))
    ok = np.empty((n_frames, m), dtype=bool)
    for f in range(n_frames):
        points[f], ok[f] = _lift_tracked_frame(
            frames[f], tracks.positions[:, 0, f], tracks.positions[:, 1, f],
            tracks.visible[:, f], intrinsics,
        )

    n_steps = n_frames - 1
    valid = ok[:-1] & ok[1:]            # (N, M)
    disp = points[1:] - points[:-1]     # (N, M, 3)
    disp = np.where(valid[:, :, None], disp, 0.0)

    valid = valid.T.copy()              # (M, N)
    disp = np.transpose(disp, (1, 2, 0)).copy()  # (M, 3, N)
    if n_steps > 0 and int(valid.sum(axis=0).max()) < 3:
        raise AllInvalid("no flow step has 3 or more valid points")
    return SceneFlowField(disp, valid)


def _zncc_scores(patch, windows):
    """ZNCC of one (w, w) patch against (A, B, w, w) candidate windows.

    Zero-variance patches or windows score 0 (no evidence of a match).
    """
    w2 = patch.size
    a = patch - patch.mean()
    a_norm = np.sqrt((a * a).sum())
    means = windows.mean(axis=(-2, -1), keepdims=True)
    b = windows - means
    b_norm = np.sqrt((b * b).sum(axis=(-2, -1)))
    num = np.einsum("yx,abyx->ab", a, b)
    denom = a_norm * b_norm
    scores = np.zeros(windows.shape[:2])
    good = denom > 1e-12 * w2
    scores[good] = num[good] / denom[good]
    return scores


def block_match_tracks(frames, mask: PartMask, window: int = 7,
                       search_radius: int = DEFAULT_SEARCH_RADIUS,
                       zncc_threshold: float = DEFAULT_ZNCC_THRESHOLD) -> TrackSet:
    """Frame-to-frame ZNCC block matching of every masked pixel.

    A baseline tracker: integer-pixel search in a (2r+1)^2 neighborhood,
    maximizing zero-normalized cross-correlation of grayscale patches. Ties
    break toward the smallest (dv, du) offset. Points whose best score falls
    below the threshold, or whose patch leaves the frame, are flagged
    invisible for that frame but keep being tracked. Never raises; a
    hopeless scene simply degrades to all-invisible.
    """
    if window < 3 or window % 2 == 0:
        raise ValueError("window must be odd and >= 3")
    if search_radius < 1:
        raise ValueError("search_radius must be >= 1")
    frames = list(frames)
    grays = [fr.rgb.mean(axis=2) for fr in frames]
    h, w = frames[0].shape
    hw = window // 2
    r = search_radius

    vs, us = np.nonzero(mask.mask)
    m = us.size
    n_frames = len(frames)
    positions = np.zeros((m, 2, n_frames))
    visible = np.zeros((m, n_frames), dtype=bool)
    positions[:, 0, 0] = us
    positions[:, 1, 0] = vs
    visible[:, 0] = True

    cur_u = us.astype(np.int64).copy()
    cur_v = vs.astype(np.int64).copy()

    for f in range(1, n_frames):
        prev_gray = grays[f - 1]
        next_gray = grays[f]
        for i in range(m):
            pu, pv = cur_u[i], cur_v[i]
            track_ok = False
            if hw <= pu < w - hw and hw <= pv < h - hw:
                patch = prev_gray[pv - hw:pv + hw + 1, pu - hw:pu + hw + 1]
                # candidate match centers, clamped so the window fits the frame
                lo_v = max(pv - r, hw)
                hi_v = min(pv + r, h - 1 - hw)
                lo_u = max(pu - r, hw)
                hi_u = min(pu + r, w - 1 - hw)
                if lo_v <= hi_v and lo_u <= hi_u:
                    region = next_gray[lo_v - hw:hi_v + hw + 1, lo_u - hw:hi_u + hw + 1]
                    windows = np.lib.stride_tricks.sliding_window_view(region, (window, window))
                    scores = _zncc_scores(patch, windows)
                    best_flat = int(np.argmax(scores))  # first max = smallest (dv, du)
                    bv, bu = np.unravel_index(best_flat, scores.shape)
                    track_ok = scores[bv, bu] >= zncc_threshold
                    if track_ok:
                        # only a confident match moves the track; a failed
                        # one must not teleport it to an arbitrary argmax
                        cur_v[i] = lo_v + bv
                        cur_u[i] = lo_u + bu
            positions[i, 0, f] = cur_u[i]
            positions[i, 1, f] = cur_v[i]
            visible[i, f] = track_ok

    return TrackSet(positions, visible)
