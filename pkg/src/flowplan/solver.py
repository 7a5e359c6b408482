"""Closed-form rigid-transform fitting from point displacements.

Given points p and per-point displacements s, finds the transform T in
SE(3) minimizing sum of w_i * ||R p_i + t - (p_i + s_i)||^2. The weighted
Kabsch construction (SVD of the cross-covariance, see Arun/Kabsch/Umeyama,
https://en.wikipedia.org/wiki/Kabsch_algorithm) gives the global optimum in
closed form; a determinant correction keeps the solution a proper rotation
even for planar point sets where the unconstrained optimum is a reflection.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateGeometry, FlowPlanError, SequenceFitError, TooFewPoints
from .geometry import PointCloud, RigidTransform

# Relative eigenvalue ratio below which the source points count as collinear.
COLLINEAR_EIG_RATIO = 1e-12


@dataclass
class TransformFitResult:
    """A fitted transform with its residual and the points that support it."""

    transform: RigidTransform
    rms_residual: float
    inlier_count: int
    inlier_mask: np.ndarray


def _as_points(source):
    if isinstance(source, PointCloud):
        return source.points
    return np.asarray(source, dtype=np.float64)


def _select(source, displacements, valid):
    points = _as_points(source)
    displacements = np.asarray(displacements, dtype=np.float64)
    m = points.shape[0]
    if valid is None:
        valid = np.ones(m, dtype=bool)
    else:
        valid = np.asarray(valid, dtype=bool)
    # points with unknown (non-finite) positions cannot support a fit
    usable = valid & np.all(np.isfinite(points), axis=1) & np.all(np.isfinite(displacements), axis=1)
    return points, displacements, usable


def _check_collinear(points_centered, weights):
    cov = points_centered.T @ (weights[:, None] * points_centered)
    eig = np.linalg.eigvalsh(cov)  # ascending
    if eig[2] <= 0 or eig[1] <= COLLINEAR_EIG_RATIO * eig[2]:
        raise DegenerateGeometry(
            "valid points are collinear; rotation about the line is unobservable"
        )


def _kabsch(p, q, weights):
    wsum = weights.sum()
    c_src = (weights[:, None] * p).sum(axis=0) / wsum
    c_tgt = (weights[:, None] * q).sum(axis=0) / wsum
    p_c = p - c_src
    q_c = q - c_tgt
    h = p_c.T @ (weights[:, None] * q_c)
    u, _, vt = np.linalg.svd(h)
    v = vt.T
    d = np.sign(np.linalg.det(v @ u.T))
    r = v @ np.diag([1.0, 1.0, d]) @ u.T
    t = c_tgt - r @ c_src
    return r, t


def fit_rigid(source, displacements, valid=None, weights=None) -> TransformFitResult:
    """Least-squares rigid transform taking each point p to p + s.

    Args:
        source: PointCloud or (M, 3) array of points.
        displacements: (M, 3) per-point motion vectors.
        valid: optional (M,) boolean; invalid rows are ignored.
        weights: optional (M,) nonnegative per-point weights (default uniform).

    Returns:
        TransformFitResult with the global optimum of the weighted objective.

    Raises:
        TooFewPoints: fewer than 3 usable points.
        DegenerateGeometry: usable points are collinear.
    """
    points, displacements, usable = _select(source, displacements, valid)
    n = int(usable.sum())
    if n < 3:
        raise TooFewPoints(f"need at least 3 valid points, got {n}")
    p = points[usable]
    q = p + displacements[usable]
    if weights is None:
        w = np.ones(n)
    else:
        w = np.asarray(weights, dtype=np.float64)[usable]
        if np.any(w < 0):
            raise ValueError("weights must be nonnegative")
        if w.sum() <= 0:
            raise TooFewPoints("all usable points have zero weight")

    wsum = w.sum()
    c_src = (w[:, None] * p).sum(axis=0) / wsum
    _check_collinear(p - c_src, w)

    r, t = _kabsch(p, q, w)
    transform = RigidTransform(r, t)
    residuals = np.linalg.norm(p @ r.T + t - q, axis=1)
    rms = float(np.sqrt((w * residuals**2).sum() / wsum))
    mask = usable.copy()
    return TransformFitResult(transform, rms, n, mask)


def fit_rigid_ransac(source, displacements, valid=None, iterations=100,
                     threshold=0.01, seed=0, weights=None) -> TransformFitResult:
    """RANSAC wrapper around fit_rigid for displacement fields with outliers.

    Samples minimal 3-point models, scores them by inlier count with ties
    broken by lower inlier residual then lower iteration index, and refines
    the winner with a full fit on its inliers. Deterministic given seed.

    Raises:
        TooFewPoints: fewer than 3 usable points, or no sampled model
            reached 3 inliers.
    """
    if iterations < 1:
        raise ValueError("iterations must be >= 1")
    if threshold <= 0:
        raise ValueError("threshold must be positive")
    points, displacements, usable = _select(source, displacements, valid)
    idx = np.nonzero(usable)[0]
    if idx.size < 3:
        raise TooFewPoints(f"need at least 3 valid points, got {idx.size}")
    p = points[idx]
    q = p + displacements[idx]
    rng = np.random.default_rng(seed)  # int or SeedSequence

    best = None  # (count, rms_on_inliers, iteration, inlier_subset)
    ones3 = np.ones(3)
    for it in range(iterations):
        sample = rng.choice(idx.size, size=3, replace=False)
        ps = p[sample]
        qs = q[sample]
        centered = ps - ps.mean(axis=0)
        cov = centered.T @ centered
        eig = np.linalg.eigvalsh(cov)
        if eig[2] <= 0 or eig[1] <= COLLINEAR_EIG_RATIO * eig[2]:
            continue
        r, t = _kabsch(ps, qs, ones3)
        residuals = np.linalg.norm(p @ r.T + t - q, axis=1)
        inliers = residuals <= threshold
        count = int(inliers.sum())
        if count < 3:
            continue
        rms = float(np.sqrt(np.mean(residuals[inliers] ** 2)))
        key = (-count, rms, it)
        if best is None or key < best[0]:
            best = (key, inliers)

    if best is None:
        raise TooFewPoints("no sampled model reached 3 inliers")

    inlier_subset = best[1]
    sub_valid = np.zeros(points.shape[0], dtype=bool)
    sub_valid[idx[inlier_subset]] = True
    refined = fit_rigid(points, displacements, valid=sub_valid, weights=weights)

    # re-score the refined transform against every usable point
    r, t = refined.transform.rotation, refined.transform.translation
    residuals = np.linalg.norm(p @ r.T + t - q, axis=1)
    final_inliers = residuals <= threshold
    mask = np.zeros(points.shape[0], dtype=bool)
    mask[idx[final_inliers]] = True
    count = int(final_inliers.sum())
    rms = float(np.sqrt(np.mean(residuals[final_inliers] ** 2))) if count else float("inf")
    return TransformFitResult(refined.transform, rms, count, mask)


def solve_transform_sequence(cloud0: PointCloud, flow, robust=False,
                             ransac_iterations=100, ransac_threshold=0.01,
                             seed=0, weights=None):
    """Fit one rigid transform per flow step, tracking points by their flow.

    Point positions advance by the flow itself (p_n = p_{n-1} + s_n), never
    by the fitted transform, so each fit stays anchored to the tracked
    evidence. A point that misses a step has an unknown position from then
    on and is excluded from later fits (its position becomes NaN and stays
    NaN).

    Args:
        cloud0: part points at frame 0; a PointCloud or an (M, 3) array
            (NaN rows mark points with unknown positions).
        flow: object with displacements (M, 3, N) and valid (M, N).

    Returns:
        list of N TransformFitResult.

    Raises:
        SequenceFitError: a step failed; carries the step index and the
            results solved so far.
    """
    displacements = np.asarray(flow.displacements, dtype=np.float64)
    valid = np.asarray(flow.valid, dtype=bool)
    m, _, n_steps = displacements.shape
    points0 = _as_points(cloud0)
    if points0.shape[0] != m:
        raise TooFewPoints(f"flow is dimensioned for {m} points, cloud has {points0.shape[0]}")

    p = points0.copy()
    results = []
    for n in range(1, n_steps + 1):
        d = displacements[:, :, n - 1]
        v = valid[:, n - 1]
        try:
            if robust:
                step_seed = np.random.SeedSequence([seed, n])
                fit = fit_rigid_ransac(p, d, valid=v, iterations=ransac_iterations,
                                       threshold=ransac_threshold,
                                       seed=step_seed, weights=weights)
            else:
                fit = fit_rigid(p, d, valid=v, weights=weights)
        except FlowPlanError as err:
            raise SequenceFitError(n, err, results) from err
        results.append(fit)
        p = p + np.where(v[:, None], d, np.nan)
    return results


def depth_weights(points: np.ndarray) -> np.ndarray:
    """Optional 1/z^2 down-weighting of far points (off by default upstream)."""
    z = np.asarray(points, dtype=np.float64)[:, 2]
    return 1.0 / np.maximum(z, 1e-9) ** 2
