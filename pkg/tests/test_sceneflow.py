import numpy as np
import pytest

from flowplan.errors import AllInvalid, ShapeMismatch, TooFewPoints
from flowplan.geometry import PartMask, RgbdFrame, RigidTransform
from flowplan.sceneflow import (
    SceneFlowField,
    TrackSet,
    block_match_tracks,
    build_scene_flow,
    nearest_pixel,
)
from flowplan.simulator import (
    PART_ID,
    SyntheticScene,
    default_intrinsics,
    generate_scene,
    plane_quad,
    sample_scene,
)

INTR = default_intrinsics()


def flat_frame(depth_value=1.0, h=96, w=128, rgb=None):
    if rgb is None:
        rgb = np.zeros((h, w, 3))
    return RgbdFrame(rgb, np.full((h, w), depth_value), np.ones((h, w), bool))


def static_tracks(m=5, n_frames=4):
    rng = np.random.default_rng(7)
    pos0 = np.stack([rng.uniform(10, 100, m), rng.uniform(10, 80, m)], axis=0)
    positions = np.repeat(pos0[None].transpose(1, 0, 2)[..., None] if False else pos0.T[:, :, None], n_frames, axis=2)
    return TrackSet(positions, np.ones((m, n_frames), bool))


class TestBuildSceneFlow:
    def test_static_tracks_zero_flow(self):
        tracks = static_tracks()
        frames = [flat_frame() for _ in range(4)]
        flow = build_scene_flow(tracks, frames, INTR)
        assert flow.valid.all()
        np.testing.assert_array_equal(flow.displacements, 0.0)

    def test_translation_scene_flow_matches_script(self):
        step = RigidTransform(np.eye(3), [0.004, -0.003, 0.01])
        rng = np.random.default_rng(3)
        part = [plane_quad([0, 0, 0.7], 0.06, 0.05, rng.uniform(0, 1, (8, 8, 3)), PART_ID)]
        wall = [plane_quad([0, 0, 1.8], 1.6, 1.3, rng.uniform(0, 0.4, (6, 6, 3)), 2)]
        scene = SyntheticScene(part, wall, [step] * 4, INTR)
        frames, gt = generate_scene(scene)
        flow = build_scene_flow(gt.tracks, frames, INTR)
        for n in range(4):
            v = flow.valid[:, n]
            assert v.sum() > 100
            err = flow.displacements[v, :, n] - step.translation
            assert np.abs(err).max() < 1e-12

    def test_reproduces_gt_flow_exactly(self):
        # oracle tracks + rendered depth reproduce the transform-implied flow
        for seed in (4, 5):
            scene = sample_scene(seed)
            frames, gt = generate_scene(scene)
            flow = build_scene_flow(gt.tracks, frames, scene.intrinsics)
            np.testing.assert_array_equal(flow.valid, gt.flow.valid)
            assert np.abs(flow.displacements - gt.flow.displacements).max() < 1e-12

    def test_invisible_subset_leaves_rest_unchanged(self):
        scene = sample_scene(6)
        frames, gt = generate_scene(scene)
        flow_full = build_scene_flow(gt.tracks, frames, scene.intrinsics)

        visible = gt.tracks.visible.copy()
        rng = np.random.default_rng(0)
        drop = rng.choice(gt.tracks.num_points, size=gt.tracks.num_points // 3, replace=False)
        visible[drop, :] = False
        flow_part = build_scene_flow(TrackSet(gt.tracks.positions, visible), frames, scene.intrinsics)

        keep = np.ones(gt.tracks.num_points, bool)
        keep[drop] = False
        np.testing.assert_array_equal(
            flow_part.displacements[keep], flow_full.displacements[keep])
        np.testing.assert_array_equal(flow_part.valid[keep], flow_full.valid[keep])
        assert not flow_part.valid[drop].any()

    def test_rigid_flow_preserves_distances(self):
        scene = sample_scene(8)
        frames, gt = generate_scene(scene)
        flow = build_scene_flow(gt.tracks, frames, scene.intrinsics)
        p0 = gt.cloud0.points
        for n in range(flow.num_steps):
            v = np.nonzero(flow.valid[:, n] if n == 0 else flow.valid[:, :n + 1].all(axis=1))[0][:40]
            if v.size < 2:
                continue
            moved = p0[v] + flow.displacements[v, :, :n + 1].sum(axis=2)
            d_before = np.linalg.norm(p0[v][:, None] - p0[v][None, :], axis=-1)
            d_after = np.linalg.norm(moved[:, None] - moved[None, :], axis=-1)
            np.testing.assert_allclose(d_after, d_before, atol=1e-9)

    def test_too_few_points(self):
        positions = np.zeros((2, 2, 3))
        tracks = TrackSet(positions, np.ones((2, 3), bool))
        with pytest.raises(TooFewPoints):
            build_scene_flow(tracks, [flat_frame()] * 3, INTR)

    def test_all_invalid(self):
        tracks = static_tracks()
        visible = np.zeros_like(tracks.visible)
        visible[:, 0] = True  # no step has both endpoints visible
        with pytest.raises(AllInvalid):
            build_scene_flow(TrackSet(tracks.positions, visible), [flat_frame()] * 4, INTR)

    def test_frame_count_mismatch(self):
        with pytest.raises(ShapeMismatch):
            build_scene_flow(static_tracks(), [flat_frame()] * 3, INTR)

    def test_nearest_pixel_rounding(self):
        u, v = nearest_pixel([1.4, 1.5, -0.4], [0.49, 2.51, 0.5])
        np.testing.assert_array_equal(u, [1, 2, 0])
        np.testing.assert_array_equal(v, [0, 3, 1])


class TestBlockMatch:
    def test_identical_frames_zero_motion(self):
        rng = np.random.default_rng(1)
        frame = flat_frame(rgb=rng.uniform(size=(96, 128, 3)))
        mask = np.zeros((96, 128), bool)
        mask[40:50, 60:70] = True
        tracks = block_match_tracks([frame, frame, frame], PartMask(mask))
        assert tracks.visible.all()
        np.testing.assert_array_equal(tracks.positions[:, :, 0], tracks.positions[:, :, 2])

    def test_one_pixel_translation_scene(self):
        # 1 px/frame lateral slide: >= 90% of tracks within 1 px of truth
        z0 = 0.7
        dx = z0 / INTR.fx  # one pixel at the part's depth
        rng = np.random.default_rng(9)
        part = [plane_quad([0, 0, z0], 0.07, 0.06, rng.uniform(0, 1, (24, 24, 3)), PART_ID)]
        wall = [plane_quad([0, 0, 1.8], 1.6, 1.3, rng.uniform(0, 0.3, (6, 6, 3)), 2)]
        scene = SyntheticScene(part, wall, [RigidTransform(np.eye(3), [dx, 0, 0])] * 4, INTR)
        frames, gt = generate_scene(scene)
        tracks = block_match_tracks(frames, gt.masks[0], window=7, search_radius=4)
        last = tracks.positions[:, :, 4]
        truth = gt.tracks.positions[:, :, 4]
        ok = gt.tracks.visible[:, 4]
        err = np.linalg.norm(last[ok] - truth[ok], axis=1)
        assert (err <= 1.0).mean() >= 0.9

    def test_textureless_part_collapses(self):
        uniform = np.full((4, 4, 3), 0.5)
        part = [plane_quad([0, 0, 0.7], 0.15, 0.12, uniform, PART_ID)]
        wall = [plane_quad([0, 0, 1.8], 1.6, 1.3, np.full((4, 4, 3), 0.2), 2)]
        scene = SyntheticScene(part, wall, [RigidTransform(np.eye(3), [0.005, 0, 0])] * 2, INTR)
        frames, gt = generate_scene(scene)
        tracks = block_match_tracks(frames, gt.masks[0], window=7)
        # away from the silhouette there is no contrast at all: no evidence
        vs, us = np.nonzero(gt.masks[0].mask)
        margin = 5
        interior_sel = ((us > us.min() + margin) & (us < us.max() - margin)
                        & (vs > vs.min() + margin) & (vs < vs.max() - margin))
        assert interior_sel.sum() > 200
        assert tracks.visible[interior_sel, 1:].mean() < 0.05

    def test_parameter_validation(self):
        frame = flat_frame()
        mask = PartMask(np.ones((96, 128), bool))
        with pytest.raises(ValueError):
            block_match_tracks([frame], mask, window=4)
        with pytest.raises(ValueError):
            block_match_tracks([frame], mask, search_radius=0)


class TestSceneFlowField:
    def test_zero_fills_invalid(self):
        disp = np.ones((3, 3, 2))
        valid = np.zeros((3, 2), bool)
        valid[0, 0] = True
        flow = SceneFlowField(disp, valid)
        assert flow.displacements[0, 0, 0] == 1.0
        assert flow.displacements[1, :, :].sum() == 0.0

    def test_rejects_nonfinite_valid(self):
        disp = np.full((3, 3, 1), np.nan)
        with pytest.raises(ValueError):
            SceneFlowField(disp, np.ones((3, 1), bool))
