import numpy as np
import pytest

from flowplan.errors import BehindCamera, EmptySelection, ShapeMismatch
from flowplan.geometry import (
    CameraIntrinsics,
    PartMask,
    PointCloud,
    RgbdFrame,
    RigidTransform,
    apply_transform,
    compose,
    project,
    to_homogeneous,
    unproject,
)
from conftest import random_transform

K = CameraIntrinsics(fx=100.0, fy=100.0, cx=64.0, cy=48.0, width=128, height=96)


def make_frame(depth_value=2.0):
    h, w = K.height, K.width
    depth = np.full((h, w), depth_value)
    return RgbdFrame(rgb=np.zeros((h, w, 3)), depth=depth, valid=np.ones((h, w), bool))


def single_pixel_mask(u, v):
    m = np.zeros((K.height, K.width), bool)
    m[v, u] = True
    return PartMask(m)


class TestUnproject:
    def test_principal_point_ray(self):
        cloud = unproject(make_frame(2.0), single_pixel_mask(64, 48), K)
        np.testing.assert_allclose(cloud.points, [[0.0, 0.0, 2.0]])
        np.testing.assert_array_equal(cloud.source_pixels, [[64, 48]])

    def test_unit_slope_ray(self):
        # pixel (cx + fx, cy) is off this 128-wide image, so use fx=60
        k = CameraIntrinsics(fx=60.0, fy=60.0, cx=64.0, cy=48.0, width=128, height=96)
        frame = make_frame(1.0)
        cloud = unproject(frame, single_pixel_mask(int(k.cx + k.fx), int(k.cy)), k)
        np.testing.assert_allclose(cloud.points, [[1.0, 0.0, 1.0]])

    def test_empty_selection(self):
        frame = make_frame()
        frame.valid[:] = False
        frame.depth[:] = 0.0
        with pytest.raises(EmptySelection):
            unproject(frame, single_pixel_mask(10, 10), K)

    def test_mask_shape_mismatch(self):
        with pytest.raises(ShapeMismatch):
            unproject(make_frame(), PartMask(np.ones((4, 4), bool)), K)

    def test_roundtrip_oracle(self, rng):
        # project(unproject(pixel)) must give back the pixel, 1000 random pixels
        h, w = K.height, K.width
        depth = rng.uniform(0.3, 5.0, size=(h, w))
        frame = RgbdFrame(np.zeros((h, w, 3)), depth, np.ones((h, w), bool))
        mask = np.zeros((h, w), bool)
        vs = rng.integers(0, h, size=1000)
        us = rng.integers(0, w, size=1000)
        mask[vs, us] = True
        cloud = unproject(frame, PartMask(mask), K)
        u2, v2, d2 = project(cloud.points, K)
        np.testing.assert_allclose(u2, cloud.source_pixels[:, 0], atol=1e-9)
        np.testing.assert_allclose(v2, cloud.source_pixels[:, 1], atol=1e-9)
        np.testing.assert_allclose(d2, depth[cloud.source_pixels[:, 1], cloud.source_pixels[:, 0]], atol=1e-12)


class TestProject:
    def test_principal_axis(self):
        assert project(np.array([0.0, 0.0, 1.0]), K) == (64.0, 48.0, 1.0)

    def test_unit_offset(self):
        u, v, d = project(np.array([1.0, 0.0, 1.0]), K)
        assert (u, v, d) == (164.0, 48.0, 1.0)

    def test_behind_camera(self):
        with pytest.raises(BehindCamera):
            project(np.array([0.0, 0.0, -1.0]), K)
        with pytest.raises(BehindCamera):
            project(np.array([0.0, 0.0, 0.0]), K)


class TestHomogeneous:
    def test_single_point(self):
        cloud = PointCloud(np.array([[1.0, 2.0, 3.0]]), np.array([[0, 0]]))
        np.testing.assert_array_equal(to_homogeneous(cloud), [[1.0, 2.0, 3.0, 1.0]])

    def test_shape_oracle(self, rng):
        m = 100
        cloud = PointCloud(rng.normal(size=(m, 3)), np.zeros((m, 2), int))
        h = to_homogeneous(cloud)
        assert h.shape == (m, 4)
        assert h[:, 3].sum() == m


class TestRigidTransform:
    def test_identity_apply(self, rng):
        cloud = PointCloud(rng.normal(size=(10, 3)), np.zeros((10, 2), int))
        out = apply_transform(RigidTransform.identity(), cloud)
        np.testing.assert_array_equal(out.points, cloud.points)

    def test_pure_translation(self):
        t = RigidTransform(np.eye(3), np.array([0.0, 0.0, 1.0]))
        cloud = PointCloud(np.array([[1.0, 1.0, 1.0]]), np.array([[0, 0]]))
        np.testing.assert_allclose(apply_transform(t, cloud).points, [[1.0, 1.0, 2.0]])

    def test_isometry_oracle(self, rng):
        # a rigid transform must preserve all pairwise distances
        cloud = PointCloud(rng.uniform(-1, 1, size=(50, 3)), np.zeros((50, 2), int))
        t = random_transform(rng)
        out = apply_transform(t, cloud)
        d_before = np.linalg.norm(cloud.points[:, None] - cloud.points[None, :], axis=-1)
        d_after = np.linalg.norm(out.points[:, None] - out.points[None, :], axis=-1)
        np.testing.assert_allclose(d_after, d_before, rtol=1e-10, atol=1e-12)

    def test_rejects_reflection(self):
        r = np.diag([1.0, 1.0, -1.0])
        with pytest.raises(ValueError):
            RigidTransform(r, np.zeros(3))

    def test_rejects_non_orthonormal(self):
        r = np.eye(3)
        r[0, 1] = 1e-3
        with pytest.raises(ValueError):
            RigidTransform(r, np.zeros(3))

    def test_accepts_tiny_drift(self):
        r = np.eye(3)
        r[0, 1] = 1e-9
        RigidTransform(r, np.zeros(3))

    def test_matrix_roundtrip(self, rng):
        t = random_transform(rng)
        t2 = RigidTransform.from_matrix(t.as_matrix())
        np.testing.assert_array_equal(t2.rotation, t.rotation)
        np.testing.assert_array_equal(t2.translation, t.translation)


class TestCompose:
    def test_identity(self, rng):
        t = random_transform(rng)
        c = compose(t, RigidTransform.identity())
        np.testing.assert_allclose(c.rotation, t.rotation, atol=1e-15)
        np.testing.assert_allclose(c.translation, t.translation, atol=1e-15)

    def test_inverse(self, rng):
        t = random_transform(rng)
        c = compose(t, t.inverse())
        np.testing.assert_allclose(c.rotation, np.eye(3), atol=1e-12)
        np.testing.assert_allclose(c.translation, np.zeros(3), atol=1e-12)

    def test_application_order(self, rng):
        # compose(a, b) applies b first
        a = random_transform(rng)
        b = random_transform(rng)
        p = rng.normal(size=3)
        np.testing.assert_allclose(compose(a, b).apply(p), a.apply(b.apply(p)), atol=1e-12)

    def test_associativity_oracle(self, rng):
        for _ in range(1000):
            a, b, c = (random_transform(rng) for _ in range(3))
            left = compose(compose(a, b), c)
            right = compose(a, compose(b, c))
            assert np.linalg.norm(left.rotation - right.rotation) < 1e-10
            assert np.linalg.norm(left.translation - right.translation) < 1e-10


class TestIntrinsicsValidation:
    def test_rejects_bad_focal(self):
        with pytest.raises(ValueError):
            CameraIntrinsics(fx=-1, fy=1, cx=0, cy=0, width=10, height=10)

    def test_rejects_principal_point_outside(self):
        with pytest.raises(ValueError):
            CameraIntrinsics(fx=1, fy=1, cx=10, cy=0, width=10, height=10)


class TestFrameValidation:
    def test_rejects_nonpositive_valid_depth(self):
        depth = np.zeros((4, 4))
        with pytest.raises(ValueError):
            RgbdFrame(np.zeros((4, 4, 3)), depth, np.ones((4, 4), bool))

    def test_rejects_shape_mismatch(self):
        with pytest.raises(ShapeMismatch):
            RgbdFrame(np.zeros((4, 5, 3)), np.ones((4, 4)), np.ones((4, 4), bool))
