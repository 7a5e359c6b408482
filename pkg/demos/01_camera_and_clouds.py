"""Pinhole camera basics: lift masked RGBD pixels to 3D and project back.

Run:  python demos/01_camera_and_clouds.py
"""

import numpy as np

from flowplan.geometry import (
    CameraIntrinsics, PartMask, RgbdFrame, RigidTransform,
    apply_transform, project, to_homogeneous, unproject,
)

K = CameraIntrinsics(fx=100.0, fy=100.0, cx=63.5, cy=47.5, width=128, height=96)
print("intrinsics:", K)

# a synthetic frame: a tilted depth ramp with a rectangular mask
h, w = K.height, K.width
depth = 0.5 + 0.002 * np.arange(w)[None, :] + np.zeros((h, 1))
frame = RgbdFrame(rgb=np.zeros((h, w, 3)), depth=depth, valid=np.ones((h, w), bool))
mask = np.zeros((h, w), bool)
mask[40:56, 50:80] = True

cloud = unproject(frame, PartMask(mask), K)
print(f"\nlifted {len(cloud)} masked pixels to 3D")
print("first three points (m):\n", cloud.points[:3])
print("homogeneous form of the first point:", to_homogeneous(cloud)[0])

# projecting back lands on the source pixels
u, v, d = project(cloud.points, K)
err = np.hypot(u - cloud.source_pixels[:, 0], v - cloud.source_pixels[:, 1])
print(f"\nproject(unproject(p)) pixel error: max {err.max():.2e} px")

# rigid moves preserve shape: pairwise distances are unchanged
move = RigidTransform(np.eye(3), np.array([0.05, -0.02, 0.1]))
moved = apply_transform(move, cloud)
d0 = np.linalg.norm(cloud.points[0] - cloud.points[-1])
d1 = np.linalg.norm(moved.points[0] - moved.points[-1])
print(f"pairwise distance before/after a rigid move: {d0:.6f} / {d1:.6f} m")
