"""Grasp proposal and collision filtering on point clouds.

A thin slab invites a grasp across its thin side; a wall next to it kills
every approach that would sweep through the wall.

Run:  python demos/04_grasp_selection.py
"""

import numpy as np

from flowplan.geometry import PointCloud
from flowplan.grasp import GripperModel, build_occupancy, filter_collisions, propose_grasps

rng = np.random.default_rng(3)


def cloud(points):
    return PointCloud(points, np.zeros((len(points), 2), int))


# a 2 x 8 x 8 cm slab 60 cm in front of the camera
part_pts = rng.uniform(-0.5, 0.5, (800, 3)) * [0.02, 0.08, 0.08] + [0, 0, 0.6]
part = cloud(part_pts)

candidates = propose_grasps(part, max_width=0.04)
print(f"{len(candidates)} candidates; best score {candidates[0].score:.3f}")
closing = candidates[0].pose.rotation[:, 0]
print("closing axis of the best candidate:", np.round(closing, 3),
      "(should be ~ the thin x axis)")
print(f"opening width: {candidates[0].width * 1000:.1f} mm")

# scene: the part plus a back wall; everything is free around the part
back = rng.uniform(-0.5, 0.5, (1500, 3)) * [0.8, 0.6, 0.0] + [0, 0, 1.5]
scene = cloud(np.vstack([part_pts, back]))
grid = build_occupancy(scene, voxel_size=0.005)
print(f"\noccupancy grid dims {grid.dims}, {int(grid.occupied.sum())} voxels occupied")

best = filter_collisions(candidates, grid, GripperModel(), part)
print("selected grasp translation:", np.round(best.pose.translation, 4))

# add a wall hugging the part from above: fewer approaches survive
wall = rng.uniform(-0.5, 0.5, (4000, 3)) * [0.3, 0.0, 0.3] + [0, 0.055, 0.6]
crowded = cloud(np.vstack([part_pts, back, wall]))
grid2 = build_occupancy(crowded, voxel_size=0.005)
survivors = []
for c in candidates:
    try:
        filter_collisions([c], grid2, GripperModel(), part)
        survivors.append(c)
    except Exception:
        pass
print(f"\nwith a wall above the part: {len(survivors)}/{len(candidates)} candidates survive")
