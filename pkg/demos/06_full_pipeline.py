"""The whole pipeline: observation and mask in, end-effector trajectory out,
then a closed-loop episode with replanning.

Run:  python demos/06_full_pipeline.py
"""

import numpy as np

from flowplan.geometry import compose, transform_distance
from flowplan.planner import EpisodeConfig, PlanConfig, plan, run_episode
from flowplan.simulator import generate_scene, sample_scene

scene = sample_scene(seed=11, n_steps=8)
frames, gt = generate_scene(scene)

config = PlanConfig(intrinsics=scene.intrinsics, max_width=0.25, mask_source="simulator")
trajectory = plan(frames[0], gt.masks[0], frames[1:], gt.tracks, config)

print(f"trajectory of {len(trajectory)} poses; provenance: {trajectory.provenance}")
print("grasp pose P0 translation:", np.round(trajectory.poses[0].translation, 4))

expected = trajectory.poses[0]
worst = 0.0
for n, t in enumerate(gt.transforms, start=1):
    expected = compose(t, expected)
    rot_err, tr_err = transform_distance(trajectory.poses[n], expected)
    worst = max(worst, rot_err, tr_err)
print(f"worst deviation from the scripted motion chain: {worst:.2e}")

print("\nclean closed-loop episode:")
print(" ", run_episode(scene, EpisodeConfig(seed=0)))

print("corrupted first execution (forces one replan):")
print(" ", run_episode(scene, EpisodeConfig(seed=0, corrupt_first_plan=True)))

print("hopeless tracking noise against a replan budget of 3:")
print(" ", run_episode(scene, EpisodeConfig(seed=0, track_noise_px=60.0, max_replans=3)))
