"""Train the toy RGBD video model for a moment and sample from it.

Deliberately abbreviated (small model, 120 steps) so it runs in well under
a minute; the acceptance suite does the full 500-step run.

Run:  python demos/05_toy_video_diffusion.py
"""

import numpy as np

from flowplan.diffusion import (
    NoiseSchedule, build_clip_dataset, init_params, sample_video, train_model,
)

items, config = build_clip_dataset(16, seed=5, height=8, width=8, frames=2)
print(f"dataset: {len(items)} clips of shape {items[0][0].shape} "
      f"(channels, frames, H, W)")
print(f"depth normalized with range [{config.depth_min:.2f}, {config.depth_max:.2f}] m")

schedule = NoiseSchedule.linear(20)
rng = np.random.default_rng(0)
params = init_params(config, rng)
print(f"model: {sum(v.size for v in params.values())} parameters "
      f"in {len(params)} blocks")

losses = train_model(params, config, items, schedule, rng, steps=120, batch_size=4)
print(f"loss: {np.mean(losses[:5]):.1f} -> {np.mean(losses[-20:]):.1f} "
      f"over {len(losses)} steps")

clean, task_id, obs = items[0]
video = sample_video(params, config, obs, task_id, schedule, np.random.default_rng(1))
print(f"\nsampled video shape {video.shape}, value range "
      f"[{video.min():.2f}, {video.max():.2f}]")

clips = np.stack([c for c, _, _ in items])
dist = np.sqrt(np.mean((clips - video[None]) ** 2, axis=(1, 2, 3, 4)))
print(f"nearest training clip distance: {dist.min():.3f}")
