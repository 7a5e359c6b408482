"""Clip datasets for the video model, rendered by the simulator.

A clip is N future frames after an observation frame; both are packed as
4-channel tensors (r, g, b, normalized depth). Depth maps to [0, 1] with
dataset-wide constants that live in the model config, so sampling can run
from a checkpoint alone. Invalid depth packs as 0.
"""

from __future__ import annotations

import numpy as np

from ..geometry import RgbdFrame
from ..simulator import TASKS, generate_scene, sample_task_scene
from .model import ModelConfig


def frame_channels(frame: RgbdFrame, depth_min, depth_max):
    """(4, H, W) tensor: rgb plus depth normalized to [0, 1]."""
    scale = max(depth_max - depth_min, 1e-9)
    depth = np.where(frame.valid, (frame.depth - depth_min) / scale, 0.0)
    return np.concatenate([frame.rgb.transpose(2, 0, 1), depth[None]], axis=0)


def clip_tensor(frames, depth_min, depth_max):
    """(4, N, H, W) tensor from N frames."""
    return np.stack([frame_channels(f, depth_min, depth_max) for f in frames], axis=1)


def to_hwcn(video):
    """(4, N, H, W) internal layout -> (H, W, 4, N) public video tensor."""
    return np.transpose(video, (2, 3, 0, 1))


def from_hwcn(video):
    """(H, W, 4, N) public video tensor -> (4, N, H, W) internal layout."""
    return np.transpose(video, (2, 3, 0, 1))


def tensor_to_frames(video, depth_min, depth_max):
    """Back to RgbdFrame objects; depth 0 decodes as invalid."""
    frames = []
    scale = depth_max - depth_min
    for n in range(video.shape[1]):
        rgb = np.clip(video[:3, n].transpose(1, 2, 0), 0.0, 1.0)
        dn = video[3, n]
        valid = dn > 1e-6
        depth = np.where(valid, dn * scale + depth_min, 0.0)
        frames.append(RgbdFrame(rgb, depth, valid))
    return frames


def build_clip_dataset(num_clips, seed, height=16, width=16, frames=4):
    """Render clips and pack them for training.

    Returns (items, config) where items are (clean, task_id, obs) tuples
    and config carries the depth normalization and task vocabulary.
    """
    raw = []
    depth_min = np.inf
    depth_max = -np.inf
    for i in range(num_clips):
        task_id = i % len(TASKS)
        scene = sample_task_scene(seed + i, task_id, width=width, height=height,
                                  n_steps=frames)
        rendered, _ = generate_scene(scene)
        for fr in rendered:
            if fr.valid.any():
                depth_min = min(depth_min, float(fr.depth[fr.valid].min()))
                depth_max = max(depth_max, float(fr.depth[fr.valid].max()))
        raw.append((rendered, task_id))

    config = ModelConfig(height=height, width=width, frames=frames,
                         num_tasks=len(TASKS), task_names=list(TASKS),
                         depth_min=depth_min, depth_max=depth_max)
    items = []
    for rendered, task_id in raw:
        obs = frame_channels(rendered[0], depth_min, depth_max)
        clean = clip_tensor(rendered[1:], depth_min, depth_max)
        items.append((clean, task_id, obs))
    return items, config
