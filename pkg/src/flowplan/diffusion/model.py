"""Noise-prediction network: a small U-Net with factorized space/time convs.

Input is the noisy RGBD video with the (projected) current observation
concatenated channel-wise onto every frame. Each block runs a spatial
convolution, adds a conditioning vector (task embedding plus sinusoidal
step embedding, linearly projected to the block width), applies SiLU, then
runs a temporal convolution and another SiLU. The encoder halves the
resolution after each block; the decoder mirrors it with nearest-neighbor
upsampling and skip concatenation. A 1x1 head maps the last block back to
4 channels.

Written against the hand-backprop layers so gradients stay checkable
against finite differences.
"""

from __future__ import annotations

from dataclasses import dataclass, field, asdict

import numpy as np

from ..errors import ShapeMismatch
from .. import io as fio
from . import layers as L


@dataclass
class ModelConfig:
    height: int = 16
    width: int = 16
    frames: int = 4
    base_channels: int = 16
    levels: int = 2
    spatial_kernel: int = 3
    temporal_kernel: int = 3
    emb_dim: int = 32
    num_tasks: int = 4
    task_names: list = field(default_factory=lambda: [])
    depth_min: float = 0.0
    depth_max: float = 2.0

    def __post_init__(self):
        if self.height % (2 ** self.levels) or self.width % (2 ** self.levels):
            raise ValueError("height and width must be divisible by 2^levels")

    @property
    def channels(self):
        """Per-level widths, encoder order, bottleneck last."""
        return [self.base_channels * 2 ** i for i in range(self.levels + 1)]

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**{k: d[k] for k in cls.__dataclass_fields__ if k in d})


def _glorot(rng, shape, fan_in, fan_out):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


def init_params(config: ModelConfig, rng) -> dict:
    """Fresh parameter dict; insertion order is the checkpoint blob order."""
    sk = config.spatial_kernel
    tk = config.temporal_kernel
    ch = config.channels
    p = {}
    p["obs_proj_w"] = _glorot(rng, (4, 4, 1, 1), 4, 4)
    p["obs_proj_b"] = np.zeros(4)
    p["task_embed"] = rng.normal(scale=0.5, size=(config.num_tasks, config.emb_dim))
    p["step_w"] = _glorot(rng, (config.emb_dim, config.emb_dim), config.emb_dim, config.emb_dim)
    p["step_b"] = np.zeros(config.emb_dim)

    def block(prefix, c_in, c_out):
        p[f"{prefix}_sw"] = _glorot(rng, (c_out, c_in, sk, sk), c_in * sk * sk, c_out * sk * sk)
        p[f"{prefix}_sb"] = np.zeros(c_out)
        p[f"{prefix}_ew"] = _glorot(rng, (c_out, config.emb_dim), config.emb_dim, c_out)
        p[f"{prefix}_tw"] = _glorot(rng, (c_out, c_out, tk), c_out * tk, c_out * tk)
        p[f"{prefix}_tb"] = np.zeros(c_out)

    c_in = 8  # 4 noisy channels + 4 observation channels
    for i in range(config.levels):
        block(f"enc{i}", c_in, ch[i])
        c_in = ch[i]
    block("mid", c_in, ch[-1])
    c_in = ch[-1]
    for i in reversed(range(config.levels)):
        block(f"dec{i}", c_in + ch[i], ch[i])
        c_in = ch[i]
    p["head_w"] = _glorot(rng, (4, ch[0], 1, 1), ch[0], 4)
    p["head_b"] = np.zeros(4)
    return p


def step_features(k, emb_dim):
    """Sinusoidal features of the denoising step index."""
    half = emb_dim // 2
    freqs = np.exp(-np.log(10000.0) * np.arange(half) / max(half - 1, 1))
    ang = k * freqs
    return np.concatenate([np.sin(ang), np.cos(ang)])


def _conditioning(params, config, task_id, k):
    feat = step_features(k, config.emb_dim)
    pre = params["step_w"] @ feat + params["step_b"]
    step_emb, step_cache = L.silu(pre)
    cond = params["task_embed"][task_id] + step_emb
    return cond, (feat, step_cache)


def _block_forward(params, prefix, h, cond):
    caches = {}
    h, caches["s"] = L.conv2d(h, params[f"{prefix}_sw"], params[f"{prefix}_sb"])
    h = h + (params[f"{prefix}_ew"] @ cond)[:, None, None, None]
    h, caches["a1"] = L.silu(h)
    h, caches["t"] = L.conv1d_time(h, params[f"{prefix}_tw"], params[f"{prefix}_tb"])
    h, caches["a2"] = L.silu(h)
    return h, caches


def _block_backward(params, prefix, dh, caches, grads, cond, dcond):
    dh = L.silu_backward(dh, caches["a2"])
    dh, dtw, dtb = L.conv1d_time_backward(dh, caches["t"])
    grads[f"{prefix}_tw"] += dtw
    grads[f"{prefix}_tb"] += dtb
    dh = L.silu_backward(dh, caches["a1"])
    demb = dh.sum(axis=(1, 2, 3))
    grads[f"{prefix}_ew"] += np.outer(demb, cond)
    dcond += params[f"{prefix}_ew"].T @ demb
    dh, dsw, dsb = L.conv2d_backward(dh, caches["s"])
    grads[f"{prefix}_sw"] += dsw
    grads[f"{prefix}_sb"] += dsb
    return dh, dcond


def forward(params, config: ModelConfig, noisy, task_id, obs, k, with_cache=False):
    """Predict the injected noise.

    noisy: (4, N, H, W), obs: (4, H, W), k: 1-based step index.
    Returns (4, N, H, W), plus the cache when requested.
    """
    if noisy.shape != (4, config.frames, config.height, config.width):
        raise ShapeMismatch(
            f"noisy video shape {noisy.shape} does not match config "
            f"(4, {config.frames}, {config.height}, {config.width})"
        )
    if obs.shape != (4, config.height, config.width):
        raise ShapeMismatch(f"observation shape {obs.shape} mismatches the config")
    if not 0 <= task_id < config.num_tasks:
        raise ValueError(f"task_id {task_id} outside 0..{config.num_tasks - 1}")

    cond, cond_cache = _conditioning(params, config, task_id, k)

    obs_in = obs[:, None, :, :]
    obs_feat, obs_cache = L.conv2d(obs_in, params["obs_proj_w"], params["obs_proj_b"])
    obs_tiled = np.broadcast_to(obs_feat, (4, config.frames, config.height, config.width))
    h = np.concatenate([noisy, obs_tiled], axis=0)

    caches = {"cond": cond_cache, "obs": obs_cache, "blocks": {}, "pools": [], "ups": []}
    skips = []
    for i in range(config.levels):
        h, bc = _block_forward(params, f"enc{i}", h, cond)
        caches["blocks"][f"enc{i}"] = bc
        skips.append(h)
        h, pc = L.avg_pool2(h)
        caches["pools"].append(pc)
    h, bc = _block_forward(params, "mid", h, cond)
    caches["blocks"]["mid"] = bc
    for i in reversed(range(config.levels)):
        h, uc = L.upsample2(h)
        caches["ups"].append(uc)
        caches[f"dec{i}_split"] = h.shape[0]
        h = np.concatenate([h, skips[i]], axis=0)
        h, bc = _block_forward(params, f"dec{i}", h, cond)
        caches["blocks"][f"dec{i}"] = bc
    out, head_cache = L.conv2d(h, params["head_w"], params["head_b"])
    caches["head"] = head_cache
    if with_cache:
        caches["cond_vec"] = cond
        caches["task_id"] = task_id
        return out, caches
    return out


def backward(params, config: ModelConfig, caches, dout):
    """Gradients of a scalar loss w.r.t. every parameter, given d(loss)/d(output)."""
    grads = {name: np.zeros_like(v) for name, v in params.items()}
    cond = caches["cond_vec"]
    dcond = np.zeros_like(cond)

    dh, dw, db = L.conv2d_backward(dout, caches["head"])
    grads["head_w"] += dw
    grads["head_b"] += db

    dskips = {}
    for i in range(config.levels):
        dh, dcond = _block_backward(params, f"dec{i}", dh, caches["blocks"][f"dec{i}"],
                                    grads, cond, dcond)
        split = caches[f"dec{i}_split"]
        dskips[i] = dh[split:]
        dh = L.upsample2_backward(dh[:split], caches["ups"][config.levels - 1 - i])

    dh, dcond = _block_backward(params, "mid", dh, caches["blocks"]["mid"], grads, cond, dcond)

    for i in reversed(range(config.levels)):
        dh = L.avg_pool2_backward(dh, caches["pools"][i])
        dh = dh + dskips[i]
        dh, dcond = _block_backward(params, f"enc{i}", dh, caches["blocks"][f"enc{i}"],
                                    grads, cond, dcond)

    # input channels: first 4 noisy, last 4 tiled observation features
    dobs_feat = dh[4:].sum(axis=1, keepdims=True)
    _, dw, db = L.conv2d_backward(dobs_feat, caches["obs"])
    grads["obs_proj_w"] += dw
    grads["obs_proj_b"] += db

    grads["task_embed"][caches["task_id"]] += dcond
    dpre = L.silu_backward(dcond, caches["cond"][1])
    grads["step_w"] += np.outer(dpre, caches["cond"][0])
    grads["step_b"] += dpre
    return grads


def checkpoint_config(config: ModelConfig, params: dict) -> dict:
    doc = config.to_dict()
    doc["blob_order"] = list(params.keys())
    return doc


def save_model(path, config: ModelConfig, params: dict):
    fio.write_checkpoint(path, checkpoint_config(config, params), params)


def load_model(path):
    doc, blobs = fio.read_checkpoint(path)
    return ModelConfig.from_dict(doc), blobs
