from .model import ModelConfig, backward, forward, init_params, load_model, save_model
from .process import (
    MODE_CUMULATIVE,
    MODE_PER_STEP,
    MODES,
    MomentumSGD,
    NoiseSchedule,
    add_noise,
    loss_and_grads,
    noise_loss,
    sample_video,
    train_model,
    train_step,
)
from .data import (build_clip_dataset, clip_tensor, frame_channels, from_hwcn,
                   tensor_to_frames, to_hwcn)

__all__ = [
    "ModelConfig", "backward", "forward", "init_params", "load_model", "save_model",
    "MODE_CUMULATIVE", "MODE_PER_STEP", "MODES", "MomentumSGD", "NoiseSchedule",
    "add_noise", "loss_and_grads", "noise_loss", "sample_video", "train_model",
    "train_step", "build_clip_dataset", "clip_tensor", "frame_channels",
    "from_hwcn", "tensor_to_frames", "to_hwcn",
]
