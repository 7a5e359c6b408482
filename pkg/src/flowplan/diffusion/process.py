"""Noise schedule, corruption, training, and sampling for the video model.

Two corruption/sampling formulations are available:

    per_step (default): corrupt with sqrt(1 - beta_k) * x + sqrt(beta_k) * eps
        and sample by plain subtraction x_{k-1} = x_k - eps_hat(x_k, k).
    cumulative: the standard DDPM form with alpha_bar products and an
        ancestral sampler.

The mode in force is recorded in run metadata so outputs are attributable.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import NonFiniteLoss, NonFiniteSample, ShapeMismatch
from .model import ModelConfig, backward, forward

MODE_PER_STEP = "per_step"
MODE_CUMULATIVE = "cumulative"
MODES = (MODE_PER_STEP, MODE_CUMULATIVE)


@dataclass
class NoiseSchedule:
    betas: np.ndarray

    def __post_init__(self):
        self.betas = np.asarray(self.betas, dtype=np.float64)
        if self.betas.ndim != 1 or self.betas.size < 1:
            raise ValueError("schedule needs at least one beta")
        if np.any(self.betas <= 0) or np.any(self.betas >= 1):
            raise ValueError("every beta must lie strictly inside (0, 1)")

    @classmethod
    def linear(cls, steps=50, beta_start=1e-4, beta_end=0.2):
        return cls(np.linspace(beta_start, beta_end, steps))

    @property
    def num_steps(self) -> int:
        return self.betas.size

    @property
    def alpha_bar(self) -> np.ndarray:
        return np.cumprod(1.0 - self.betas)

    def snr(self, k) -> float:
        """Signal-to-noise ratio after cumulative corruption to step k (1-based)."""
        ab = self.alpha_bar[k - 1]
        return float(ab / (1.0 - ab))


def add_noise(clean, eps, k, schedule: NoiseSchedule, mode=MODE_PER_STEP):
    """Corrupt a clean video with noise eps at step k (1-based)."""
    if clean.shape != eps.shape:
        raise ShapeMismatch(f"clean {clean.shape} vs eps {eps.shape}")
    if not 1 <= k <= schedule.num_steps:
        raise ValueError(f"step {k} outside 1..{schedule.num_steps}")
    if mode == MODE_PER_STEP:
        beta = schedule.betas[k - 1]
        return np.sqrt(1.0 - beta) * clean + np.sqrt(beta) * eps
    if mode == MODE_CUMULATIVE:
        ab = schedule.alpha_bar[k - 1]
        return np.sqrt(ab) * clean + np.sqrt(1.0 - ab) * eps
    raise ValueError(f"unknown corruption mode {mode!r}")


def noise_loss(eps_hat, eps):
    """Squared norm of the noise prediction error for one item."""
    diff = eps_hat - eps
    return float((diff * diff).sum())


def loss_and_grads(params, config: ModelConfig, corrupted):
    """Regression loss and its gradients over pre-corrupted items.

    The loss is the batch mean of per-item squared-norm errors
    ||eps - eps_hat||^2; the mean reduction makes it independent of item
    order up to float reassociation.

    corrupted: sequence of (noisy, eps, task_id, obs, k).

    Raises:
        NonFiniteLoss: some item produced a non-finite loss (reports which).
    """
    grads = None
    total = 0.0
    count = float(len(corrupted))
    for item_index, (noisy, eps, task_id, obs, k) in enumerate(corrupted):
        eps_hat, caches = forward(params, config, noisy, task_id, obs, k, with_cache=True)
        diff = eps_hat - eps
        loss = float((diff * diff).sum())
        if not np.isfinite(loss):
            raise NonFiniteLoss(f"non-finite loss on batch item {item_index}")
        total += loss
        dout = (2.0 / count) * diff
        g = backward(params, config, caches, dout)
        if grads is None:
            grads = g
        else:
            for name in grads:
                grads[name] += g[name]
    return total / count, grads


def train_step(params, config: ModelConfig, batch, schedule: NoiseSchedule,
               rng, mode=MODE_PER_STEP):
    """One training step: per item, sample k and eps, corrupt, regress eps.

    batch: sequence of (clean (4, N, H, W), task_id, obs (4, H, W)).
    Returns (mean loss, gradient dict). Deterministic given rng state.
    """
    if not batch:
        raise ValueError("batch must be non-empty")
    corrupted = []
    for clean, task_id, obs in batch:
        k = int(rng.integers(1, schedule.num_steps + 1))
        eps = rng.standard_normal(clean.shape)
        noisy = add_noise(clean, eps, k, schedule, mode)
        corrupted.append((noisy, eps, task_id, obs, k))
    return loss_and_grads(params, config, corrupted)


class MomentumSGD:
    """SGD with momentum and global gradient-norm clipping.

    Clipping keeps the squared-norm objective stable at the default
    learning rate; max_grad_norm=None disables it.
    """

    def __init__(self, lr=1e-3, momentum=0.9, max_grad_norm=20.0):
        self.lr = lr
        self.momentum = momentum
        self.max_grad_norm = max_grad_norm
        self.velocity = None

    def update(self, params, grads):
        if self.velocity is None:
            self.velocity = {k: np.zeros_like(v) for k, v in params.items()}
        scale = 1.0
        if self.max_grad_norm is not None:
            norm = np.sqrt(sum(float((g * g).sum()) for g in grads.values()))
            if norm > self.max_grad_norm:
                scale = self.max_grad_norm / norm
        for name in params:
            self.velocity[name] = (self.momentum * self.velocity[name]
                                   - self.lr * scale * grads[name])
            params[name] += self.velocity[name]


def train_model(params, config: ModelConfig, items, schedule: NoiseSchedule, rng,
                steps=500, batch_size=8, lr=1e-3, momentum=0.9,
                max_grad_norm=20.0, mode=MODE_PER_STEP, log=None):
    """Train in place for a fixed number of steps; returns the loss history."""
    opt = MomentumSGD(lr=lr, momentum=momentum, max_grad_norm=max_grad_norm)
    losses = []
    for step in range(steps):
        idx = rng.choice(len(items), size=min(batch_size, len(items)), replace=False)
        batch = [items[i] for i in idx]
        loss, grads = train_step(params, config, batch, schedule, rng, mode)
        opt.update(params, grads)
        losses.append(loss)
        if log is not None and step % 50 == 0:
            log(f"step {step} loss {loss:.4f}")
    return losses


def sample_video(params, config: ModelConfig, obs, task_id,
                 schedule: NoiseSchedule, rng, mode=MODE_PER_STEP):
    """Generate one video (4, N, H, W) from pure noise, K denoising steps.

    obs conditions the sampler: an RgbdFrame (normalized here with the
    model's depth constants) or an already-packed (4, H, W) tensor.
    per_step mode iterates x_{k-1} = x_k - eps_hat(x_k, k); cumulative mode
    runs the standard ancestral DDPM update. Deterministic given rng state.

    Raises:
        NonFiniteSample: the iteration produced non-finite values.
    """
    from ..geometry import RgbdFrame
    from .data import frame_channels

    if isinstance(obs, RgbdFrame):
        obs = frame_channels(obs, config.depth_min, config.depth_max)
    shape = (4, config.frames, config.height, config.width)
    x = rng.standard_normal(shape)
    if mode == MODE_PER_STEP:
        for k in range(schedule.num_steps, 0, -1):
            x = x - forward(params, config, x, task_id, obs, k)
            if not np.all(np.isfinite(x)):
                raise NonFiniteSample(f"sample diverged at step {k}")
        return x
    if mode == MODE_CUMULATIVE:
        betas = schedule.betas
        alphas = 1.0 - betas
        alpha_bar = schedule.alpha_bar
        for k in range(schedule.num_steps, 0, -1):
            b = betas[k - 1]
            a = alphas[k - 1]
            ab = alpha_bar[k - 1]
            eps_hat = forward(params, config, x, task_id, obs, k)
            mean = (x - b / np.sqrt(1.0 - ab) * eps_hat) / np.sqrt(a)
            if k > 1:
                ab_prev = alpha_bar[k - 2]
                var = b * (1.0 - ab_prev) / (1.0 - ab)
                x = mean + np.sqrt(var) * rng.standard_normal(shape)
            else:
                x = mean
            if not np.all(np.isfinite(x)):
                raise NonFiniteSample(f"sample diverged at step {k}")
        return x
    raise ValueError(f"unknown sampling mode {mode!r}")
