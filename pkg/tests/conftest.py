import numpy as np
import pytest

from flowplan.geometry import RigidTransform


def random_rotation(rng, max_angle=np.pi):
    """Uniform-axis random rotation with angle drawn from [0, max_angle]."""
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    angle = rng.uniform(0.0, max_angle)
    return axis_angle(axis, angle)


def axis_angle(axis, angle):
    """Rodrigues' formula."""
    axis = np.asarray(axis, dtype=float)
    axis = axis / np.linalg.norm(axis)
    k = np.array([
        [0, -axis[2], axis[1]],
        [axis[2], 0, -axis[0]],
        [-axis[1], axis[0], 0],
    ])
    return np.eye(3) + np.sin(angle) * k + (1 - np.cos(angle)) * (k @ k)


def random_transform(rng, max_angle=np.pi, max_translation=1.0):
    return RigidTransform(
        random_rotation(rng, max_angle),
        rng.uniform(-max_translation, max_translation, size=3),
    )


def random_rotations(rng, n, max_angle=None):
    """Batch of n rotation matrices from uniform random unit quaternions.

    With max_angle set, random axes with angles in [0, max_angle] instead.
    """
    if max_angle is not None:
        axes = rng.normal(size=(n, 3))
        norms = np.linalg.norm(axes, axis=1, keepdims=True)
        norms[norms < 1e-12] = 1.0
        axes = axes / norms
        angles = rng.uniform(0, max_angle, size=n)
        # batched Rodrigues: R = I + sin(t) K + (1 - cos(t)) K^2
        k = np.zeros((n, 3, 3))
        k[:, 0, 1] = -axes[:, 2]
        k[:, 0, 2] = axes[:, 1]
        k[:, 1, 0] = axes[:, 2]
        k[:, 1, 2] = -axes[:, 0]
        k[:, 2, 0] = -axes[:, 1]
        k[:, 2, 1] = axes[:, 0]
        k2 = k @ k
        return (np.eye(3)[None]
                + np.sin(angles)[:, None, None] * k
                + (1 - np.cos(angles))[:, None, None] * k2)
    q = rng.normal(size=(n, 4))
    q /= np.linalg.norm(q, axis=1, keepdims=True)
    w, x, y, z = q[:, 0], q[:, 1], q[:, 2], q[:, 3]
    out = np.empty((n, 3, 3))
    out[:, 0, 0] = 1 - 2 * (y * y + z * z)
    out[:, 0, 1] = 2 * (x * y - z * w)
    out[:, 0, 2] = 2 * (x * z + y * w)
    out[:, 1, 0] = 2 * (x * y + z * w)
    out[:, 1, 1] = 1 - 2 * (x * x + z * z)
    out[:, 1, 2] = 2 * (y * z - x * w)
    out[:, 2, 0] = 2 * (x * z - y * w)
    out[:, 2, 1] = 2 * (y * z + x * w)
    out[:, 2, 2] = 1 - 2 * (x * x + y * y)
    return out


@pytest.fixture
def rng():
    return np.random.default_rng(20240811)


def gradient_check(params, config, corrupted, probes=5, h=1e-5, probe_seed=42):
    """Central finite differences vs analytic gradients, per parameter block.

    Returns {block name: worst relative error} over a few probed entries.
    """
    from flowplan.diffusion import loss_and_grads

    _, grads = loss_and_grads(params, config, corrupted)
    probe_rng = np.random.default_rng(probe_seed)
    worst = {}
    for name, arr in params.items():
        flat = arr.reshape(-1)
        idxs = probe_rng.choice(flat.size, size=min(probes, flat.size), replace=False)
        err = 0.0
        for idx in idxs:
            orig = flat[idx]
            step = h * max(1.0, abs(orig))
            flat[idx] = orig + step
            lp, _ = loss_and_grads(params, config, corrupted)
            flat[idx] = orig - step
            lm, _ = loss_and_grads(params, config, corrupted)
            flat[idx] = orig
            fd = (lp - lm) / (2.0 * step)
            g = grads[name].reshape(-1)[idx]
            err = max(err, abs(fd - g) / max(abs(fd), abs(g), 1e-6))
        worst[name] = err
    return worst


def make_corrupted_batch(config, schedule, n_items=2, seed=1):
    """Fixed pre-corrupted batch for gradient checking."""
    from flowplan.diffusion import add_noise

    rng = np.random.default_rng(seed)
    out = []
    for i in range(n_items):
        clean = rng.uniform(0, 1, (4, config.frames, config.height, config.width))
        obs = rng.uniform(0, 1, (4, config.height, config.width))
        k = int(rng.integers(1, schedule.num_steps + 1))
        eps = rng.standard_normal(clean.shape)
        noisy = add_noise(clean, eps, k, schedule)
        out.append((noisy, eps, i % config.num_tasks, obs, k))
    return out
