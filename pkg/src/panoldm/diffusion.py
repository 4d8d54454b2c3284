"""Noise schedules, forward diffusion, the denoising objective, and sampling.

Timesteps are 1-based: t in [1, T]. The network regresses the injected
noise; the clean latent is recovered algebraically via ``eps_x0_convert``.
Sampling walks a strided subset of the training schedule whose endpoints
always include T and 1, with either the variance-zero deterministic update
or the ancestral (noisy) one.
"""

import math
from dataclasses import dataclass

import numpy as np

from .tensor import Rng, Tensor, concat, mse, no_grad


@dataclass
class NoiseSchedule:
    T: int
    beta: np.ndarray
    alpha: np.ndarray
    alpha_bar: np.ndarray

    def alpha_bar_at(self, t):
        if not 1 <= t <= self.T:
            raise ValueError(f"timestep {t} outside [1, {self.T}]")
        return float(self.alpha_bar[t - 1])


def make_schedule(T, beta_start=1e-4, beta_end=0.02):
    """Linear beta schedule; alpha_bar_t is the running product of (1-beta)."""
    if T < 2:
        raise ValueError("schedule needs at least 2 steps")
    if not 0.0 < beta_start <= beta_end < 1.0:
        raise ValueError(f"invalid beta range ({beta_start}, {beta_end})")
    beta = np.linspace(beta_start, beta_end, T, dtype=np.float64)
    alpha = 1.0 - beta
    alpha_bar = np.cumprod(alpha)
    return NoiseSchedule(T=T, beta=beta, alpha=alpha, alpha_bar=alpha_bar)


@dataclass
class ConditionPack:
    """Latent-resolution conditioning: encoded masked LDR + binary mask.

    Both are channels-first batched tensors: z_latent (N, 4, h, w) and
    mask (N, 1, h, w) with values in {0, 1}.
    """

    z_latent: Tensor
    mask: Tensor

    def __post_init__(self):
        zl = self.z_latent
        m = self.mask
        if zl.shape[0] != m.shape[0] or zl.shape[2:] != m.shape[2:]:
            raise ValueError(f"condition shapes disagree: {zl.shape} vs {m.shape}")
        vals = np.unique(m.data)
        if not np.all(np.isin(vals, (0.0, 1.0))):
            raise ValueError("mask must be binary")


def downsample_mask(mask, factor=8):
    """Majority-vote a (H, W) binary mask down to the latent grid."""
    h, w = mask.shape
    if h % factor or w % factor:
        raise ValueError(f"mask {h}x{w} not divisible by {factor}")
    blocks = mask.reshape(h // factor, factor, w // factor, factor)
    frac = blocks.mean(axis=(1, 3))
    return (frac >= 0.5).astype(mask.dtype)


def q_sample(z0, t, noise, sched):
    """Forward noising: sqrt(ab_t) * z0 + sqrt(1 - ab_t) * eps."""
    ab = sched.alpha_bar_at(t)
    return z0 * math.sqrt(ab) + noise * math.sqrt(1.0 - ab)


def eps_x0_convert(z_t, value, t, sched, direction):
    """Convert between noise and clean-latent parameterizations at step t."""
    ab = sched.alpha_bar_at(t)
    if direction == "eps_to_x0":
        if ab >= 1.0:
            raise ValueError("alpha_bar is 1; clean-latent recovery is singular")
        return (z_t - value * math.sqrt(1.0 - ab)) * (1.0 / math.sqrt(ab))
    if direction == "x0_to_eps":
        if ab >= 1.0:
            raise ValueError("alpha_bar is 1; noise recovery is singular")
        return (z_t - value * math.sqrt(ab)) * (1.0 / math.sqrt(1.0 - ab))
    raise ValueError(f"unknown direction {direction!r}")


def ldm_loss(model, z0, cond, t, rng, sched):
    """Noise-prediction MSE at one timestep.

    The model consumes the channel concatenation [z_t | z_latent | mask]
    and the integer timestep, and predicts the injected noise.
    """
    if z0.shape[0] != cond.z_latent.shape[0] or z0.shape[2:] != cond.z_latent.shape[2:]:
        raise ValueError(f"latent {z0.shape} does not match condition "
                         f"{cond.z_latent.shape}")
    noise = Tensor(rng.normal(z0.shape, dtype=z0.dtype))
    z_t = q_sample(z0, t, noise, sched)
    inp = concat([z_t, cond.z_latent, cond.mask], axis=1)
    eps_hat = model(inp, t)
    return mse(noise, eps_hat)


def strided_timesteps(T, infer_steps):
    """Descending timestep subset containing T and 1."""
    if infer_steps < 1:
        raise ValueError("need at least one inference step")
    if infer_steps > T:
        raise ValueError(f"cannot take {infer_steps} steps of a {T}-step schedule")
    ts = np.unique(np.rint(np.linspace(1, T, infer_steps)).astype(int))
    return ts[::-1].tolist()


def sample_loop(model, cond, sched, infer_steps, rng, deterministic=True):
    """Iteratively denoise from pure noise, conditioned on the pack.

    Each step predicts the noise, forms the clean-latent estimate, then
    jumps to the next strided timestep (variance-zero when deterministic,
    ancestral otherwise). Returns the final clean latent (N, 4, h, w).
    """
    ts = strided_timesteps(sched.T, infer_steps)
    n, _, h, w = cond.z_latent.shape
    with no_grad():
        z = Tensor(rng.normal((n, 4, h, w), dtype=cond.z_latent.dtype))
        for i, t in enumerate(ts):
            inp = concat([z, cond.z_latent, cond.mask], axis=1)
            eps_hat = model(inp, t)
            x0 = eps_x0_convert(z, eps_hat, t, sched, "eps_to_x0")
            t_next = ts[i + 1] if i + 1 < len(ts) else 0
            if t_next == 0:
                z = x0
                break
            ab_next = sched.alpha_bar_at(t_next)
            if deterministic:
                z = x0 * math.sqrt(ab_next) + eps_hat * math.sqrt(1.0 - ab_next)
            else:
                ab_t = sched.alpha_bar_at(t)
                sigma = math.sqrt((1.0 - ab_next) / (1.0 - ab_t)) \
                    * math.sqrt(1.0 - ab_t / ab_next)
                coef = math.sqrt(max(0.0, 1.0 - ab_next - sigma * sigma))
                eta = Tensor(rng.normal(z.shape, dtype=z.dtype))
                z = x0 * math.sqrt(ab_next) + eps_hat * coef + eta * sigma
    return z
