"""DDPM machinery: the beta/alpha schedule, forward noising, and ancestral
sampling.  Nothing exotic - the training objective is epsilon-prediction MSE
and the sampler is the standard posterior update.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ValidationError
from .model import SsgDitModel, _forward_batch


@dataclass(frozen=True)
class NoiseSchedule:
    """Beta/alpha/alpha-bar tables; betas in (0, 1) increasing, alpha-bars
    strictly decreasing from near 1."""

    betas: np.ndarray

    def __post_init__(self):
        betas = np.asarray(self.betas, dtype=np.float64)
        if betas.ndim != 1 or betas.size < 1:
            raise ValidationError("NoiseSchedule: betas must be a non-empty 1D array")
        if np.any(betas <= 0.0) or np.any(betas >= 1.0):
            raise ValidationError("NoiseSchedule: betas must lie in (0, 1)")
        if np.any(np.diff(betas) < 0.0):
            raise ValidationError("NoiseSchedule: betas must be non-decreasing")
        object.__setattr__(self, "betas", betas)

    @property
    def timesteps(self) -> int:
        return self.betas.size

    @property
    def alphas(self) -> np.ndarray:
        return 1.0 - self.betas

    @property
    def alpha_bars(self) -> np.ndarray:
        return np.cumprod(self.alphas)


def linear_schedule(timesteps: int = 100, beta_start: float = 1e-4, beta_end: float = 0.02) -> NoiseSchedule:
    if timesteps < 1:
        raise ValidationError("linear_schedule: timesteps must be >= 1")
    return NoiseSchedule(np.linspace(beta_start, beta_end, timesteps))


def forward_noise(z0: np.ndarray, t, eps: np.ndarray, schedule: NoiseSchedule) -> np.ndarray:
    """q(z_t | z_0): sqrt(abar_t) * z0 + sqrt(1 - abar_t) * eps.

    ``t`` may be a scalar or a batch vector matching the leading axis.
    """
    z0 = np.asarray(z0, dtype=np.float64)
    eps = np.asarray(eps, dtype=np.float64)
    if z0.shape != eps.shape:
        raise ValidationError(f"forward_noise: z0 shape {z0.shape} != eps shape {eps.shape}")
    t_arr = np.asarray(t)
    if np.any(t_arr < 0) or np.any(t_arr >= schedule.timesteps):
        raise ValidationError(f"forward_noise: t out of range [0, {schedule.timesteps})")
    abar = schedule.alpha_bars[t_arr]
    if t_arr.ndim:  # batched: broadcast per-sample coefficients
        abar = abar.reshape((-1,) + (1,) * (z0.ndim - 1))
    return np.sqrt(abar) * z0 + np.sqrt(1.0 - abar) * eps


def sample(
    model: SsgDitModel,
    cond: np.ndarray | None,
    schedule: NoiseSchedule,
    seed: int,
    clip_x0: float | None = 1.0,
) -> np.ndarray:
    """Ancestral DDPM sampling of a single latent clip, deterministic in seed."""
    clips = sample_batch(model, None if cond is None else cond[None], schedule, seed,
                         clip_x0=clip_x0)
    return clips[0]


def sample_batch(
    model: SsgDitModel,
    conds: np.ndarray | None,
    schedule: NoiseSchedule,
    seed: int,
    batch: int | None = None,
    clip_x0: float | None = 1.0,
) -> np.ndarray:
    """Sample one clip per condition row (or ``batch`` unconditional clips).

    All clips share the same seeded noise trajectory, so sampling the same
    seed under different conditions isolates the effect of the condition.

    Each step forms the implied clean clip from the epsilon prediction,
    clamps it to ``[-clip_x0, clip_x0]`` (the synthetic data lives in
    [-1, 1]; unbounded epsilon errors otherwise compound through the
    1/sqrt(alpha) amplification), and takes the standard posterior step.
    """
    if schedule.timesteps != model.config.timesteps:
        raise ValidationError(
            f"schedule has {schedule.timesteps} steps but model expects {model.config.timesteps}"
        )
    if conds is None:
        if batch is None:
            raise ValidationError("sample_batch: need conds or an explicit batch size")
        b = batch
    else:
        conds = np.asarray(conds, dtype=np.float64)
        b = conds.shape[0]
    rng = np.random.default_rng(seed)
    one = (1,) + model.config.latent_shape
    z = np.repeat(rng.standard_normal(one), b, axis=0)
    alphas = schedule.alphas
    abars = schedule.alpha_bars
    betas = schedule.betas
    for t in range(schedule.timesteps - 1, -1, -1):
        eps_hat, _ = _forward_batch(model, z, np.full(b, t), conds)
        abar_prev = abars[t - 1] if t > 0 else 1.0
        x0_hat = (z - np.sqrt(1.0 - abars[t]) * eps_hat) / np.sqrt(abars[t])
        if clip_x0 is not None:
            x0_hat = np.clip(x0_hat, -clip_x0, clip_x0)
        coef_x0 = np.sqrt(abar_prev) * betas[t] / (1.0 - abars[t])
        coef_z = np.sqrt(alphas[t]) * (1.0 - abar_prev) / (1.0 - abars[t])
        z = coef_x0 * x0_hat + coef_z * z
        if t > 0:
            var = betas[t] * (1.0 - abar_prev) / (1.0 - abars[t])
            z = z + np.sqrt(var) * rng.standard_normal(one)
    return z
