"""Multi-object resampling of the initial latent ``z_T``."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError
from .oracle import ConditionSpec, TemplateMixtureModel, epsilon
from .sampler import guided_epsilon, renoise, tweedie_denoise
from .schedule import NoiseSchedule


@dataclass(frozen=True)
class ResampleConfig:
    """Resampling rounds and the conditions they contrast.

    ``multi`` is the all-objects condition; ``singles`` holds one condition per
    object. ``fresh_noise`` replaces the deterministic inversion back to ``T``
    with a stochastic forward diffusion step.
    """

    num_rounds: int
    multi: ConditionSpec
    singles: tuple[ConditionSpec, ...]
    scale: float = 0.6
    fresh_noise: bool = False

    def __post_init__(self):
        object.__setattr__(self, "singles", tuple(self.singles))
        if not isinstance(self.num_rounds, int) or self.num_rounds < 0:
            raise ConfigError(f"num_rounds must be a nonnegative integer, got {self.num_rounds!r}",
                              field="resample.num_rounds")
        if not self.singles:
            raise ConfigError("at least one single-object condition is required", field="resample.singles")


def adjusted_denoised(
    z_T: np.ndarray,
    base: TemplateMixtureModel,
    cfg: ResampleConfig,
    schedule: NoiseSchedule,
) -> tuple[np.ndarray, np.ndarray]:
    """``N * xhat_mul - sum_i xhat_i`` at step ``T``, plus the unconditional eps.

    Every estimate is the CFG++-guided Tweedie estimate from the base model.
    """
    T = schedule.num_steps
    eps_u = epsilon(base, z_T, T, ConditionSpec.null())

    def xhat(cond):
        eps_c = epsilon(base, z_T, T, cond)
        return tweedie_denoise(z_T, T, eps_u + cfg.scale * (eps_c - eps_u), schedule)

    n = len(cfg.singles)
    adj = n * xhat(cfg.multi)
    for cond in cfg.singles:
        adj = adj - xhat(cond)
    return adj, eps_u


def resample_round(
    z_T: np.ndarray,
    base: TemplateMixtureModel,
    cfg: ResampleConfig,
    schedule: NoiseSchedule,
    rng: np.random.Generator | None = None,
) -> np.ndarray:
    """Adjusted step ``T -> T-1`` followed by the return trip to ``T``."""
    T = schedule.num_steps
    adj, eps_u = adjusted_denoised(z_T, base, cfg, schedule)
    z_prev = renoise(adj, T - 1, eps_u, schedule)
    if cfg.fresh_noise:
        if rng is None:
            raise ValueError("fresh_noise resampling needs an rng")
        ratio = schedule.alpha_bar(T) / schedule.alpha_bar(T - 1)
        return math.sqrt(ratio) * z_prev + math.sqrt(1.0 - ratio) * rng.standard_normal(z_prev.shape)
    if T - 1 == 0:
        raise ValueError("deterministic inversion needs T >= 2")
    eps_g, _ = guided_epsilon(base, base, z_prev, T - 1, cfg.multi, cfg.scale)
    x0 = tweedie_denoise(z_prev, T - 1, eps_g, schedule)
    return renoise(x0, T, eps_g, schedule)


def resample_loop(
    z_T: np.ndarray,
    base: TemplateMixtureModel,
    cfg: ResampleConfig,
    schedule: NoiseSchedule,
    rng: np.random.Generator | None = None,
) -> np.ndarray:
    """Apply ``cfg.num_rounds`` resampling rounds; zero rounds returns ``z_T`` itself."""
    z = z_T
    for _ in range(cfg.num_rounds):
        z = resample_round(z, base, cfg, schedule, rng)
    return z
