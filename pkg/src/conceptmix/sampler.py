"""Deterministic reverse-step kernels: Tweedie denoising, DDIM, CFG and CFG++."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from enum import Enum

import numpy as np

from .errors import ConfigError
from .oracle import ConditionSpec, TemplateMixtureModel, epsilon
from .schedule import NoiseSchedule


class GuidanceMode(str, Enum):
    NONE = "none"
    CFG = "cfg"
    CFG_PP = "cfg_pp"


@dataclass(frozen=True)
class GuidanceConfig:
    """Guidance mode and scale, validated on construction.

    ``cfg`` extrapolates with ``scale >= 1``; ``cfg_pp`` interpolates with
    ``0 < scale <= 1`` and renoises with the unconditional prediction.
    """

    mode: GuidanceMode = GuidanceMode.CFG_PP
    scale: float = 0.6

    def __post_init__(self):
        try:
            object.__setattr__(self, "mode", GuidanceMode(self.mode))
        except ValueError:
            raise ConfigError(f"unknown guidance mode {self.mode!r}", field="guidance.mode") from None
        if self.mode is GuidanceMode.CFG and not self.scale >= 1.0:
            raise ConfigError(f"cfg scale must be >= 1, got {self.scale}", field="guidance.scale")
        if self.mode is GuidanceMode.CFG_PP and not 0.0 < self.scale <= 1.0:
            raise ConfigError(f"cfg_pp scale must lie in (0, 1], got {self.scale}", field="guidance.scale")


@dataclass(frozen=True)
class SamplerState:
    """Latent ``z`` at timestep ``t`` plus the seed that produced ``z_T``."""

    z: np.ndarray
    t: int
    seed: int | None = None

    def advance(self, z: np.ndarray) -> SamplerState:
        return replace(self, z=z, t=self.t - 1)


def initial_state(schedule: NoiseSchedule, shape: tuple[int, ...], seed: int) -> SamplerState:
    """Draw ``z_T ~ N(0, I)`` from a seeded PCG64 stream."""
    rng = np.random.default_rng(seed)
    return SamplerState(rng.standard_normal(shape), schedule.num_steps, seed)


def _check_pair(a: np.ndarray, b: np.ndarray) -> None:
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")


def tweedie_denoise(z: np.ndarray, t: int, eps: np.ndarray, schedule: NoiseSchedule) -> np.ndarray:
    """Posterior-mean estimate ``(z - sqrt(1 - abar_t) eps) / sqrt(abar_t)``."""
    _check_pair(z, eps)
    if not 1 <= t <= schedule.num_steps:
        raise IndexError(f"timestep {t} outside 1..{schedule.num_steps}")
    abar = schedule.alpha_bar(t)
    return (z - math.sqrt(1.0 - abar) * eps) / math.sqrt(abar)


def renoise(x0: np.ndarray, t: int, eps: np.ndarray, schedule: NoiseSchedule) -> np.ndarray:
    """Deterministic forward map ``sqrt(abar_t) x0 + sqrt(1 - abar_t) eps``."""
    _check_pair(x0, eps)
    abar = schedule.alpha_bar(t)
    return math.sqrt(abar) * x0 + math.sqrt(1.0 - abar) * eps


def ddim_step(
    z: np.ndarray,
    t: int,
    eps_denoise: np.ndarray,
    eps_renoise: np.ndarray,
    schedule: NoiseSchedule,
) -> np.ndarray:
    """One deterministic DDIM step ``t -> t - 1``.

    The same array for both predictions gives plain DDIM; a guided
    ``eps_denoise`` with an unconditional ``eps_renoise`` gives CFG++.
    """
    if t < 1:
        raise IndexError(f"cannot step from t={t}")
    x0 = tweedie_denoise(z, t, eps_denoise, schedule)
    return renoise(x0, t - 1, eps_renoise, schedule)


def guided_epsilon(
    base: TemplateMixtureModel,
    cond_model: TemplateMixtureModel,
    z: np.ndarray,
    t: int,
    cond: ConditionSpec,
    scale: float,
) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(eps_guided, eps_uncond)``.

    The unconditional prediction always comes from ``base``, whatever model
    supplies the conditional one.
    """
    if cond.is_null:
        raise ValueError("guided_epsilon needs a non-null condition")
    eps_u = epsilon(base, z, t, ConditionSpec.null())
    eps_c = epsilon(cond_model, z, t, cond)
    return eps_u + scale * (eps_c - eps_u), eps_u


def cfg_step(
    state: SamplerState,
    base: TemplateMixtureModel,
    cond_model: TemplateMixtureModel,
    cond: ConditionSpec,
    scale: float,
    schedule: NoiseSchedule,
) -> SamplerState:
    """Classifier-free guidance step: guided prediction in both DDIM terms."""
    eps_g, _ = guided_epsilon(base, cond_model, state.z, state.t, cond, scale)
    return state.advance(ddim_step(state.z, state.t, eps_g, eps_g, schedule))


def cfgpp_step(
    state: SamplerState,
    base: TemplateMixtureModel,
    cond_model: TemplateMixtureModel,
    cond: ConditionSpec,
    scale: float,
    schedule: NoiseSchedule,
) -> SamplerState:
    """CFG++ step: guided prediction to denoise, unconditional one to renoise."""
    eps_g, eps_u = guided_epsilon(base, cond_model, state.z, state.t, cond, scale)
    return state.advance(ddim_step(state.z, state.t, eps_g, eps_u, schedule))


def guided_step(
    state: SamplerState,
    base: TemplateMixtureModel,
    cond_model: TemplateMixtureModel,
    cond: ConditionSpec,
    guidance: GuidanceConfig,
    schedule: NoiseSchedule,
) -> SamplerState:
    """Dispatch on ``guidance.mode``; ``none`` samples the conditional model alone."""
    if guidance.mode is GuidanceMode.CFG_PP:
        return cfgpp_step(state, base, cond_model, cond, guidance.scale, schedule)
    if guidance.mode is GuidanceMode.CFG:
        return cfg_step(state, base, cond_model, cond, guidance.scale, schedule)
    eps = epsilon(cond_model, state.z, state.t, cond)
    return state.advance(ddim_step(state.z, state.t, eps, eps, schedule))


def guided_denoised(
    base: TemplateMixtureModel,
    cond_model: TemplateMixtureModel,
    z: np.ndarray,
    t: int,
    cond: ConditionSpec,
    scale: float,
    schedule: NoiseSchedule,
) -> np.ndarray:
    """Tweedie estimate of the guided prediction at ``(z, t)``."""
    eps_g, _ = guided_epsilon(base, cond_model, z, t, cond, scale)
    return tweedie_denoise(z, t, eps_g, schedule)
