"""Discrete variance schedules.

Timesteps run 1..T for noisy states; index 0 is clean data with
``alpha_bar(0) == 1``. Arrays below are stored with that leading entry so that
``alpha_bars[t]`` is the cumulative product through step ``t``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .errors import ConfigError


class ScheduleKind(str, Enum):
    LINEAR = "linear"
    COSINE = "cosine"


DEFAULT_NUM_STEPS = 50
DEFAULT_BETA_MIN = 1e-4
DEFAULT_BETA_MAX = 0.02

_COSINE_OFFSET = 0.008
_COSINE_MAX_BETA = 0.999


@dataclass(frozen=True)
class NoiseSchedule:
    """Immutable beta / alpha / alpha-bar tables.

    ``betas`` and ``alphas`` have length ``T + 1`` with a dummy entry at index 0
    (beta 0, alpha 1) so every table is indexed by the timestep directly.
    """

    kind: ScheduleKind
    betas: np.ndarray
    alphas: np.ndarray = field(repr=False)
    alpha_bars: np.ndarray = field(repr=False)

    @property
    def num_steps(self) -> int:
        return len(self.betas) - 1

    def alpha_bar(self, t: int) -> float:
        self._check(t)
        return float(self.alpha_bars[t])

    def _check(self, t: int) -> None:
        if not 0 <= t <= self.num_steps:
            raise IndexError(f"timestep {t} outside 0..{self.num_steps}")

    def to_dict(self) -> dict:
        return {"kind": self.kind.value, "num_steps": self.num_steps}


def _from_betas(kind: ScheduleKind, betas: np.ndarray) -> NoiseSchedule:
    betas = np.concatenate([[0.0], np.asarray(betas, dtype=np.float64)])
    alphas = 1.0 - betas
    alpha_bars = np.cumprod(alphas)
    for arr in (betas, alphas, alpha_bars):
        arr.setflags(write=False)
    return NoiseSchedule(kind, betas, alphas, alpha_bars)


def build_schedule(
    kind: ScheduleKind | str = ScheduleKind.LINEAR,
    num_steps: int = DEFAULT_NUM_STEPS,
    beta_min: float = DEFAULT_BETA_MIN,
    beta_max: float = DEFAULT_BETA_MAX,
) -> NoiseSchedule:
    """Build a schedule with ``num_steps`` reverse steps.

    Linear spaces betas uniformly over ``[beta_min, beta_max]``. Cosine follows
    the squared-cosine alpha-bar curve and ignores the beta bounds beyond
    validating them.
    """
    try:
        kind = ScheduleKind(kind)
    except ValueError:
        raise ConfigError(f"unknown schedule kind {kind!r}", field="schedule.kind") from None
    if not isinstance(num_steps, (int, np.integer)) or isinstance(num_steps, bool) or num_steps < 2:
        raise ConfigError(f"num_steps must be an integer >= 2, got {num_steps!r}", field="schedule.num_steps")
    if not 0.0 < beta_min < 1.0:
        raise ConfigError(f"beta_min must lie in (0, 1), got {beta_min!r}", field="schedule.beta_min")
    if not beta_min <= beta_max < 1.0:
        raise ConfigError(
            f"beta_max must lie in [beta_min, 1), got {beta_max!r}", field="schedule.beta_max"
        )

    if kind is ScheduleKind.LINEAR:
        betas = np.linspace(beta_min, beta_max, num_steps, dtype=np.float64)
    else:
        steps = np.arange(num_steps + 1, dtype=np.float64) / num_steps
        f = np.cos((steps + _COSINE_OFFSET) / (1 + _COSINE_OFFSET) * math.pi / 2) ** 2
        abar = f / f[0]
        betas = np.clip(1.0 - abar[1:] / abar[:-1], 1e-12, _COSINE_MAX_BETA)
    return _from_betas(kind, betas)


def snr_coefficients(schedule: NoiseSchedule, t: int) -> tuple[float, float]:
    """Return ``(sqrt(alpha_bar_t), sqrt(1 - alpha_bar_t))``; ``t = 0`` gives ``(1, 0)``."""
    abar = schedule.alpha_bar(t)
    return math.sqrt(abar), math.sqrt(1.0 - abar)
