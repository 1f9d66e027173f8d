"""Closed-form denoisers built from weighted image templates.

Each model is a Gaussian mixture prior over clean images,

    p(x0) = sum_k w_k N(x0; T_k, sigma_d^2 I),

so that the noisy marginal at step ``t`` is again a mixture with component
means ``sqrt(abar_t) T_k`` and shared variance ``abar_t sigma_d^2 + 1 - abar_t``.
Posterior means and noise predictions follow in closed form. Model ``0`` plays
the non-fine-tuned base network; model ``i >= 1`` is the concept-``i`` model.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import ConditionResolutionError
from .grid import Rect
from .schedule import NoiseSchedule

GENERIC = 0

DEFAULT_DATA_SIGMA = 0.05


@dataclass(frozen=True)
class Template:
    """One clean exemplar image.

    ``appearance`` is ``GENERIC`` (0) or the id of the concept whose custom
    appearance the template carries.
    """

    image: np.ndarray
    weight: float
    object_tags: frozenset[str]
    appearance: int = GENERIC
    extents: Mapping[str, Rect] = field(default_factory=dict)
    name: str = ""

    def __post_init__(self):
        if self.weight <= 0:
            raise ValueError(f"template weight must be positive, got {self.weight}")
        if self.image.ndim != 3:
            raise ValueError(f"template image must be H x W x C, got shape {self.image.shape}")
        h, w, _ = self.image.shape
        for tag, rect in self.extents.items():
            if tag not in self.object_tags:
                raise ValueError(f"extent given for tag {tag!r} not in object_tags")
            if not rect.inside(h, w):
                raise ValueError(f"extent {rect.as_tuple()} of {tag!r} leaves the {h}x{w} grid")
        rects = list(self.extents.values())
        for i, a in enumerate(rects):
            for b in rects[i + 1 :]:
                if a.intersects(b):
                    raise ValueError("object extents within one template must be disjoint")

    @property
    def is_custom(self) -> bool:
        return self.appearance != GENERIC


@dataclass(frozen=True)
class ConditionSpec:
    """Null, single-object, or multi-object conditioning."""

    kind: str
    tags: tuple[str, ...] = ()
    appearance: int | None = None
    text: str = ""

    def __post_init__(self):
        if self.kind not in ("null", "single", "multi"):
            raise ValueError(f"unknown condition kind {self.kind!r}")
        if self.kind == "null" and self.tags:
            raise ValueError("null condition takes no tags")
        if self.kind == "single" and len(self.tags) != 1:
            raise ValueError("single condition takes exactly one tag")
        if self.kind == "multi" and not self.tags:
            raise ValueError("multi condition needs at least one tag")

    @classmethod
    def null(cls) -> ConditionSpec:
        return cls("null", text="")

    @classmethod
    def single(cls, tag: str, appearance: int | None = None, text: str = "") -> ConditionSpec:
        return cls("single", (tag,), appearance, text or f"a {tag}")

    @classmethod
    def multi(cls, tags: Iterable[str], text: str = "") -> ConditionSpec:
        tags = tuple(tags)
        return cls("multi", tags, None, text or " and ".join(f"a {t}" for t in tags))

    @property
    def is_null(self) -> bool:
        return self.kind == "null"

    def __str__(self) -> str:
        if self.kind == "null":
            return "null"
        return f"{self.kind}({','.join(self.tags)})"


class TemplateMixtureModel:
    """Analytic denoiser over a fixed template library.

    Immutable after construction; per-condition template stacks are cached.
    """

    def __init__(
        self,
        model_id: int,
        templates: Sequence[Template],
        schedule: NoiseSchedule,
        data_sigma: float = DEFAULT_DATA_SIGMA,
    ):
        if not templates:
            raise ValueError(f"model {model_id} has an empty template library")
        if data_sigma < 0:
            raise ValueError("data_sigma must be nonnegative")
        shapes = {t.image.shape for t in templates}
        if len(shapes) != 1:
            raise ValueError(f"model {model_id} mixes template shapes {sorted(shapes)}")
        if model_id == 0 and any(t.is_custom for t in templates):
            raise ValueError("the base model may hold only generic-appearance templates")
        self.model_id = model_id
        self.templates = tuple(templates)
        self.schedule = schedule
        self.data_sigma = float(data_sigma)
        self.shape = shapes.pop()
        self._cache: dict[ConditionSpec, tuple[np.ndarray, np.ndarray]] = {}

    def __repr__(self) -> str:
        return f"TemplateMixtureModel(id={self.model_id}, K={len(self.templates)}, sigma_d={self.data_sigma})"

    def select(self, cond: ConditionSpec) -> list[int]:
        """Indices of the templates active under ``cond``."""
        if cond.kind == "null":
            idx = list(range(len(self.templates)))
        elif cond.kind == "single":
            (tag,) = cond.tags
            idx = [i for i, t in enumerate(self.templates) if tag in t.object_tags]
            if cond.appearance is not None:
                idx = [i for i in idx if self.templates[i].appearance == cond.appearance]
            elif self.model_id != GENERIC:
                own = [i for i in idx if self.templates[i].appearance == self.model_id]
                idx = own or idx
        else:
            wanted = set(cond.tags)
            idx = [i for i, t in enumerate(self.templates) if wanted <= t.object_tags]
        if not idx:
            raise ConditionResolutionError(self.model_id, cond)
        return idx

    def _stack(self, cond: ConditionSpec) -> tuple[np.ndarray, np.ndarray]:
        hit = self._cache.get(cond)
        if hit is None:
            idx = self.select(cond)
            images = np.stack([self.templates[i].image.reshape(-1) for i in idx]).astype(np.float64)
            weights = np.array([self.templates[i].weight for i in idx], dtype=np.float64)
            log_w = np.log(weights / weights.sum())
            images.setflags(write=False)
            log_w.setflags(write=False)
            hit = self._cache[cond] = (images, log_w)
        return hit


def active_set(model: TemplateMixtureModel, cond: ConditionSpec) -> list[tuple[Template, float]]:
    """Templates selected by ``cond`` with weights renormalized to sum to one."""
    idx = model.select(cond)
    total = sum(model.templates[i].weight for i in idx)
    return [(model.templates[i], model.templates[i].weight / total) for i in idx]


def _noise_variance(model: TemplateMixtureModel, abar: float) -> float:
    return abar * model.data_sigma**2 + (1.0 - abar)


def _flatten(model: TemplateMixtureModel, z: np.ndarray) -> np.ndarray:
    if z.shape[-3:] != model.shape:
        raise ValueError(f"latent shape {z.shape} does not end in model grid {model.shape}")
    return z.reshape(*z.shape[:-3], -1)


def responsibilities(
    model: TemplateMixtureModel, z: np.ndarray, t: int, cond: ConditionSpec
) -> np.ndarray:
    """Posterior component probabilities, shape ``z.shape[:-3] + (K,)``."""
    images, log_w = model._stack(cond)
    abar = model.schedule.alpha_bar(t)
    a = math.sqrt(abar)
    s = _noise_variance(model, abar)
    zf = _flatten(model, z)
    diff = zf[..., None, :] - a * images
    logits = log_w - np.einsum("...kd,...kd->...k", diff, diff) / (2.0 * s)
    logits -= logits.max(axis=-1, keepdims=True)
    gamma = np.exp(logits)
    gamma /= gamma.sum(axis=-1, keepdims=True)
    return gamma


def posterior_mean(
    model: TemplateMixtureModel, z: np.ndarray, t: int, cond: ConditionSpec
) -> np.ndarray:
    """E[x0 | z_t = z, cond] in closed form.

    Works on a single ``H x W x C`` latent or a batch with leading axes.
    """
    if not 1 <= t <= model.schedule.num_steps:
        raise IndexError(f"timestep {t} outside 1..{model.schedule.num_steps}")
    images, _ = model._stack(cond)
    gamma = responsibilities(model, z, t, cond)
    abar = model.schedule.alpha_bar(t)
    a = math.sqrt(abar)
    mixed = gamma @ images
    if model.data_sigma > 0:
        # sum_k g_k (T_k + c (z - a T_k)) with sum_k g_k = 1
        c = a * model.data_sigma**2 / _noise_variance(model, abar)
        mixed = (1.0 - c * a) * mixed + c * _flatten(model, z)
    return mixed.reshape(z.shape)


def epsilon(model: TemplateMixtureModel, z: np.ndarray, t: int, cond: ConditionSpec) -> np.ndarray:
    """Noise prediction consistent with :func:`posterior_mean` under Tweedie's formula."""
    if t == 0:
        raise ValueError("epsilon is undefined at t=0 (1 - alpha_bar_0 = 0)")
    x0 = posterior_mean(model, z, t, cond)
    abar = model.schedule.alpha_bar(t)
    return (z - math.sqrt(abar) * x0) / math.sqrt(1.0 - abar)


def render(
    shape: tuple[int, int, int],
    background: Sequence[float],
    blobs: Iterable[tuple[Rect, Sequence[float]]],
) -> np.ndarray:
    """Paint solid-colour rectangles over a uniform background."""
    img = np.empty(shape, dtype=np.float64)
    img[...] = np.asarray(background, dtype=np.float64)
    for rect, color in blobs:
        img[rect.row0 : rect.row1, rect.col0 : rect.col1] = np.asarray(color, dtype=np.float64)
    return img
