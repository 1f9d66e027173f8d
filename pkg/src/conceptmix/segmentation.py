"""Region masks from an intermediate Tweedie estimate.

Objects in the toy scenes are colour-coded, so a colour-signature blob
detector stands in for a text-guided segmentation network. Anything with the
:class:`Segmenter` call signature can be plugged into the pipeline instead.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Protocol, Sequence

import numpy as np
from scipy import ndimage

from .errors import ExtractionFailed, PartitionError
from .grid import Rect
from .oracle import ConditionSpec, TemplateMixtureModel
from .sampler import GuidanceConfig, GuidanceMode, SamplerState, guided_denoised, guided_step
from .schedule import NoiseSchedule

DEFAULT_TAU = 0.15
DEFAULT_MIN_AREA = 4


@dataclass(frozen=True)
class Signature:
    tag: str
    color: tuple[float, ...]


@dataclass(frozen=True)
class RegionMaskSet:
    """Disjoint per-concept pixel masks plus the background complement.

    ``boxes`` keeps the detected rectangles; ``masks`` the pixels each concept
    actually owns after overlap exclusion.
    """

    tags: tuple[str, ...]
    boxes: tuple[Rect, ...]
    masks: tuple[np.ndarray, ...]
    background: np.ndarray

    @property
    def shape(self) -> tuple[int, int]:
        return self.background.shape

    def mask_for(self, tag: str) -> np.ndarray:
        return self.masks[self.tags.index(tag)]

    def is_partition(self) -> bool:
        return is_partition([*self.masks, self.background])

    def as_dict(self) -> dict:
        return {
            "regions": [
                {"tag": tag, "box": list(box.as_tuple()), "pixels": int(mask.sum())}
                for tag, box, mask in zip(self.tags, self.boxes, self.masks)
            ],
            "background_pixels": int(self.background.sum()),
        }


def is_partition(masks: Sequence[np.ndarray]) -> bool:
    """True when every pixel is covered by exactly one mask."""
    if not masks:
        return False
    total = np.zeros(masks[0].shape, dtype=np.int64)
    for m in masks:
        if m.shape != total.shape:
            return False
        total += m.astype(np.int64)
    return bool(np.all(total == 1))


def check_partition(masks: Sequence[np.ndarray]) -> None:
    if not is_partition(masks):
        raise PartitionError("region masks do not partition the grid")


class Segmenter(Protocol):
    def __call__(self, image: np.ndarray, signatures: Sequence[Signature]) -> list[tuple[str, Rect]]: ...


def intermediate_image(
    z: np.ndarray,
    t: int,
    base: TemplateMixtureModel,
    cond: ConditionSpec,
    guidance: GuidanceConfig | float,
    schedule: NoiseSchedule,
    extra_steps: int = 0,
) -> np.ndarray:
    """Decoded one-step Tweedie estimate at ``t``.

    A bare float for ``guidance`` means CFG++ at that scale. With
    ``extra_steps > 0`` a few more guided steps are taken on a private copy of
    the trajectory first. The decoder is the identity.
    """
    if not isinstance(guidance, GuidanceConfig):
        guidance = GuidanceConfig(GuidanceMode.CFG_PP, guidance)
    state = SamplerState(z, t)
    for _ in range(min(extra_steps, t - 1)):
        state = guided_step(state, base, base, cond, guidance, schedule)
    return guided_denoised(base, base, state.z, state.t, cond, guidance.scale, schedule)


def _largest_component(mask: np.ndarray) -> tuple[np.ndarray, int]:
    labels, n = ndimage.label(mask)
    if n == 0:
        return np.zeros_like(mask), 0
    sizes = np.bincount(labels.ravel())
    sizes[0] = 0
    best = int(np.argmax(sizes))
    return labels == best, int(sizes[best])


def bounding_box(mask: np.ndarray) -> Rect:
    rows = np.flatnonzero(mask.any(axis=1))
    cols = np.flatnonzero(mask.any(axis=0))
    return Rect(int(rows[0]), int(cols[0]), int(rows[-1]) + 1, int(cols[-1]) + 1)


def find_blob(image: np.ndarray, color, tau: float = DEFAULT_TAU, min_area: int = DEFAULT_MIN_AREA):
    """Tight box of the largest component within ``tau`` (max-channel) of ``color``."""
    close = np.abs(image - np.asarray(color, dtype=np.float64)).max(axis=-1) < tau
    comp, area = _largest_component(close)
    if area < min_area:
        return None
    return bounding_box(comp)


def detect_objects(
    image: np.ndarray,
    signatures: Sequence[Signature],
    tau: float = DEFAULT_TAU,
    min_area: int = DEFAULT_MIN_AREA,
) -> list[tuple[str, Rect]]:
    """Box per signature; raises :class:`ExtractionFailed` if any tag is absent."""
    out = []
    for sig in signatures:
        box = find_blob(image, sig.color, tau, min_area)
        if box is None:
            raise ExtractionFailed("no component found", sig.tag)
        out.append((sig.tag, box))
    return out


def signatures_separated(signatures: Sequence[Signature], tau: float = DEFAULT_TAU) -> list[str]:
    """Pairs of signatures closer than ``2 tau`` (max-channel distance)."""
    problems = []
    for i, a in enumerate(signatures):
        for b in signatures[i + 1 :]:
            d = float(np.abs(np.subtract(a.color, b.color)).max())
            if d <= 2 * tau:
                problems.append(f"signatures {a.tag!r} and {b.tag!r} are {d:.3f} apart (need > {2 * tau:.3f})")
    return problems


def resolve_overlaps(boxes: Sequence[tuple[str, Rect]], shape: tuple[int, int]) -> RegionMaskSet:
    """Rasterize boxes in priority order, each later box losing pixels already claimed.

    A box left with no pixels is a complete overlap and fails the extraction.
    """
    h, w = shape
    claimed = np.zeros(shape, dtype=bool)
    masks = []
    for tag, rect in boxes:
        own = rect.raster(h, w) & ~claimed
        if not own.any():
            raise ExtractionFailed("complete overlap", tag)
        masks.append(own)
        claimed |= own
    return RegionMaskSet(
        tags=tuple(tag for tag, _ in boxes),
        boxes=tuple(rect for _, rect in boxes),
        masks=tuple(masks),
        background=~claimed,
    )


def extract_masks(
    image: np.ndarray,
    signatures: Sequence[Signature],
    tau: float = DEFAULT_TAU,
    min_area: int = DEFAULT_MIN_AREA,
    segmenter: Segmenter | None = None,
) -> RegionMaskSet:
    if segmenter is None:
        boxes = detect_objects(image, signatures, tau, min_area)
    else:
        boxes = segmenter(image, signatures)
    return resolve_overlaps(boxes, image.shape[:2])
