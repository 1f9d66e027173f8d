"""Toy image metrics: object coverage, custom-appearance fidelity, concept blending."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

from .grid import Rect
from .segmentation import DEFAULT_MIN_AREA, DEFAULT_TAU, find_blob

CSV_COLUMNS = ("seed", "status", "covered", "objects_found", "fidelity", "blending")
SUMMARY_COLUMNS = ("coverage_rate", "fidelity_score", "blending_score")


@dataclass(frozen=True)
class MetricScene:
    """What the metrics need to know about a scene."""

    tags: tuple[str, ...]
    generic: Mapping[str, tuple[float, ...]]
    custom: Mapping[str, tuple[float, ...]]
    background: tuple[float, ...]
    shape: tuple[int, int, int]
    tau: float = DEFAULT_TAU
    min_area: int = DEFAULT_MIN_AREA

    @classmethod
    def from_config(cls, config) -> MetricScene:
        bg = config.raw["models"].get("background", [0.0] * config.grid_shape[2])
        return cls(
            tags=tuple(config.tags),
            generic={t: config.palette[t].generic for t in config.tags},
            custom={t: config.palette[t].custom for t in config.tags},
            background=tuple(float(v) for v in bg),
            shape=config.grid_shape,
            tau=config.segmentation.tau,
            min_area=config.segmentation.min_area,
        )


@dataclass(frozen=True)
class SampleMetrics:
    covered: bool
    objects_found: int
    fidelity: float | None
    blending: float | None


def find_objects(image: np.ndarray, scene: MetricScene) -> dict[str, Rect]:
    """Detector box per tag, trying the custom signature before the generic one."""
    found = {}
    for tag in scene.tags:
        box = find_blob(image, scene.custom[tag], scene.tau, scene.min_area)
        if box is None:
            box = find_blob(image, scene.generic[tag], scene.tau, scene.min_area)
        if box is not None:
            found[tag] = box
    return found


def _patch_distance(crop: np.ndarray, color) -> float:
    return float(((crop - np.asarray(color)) ** 2).sum())


def is_custom(image: np.ndarray, box: Rect, tag: str, scene: MetricScene) -> bool:
    """Whether the box content is nearer the custom appearance patch than the generic one."""
    crop = image[box.row0 : box.row1, box.col0 : box.col1]
    return _patch_distance(crop, scene.custom[tag]) < _patch_distance(crop, scene.generic[tag])


def blending_fraction(image: np.ndarray, boxes: Mapping[str, Rect], scene: MetricScene) -> float | None:
    """Share of object-coloured pixels in each box that are nearest another concept's colours."""
    owners, colors = ["_bg"], [scene.background]
    for tag in scene.tags:
        owners += [tag, tag]
        colors += [scene.generic[tag], scene.custom[tag]]
    colors = np.asarray(colors, dtype=np.float64)
    wrong = total = 0
    for tag, box in boxes.items():
        crop = image[box.row0 : box.row1, box.col0 : box.col1].reshape(-1, image.shape[-1])
        nearest = np.argmin(((crop[:, None, :] - colors[None]) ** 2).sum(-1), axis=1)
        labels = np.asarray(owners)[nearest]
        objects = labels != "_bg"
        total += int(objects.sum())
        wrong += int((objects & (labels != tag)).sum())
    return wrong / total if total else None


def sample_metrics(image: np.ndarray, scene: MetricScene) -> SampleMetrics:
    if image.shape != tuple(scene.shape):
        raise ValueError(f"image shape {image.shape} does not match scene grid {tuple(scene.shape)}")
    boxes = find_objects(image, scene)
    fid = [is_custom(image, box, tag, scene) for tag, box in boxes.items()]
    return SampleMetrics(
        covered=len(boxes) == len(scene.tags),
        objects_found=len(boxes),
        fidelity=float(np.mean(fid)) if fid else None,
        blending=blending_fraction(image, boxes, scene),
    )


def summarize(samples: Sequence[SampleMetrics | None]) -> dict[str, float]:
    """Aggregate per-sample metrics; ``None`` entries (no image produced) count as uncovered.

    ``fidelity_score`` averages over every found object, ``blending_score`` over
    samples with at least one object.
    """
    n = len(samples)
    done = [s for s in samples if s is not None]
    coverage = sum(s.covered for s in done) / n if n else 0.0
    fid_num = sum(s.fidelity * s.objects_found for s in done if s.fidelity is not None)
    fid_den = sum(s.objects_found for s in done if s.fidelity is not None)
    blends = [s.blending for s in done if s.blending is not None]
    return {
        "coverage_rate": coverage,
        "fidelity_score": fid_num / fid_den if fid_den else 0.0,
        "blending_score": float(np.mean(blends)) if blends else 0.0,
    }


def score(summary: Mapping[str, float]) -> float:
    """Single ranking number used by the ablation table."""
    return summary["coverage_rate"] * summary["fidelity_score"]


def format_rows(rows: Iterable[Mapping]) -> str:
    def fmt(v):
        if v is None:
            return ""
        if isinstance(v, bool):
            return str(int(v))
        if isinstance(v, float):
            return repr(round(v, 12))
        return str(v)

    lines = [",".join(CSV_COLUMNS)]
    for row in rows:
        lines.append(",".join(fmt(row.get(c)) for c in CSV_COLUMNS))
    return "\n".join(lines) + "\n"
