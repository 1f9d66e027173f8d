"""Strict parsing of run-config JSON documents.

Unknown keys are rejected and every cross-reference (model ids, condition
names, object tags) must resolve. Errors carry the dotted path of the
offending field, or the source line for JSON syntax errors.
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from .errors import ConditionResolutionError, ConfigError
from .fusion import MixSpace
from .grid import Rect
from .oracle import ConditionSpec, Template, TemplateMixtureModel, render
from .resample import ResampleConfig
from .sampler import GuidanceConfig
from .schedule import NoiseSchedule, build_schedule
from .segmentation import DEFAULT_MIN_AREA, DEFAULT_TAU, Signature

SECTIONS = ("schedule", "models", "conditions", "pipeline", "segmentation", "fusion_bindings", "resample", "output")
REQUIRED_SECTIONS = ("models", "conditions", "fusion_bindings")


@dataclass(frozen=True)
class Appearance:
    generic: tuple[float, ...]
    custom: tuple[float, ...]


@dataclass(frozen=True)
class BindingSpec:
    concept_id: int
    tag: str
    model_id: int
    condition: ConditionSpec


@dataclass(frozen=True)
class SegmentationConfig:
    signatures: tuple[Signature, ...]
    tau: float = DEFAULT_TAU
    min_area: int = DEFAULT_MIN_AREA
    extra_steps: int = 0


@dataclass
class PipelineConfig:
    """Everything :func:`conceptmix.pipeline.run` needs, fully resolved."""

    schedule: NoiseSchedule
    models: dict[int, TemplateMixtureModel]
    palette: dict[str, Appearance]
    content_condition: ConditionSpec
    t_con: int
    guidance: GuidanceConfig
    resample: ResampleConfig
    segmentation: SegmentationConfig
    bindings: list[BindingSpec]
    background: BindingSpec
    seeds: list[int]
    fusion_scale: float | None = None
    cfg_scale: float = 7.5
    mix_space: MixSpace = MixSpace.DENOISED
    content_phase: bool = True
    out_dir: str = "runs"
    dump_masks: bool = False
    dump_trajectory: bool = False
    raw: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        T = self.schedule.num_steps
        if not 1 <= self.t_con < T:
            raise ConfigError(f"t_con must satisfy 1 <= t_con < T={T}, got {self.t_con}", field="pipeline.t_con")
        if 0 not in self.models:
            raise ConfigError("model 0 (base) is required", field="models.library")
        for b in [*self.bindings, self.background]:
            if b.model_id not in self.models:
                raise ConfigError(f"unknown model id {b.model_id}", field="fusion_bindings")
        uses = [(0, self.content_condition, "pipeline.content_condition"), (0, self.resample.multi, "resample.multi")]
        uses += [(0, c, "resample.singles") for c in self.resample.singles]
        uses += [(b.model_id, b.condition, "fusion_bindings") for b in [*self.bindings, self.background]]
        for mid, cond, where in uses:
            try:
                self.models[mid].select(cond)
            except ConditionResolutionError as exc:
                raise ConfigError(str(exc), field=where) from None

    @property
    def base(self) -> TemplateMixtureModel:
        return self.models[0]

    @property
    def grid_shape(self) -> tuple[int, int, int]:
        return self.base.shape

    @property
    def tags(self) -> list[str]:
        return [b.tag for b in self.bindings]

    @property
    def scale_for_fusion(self) -> float:
        return self.guidance.scale if self.fusion_scale is None else self.fusion_scale

    def config_hash(self) -> str:
        return hash_config(self.raw)


def hash_config(raw: dict) -> str:
    canonical = json.dumps(raw, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode()).hexdigest()


class _Reader:
    """Strict accessor over one JSON object that tracks its dotted path."""

    def __init__(self, data: Any, path: str, allowed: tuple[str, ...]):
        if not isinstance(data, dict):
            raise ConfigError("expected an object", field=path)
        unknown = sorted(set(data) - set(allowed))
        if unknown:
            raise ConfigError(f"unknown key(s) {', '.join(unknown)}", field=path)
        self.data = data
        self.path = path

    def at(self, key: str) -> str:
        return f"{self.path}.{key}" if self.path else key

    def get(self, key: str, kind, default=..., check=None):
        if key not in self.data:
            if default is ...:
                raise ConfigError("missing required key", field=self.at(key))
            return default
        value = self.data[key]
        ok = isinstance(value, kind) and not (kind in (int, float, (int, float)) and isinstance(value, bool))
        if not ok:
            name = getattr(kind, "__name__", None) or "/".join(k.__name__ for k in kind)
            raise ConfigError(f"expected {name}, got {type(value).__name__}", field=self.at(key))
        if check is not None:
            problem = check(value)
            if problem:
                raise ConfigError(problem, field=self.at(key))
        return value

    def sub(self, key: str, allowed, default=...):
        if key not in self.data and default is not ...:
            return _Reader(default, self.at(key), allowed)
        return _Reader(self.get(key, dict), self.at(key), allowed)


def _color(value, path, channels):
    if not isinstance(value, list) or len(value) != channels or not all(
        isinstance(v, (int, float)) and not isinstance(v, bool) for v in value
    ):
        raise ConfigError(f"expected a list of {channels} numbers", field=path)
    return tuple(float(v) for v in value)


def _rect(value, path, shape):
    if not isinstance(value, list) or len(value) != 4 or not all(isinstance(v, int) for v in value):
        raise ConfigError("expected [row0, col0, row1, col1] integers", field=path)
    try:
        rect = Rect.from_sequence(value)
    except ValueError as exc:
        raise ConfigError(str(exc), field=path) from None
    if not rect.inside(shape[0], shape[1]):
        raise ConfigError(f"rectangle {value} leaves the {shape[0]}x{shape[1]} grid", field=path)
    return rect


def _schedule(doc) -> NoiseSchedule:
    r = _Reader(doc.get("schedule", {}), "schedule", ("kind", "num_steps", "beta_min", "beta_max"))
    return build_schedule(
        r.get("kind", str, "linear"),
        r.get("num_steps", int, 50),
        float(r.get("beta_min", (int, float), 1e-4)),
        float(r.get("beta_max", (int, float), 0.02)),
    )


def _condition(value, path, tags) -> ConditionSpec:
    r = _Reader(value, path, ("kind", "tag", "tags", "appearance", "text"))
    kind = r.get("kind", str, check=lambda k: None if k in ("null", "single", "multi") else f"unknown kind {k!r}")
    text = r.get("text", str, "")
    if kind == "null":
        return ConditionSpec.null()
    if kind == "single":
        tag = r.get("tag", str)
        if tag not in tags:
            raise ConfigError(f"unknown object tag {tag!r}", field=r.at("tag"))
        return ConditionSpec.single(tag, r.get("appearance", int, None), text)
    tag_list = r.get("tags", list, check=lambda v: None if v else "needs at least one tag")
    for i, tag in enumerate(tag_list):
        if tag not in tags:
            raise ConfigError(f"unknown object tag {tag!r}", field=f"{r.at('tags')}[{i}]")
    return ConditionSpec.multi(tag_list, text)


def _template(value, path, shape, background, palette, base_dir) -> Template:
    r = _Reader(value, path, ("weight", "tags", "appearance", "blobs", "image", "extents", "name"))
    weight = r.get("weight", (int, float), check=lambda w: None if w > 0 else "weight must be positive")
    tags = r.get("tags", list, check=lambda v: None if v else "needs at least one tag")
    for i, tag in enumerate(tags):
        if tag not in palette:
            raise ConfigError(f"unknown object tag {tag!r}", field=f"{r.at('tags')}[{i}]")
    appearance = r.get("appearance", int, 0, check=lambda a: None if a >= 0 else "appearance must be >= 0")
    extents: dict[str, Rect] = {}
    if "image" in r.data:
        if "blobs" in r.data:
            raise ConfigError("give either blobs or image, not both", field=path)
        from .imageio import read_pnm

        img_path = Path(base_dir) / r.get("image", str)
        try:
            image = read_pnm(img_path)
        except (OSError, ValueError) as exc:
            raise ConfigError(f"cannot load {img_path}: {exc}", field=r.at("image")) from None
        if image.shape != shape:
            raise ConfigError(f"image shape {image.shape} differs from grid {shape}", field=r.at("image"))
        ext = _Reader(r.get("extents", dict, {}), r.at("extents"), tuple(tags))
        for tag in ext.data:
            extents[tag] = _rect(ext.data[tag], ext.at(tag), shape)
    else:
        blobs = []
        for i, blob in enumerate(r.get("blobs", list)):
            bpath = f"{r.at('blobs')}[{i}]"
            b = _Reader(blob, bpath, ("tag", "rect", "look", "color"))
            tag = b.get("tag", str)
            if tag not in tags:
                raise ConfigError(f"blob tag {tag!r} not among template tags", field=b.at("tag"))
            rect = _rect(b.get("rect", list), b.at("rect"), shape)
            if "color" in b.data:
                color = _color(b.data["color"], b.at("color"), shape[2])
            else:
                look = b.get("look", str, "generic",
                             check=lambda v: None if v in ("generic", "custom") else "look must be generic or custom")
                color = getattr(palette[tag], look)
            blobs.append((rect, color))
            extents[tag] = rect
        image = render(shape, background, blobs)
    try:
        return Template(image, float(weight), frozenset(tags), appearance, extents, r.get("name", str, ""))
    except ValueError as exc:
        raise ConfigError(str(exc), field=path) from None


def _models(doc, schedule, base_dir):
    r = _Reader(doc["models"], "models", ("grid", "background", "data_sigma", "palette", "library"))
    grid = r.get("grid", list, check=lambda g: None if len(g) == 3 and all(isinstance(v, int) and v > 0 for v in g)
                 else "grid must be [height, width, channels] positive integers")
    shape = tuple(grid)
    background = _color(r.get("background", list, [0.0] * shape[2]), r.at("background"), shape[2])
    sigma = float(r.get("data_sigma", (int, float), 0.05, check=lambda s: None if s >= 0 else "must be >= 0"))
    pal = r.get("palette", dict, check=lambda p: None if p else "palette needs at least one object")
    palette = {}
    for tag, entry in pal.items():
        e = _Reader(entry, f"{r.at('palette')}.{tag}", ("generic", "custom"))
        palette[tag] = Appearance(
            _color(e.get("generic", list), e.at("generic"), shape[2]),
            _color(e.get("custom", list), e.at("custom"), shape[2]),
        )
    models = {}
    for i, lib in enumerate(r.get("library", list)):
        lpath = f"{r.at('library')}[{i}]"
        lr = _Reader(lib, lpath, ("id", "templates", "data_sigma"))
        mid = lr.get("id", int, check=lambda v: None if v >= 0 else "model id must be >= 0")
        if mid in models:
            raise ConfigError(f"duplicate model id {mid}", field=lr.at("id"))
        templates = [
            _template(t, f"{lr.at('templates')}[{j}]", shape, background, palette, base_dir)
            for j, t in enumerate(lr.get("templates", list, check=lambda v: None if v else "empty library"))
        ]
        lsigma = float(lr.get("data_sigma", (int, float), sigma))
        try:
            models[mid] = TemplateMixtureModel(mid, templates, schedule, lsigma)
        except ValueError as exc:
            raise ConfigError(str(exc), field=lpath) from None
    return models, palette


def _lookup(name, conditions, path):
    if name not in conditions:
        raise ConfigError(f"unknown condition {name!r}", field=path)
    return conditions[name]


def _seeds(value, path) -> list[int]:
    if isinstance(value, list):
        if not value or not all(isinstance(s, int) and not isinstance(s, bool) and s >= 0 for s in value):
            raise ConfigError("seeds must be a nonempty list of nonnegative integers", field=path)
        return list(value)
    r = _Reader(value, path, ("start", "count"))
    start = r.get("start", int, 0, check=lambda v: None if v >= 0 else "must be >= 0")
    count = r.get("count", int, check=lambda v: None if v > 0 else "must be > 0")
    return list(range(start, start + count))


def parse_config(doc: dict, base_dir: str | os.PathLike = ".") -> PipelineConfig:
    """Validate a decoded run-config document and build every runtime object."""
    top = _Reader(doc, "", SECTIONS)
    for name in REQUIRED_SECTIONS:
        if name not in doc:
            raise ConfigError("missing required section", field=name)
    schedule = _schedule(doc)
    models, palette = _models(doc, schedule, base_dir)
    tags = set(palette)

    conditions = {
        name: _condition(c, f"conditions.{name}", tags)
        for name, c in top.get("conditions", dict).items()
    }

    p = top.sub("pipeline", ("t_con", "guidance", "cfg_scale", "content_condition", "seeds",
                             "mix_space", "content_phase"), default={})
    T = schedule.num_steps
    t_con = p.get("t_con", int, round(0.8 * T))
    g = p.sub("guidance", ("mode", "scale"), default={})
    guidance = GuidanceConfig(g.get("mode", str, "cfg_pp"), float(g.get("scale", (int, float), 0.6)))
    cfg_scale = float(p.get("cfg_scale", (int, float), 7.5, check=lambda w: None if w >= 1 else "must be >= 1"))
    content = _lookup(p.get("content_condition", str, "c_mul"), conditions, p.at("content_condition"))
    if content.is_null:
        raise ConfigError("content condition must not be null", field=p.at("content_condition"))
    seeds = _seeds(p.data.get("seeds", [0]), p.at("seeds"))
    try:
        mix_space = MixSpace(p.get("mix_space", str, "denoised"))
    except ValueError:
        raise ConfigError("mix_space must be denoised or noise", field=p.at("mix_space")) from None
    content_phase = p.get("content_phase", bool, True)

    fb = top.sub("fusion_bindings", ("background", "concepts", "scale"))
    fusion_scale = fb.get("scale", (int, float, type(None)), None)

    def binding(value, path, concept_id=None):
        keys = ("model", "condition") if concept_id == 0 else ("concept_id", "tag", "model", "condition")
        b = _Reader(value, path, keys)
        mid = b.get("model", int)
        if mid not in models:
            raise ConfigError(f"unknown model id {mid}", field=b.at("model"))
        cond = _lookup(b.get("condition", str), conditions, b.at("condition"))
        if concept_id == 0:
            return BindingSpec(0, "", mid, cond)
        tag = b.get("tag", str)
        if tag not in tags:
            raise ConfigError(f"unknown object tag {tag!r}", field=b.at("tag"))
        cid = b.get("concept_id", int, check=lambda v: None if v >= 1 else "concept ids start at 1")
        if cond.is_null:
            raise ConfigError("concept bindings need a non-null condition", field=b.at("condition"))
        return BindingSpec(cid, tag, mid, cond)

    background = binding(fb.data.get("background", {"model": 0, "condition": "c_mul"}),
                         fb.at("background"), concept_id=0)
    concepts = [binding(c, f"{fb.at('concepts')}[{i}]") for i, c in enumerate(
        fb.get("concepts", list, check=lambda v: None if v else "needs at least one concept"))]
    seen_tags = [b.tag for b in concepts]
    if len(set(seen_tags)) != len(seen_tags):
        raise ConfigError("each object tag may be bound once", field=fb.at("concepts"))

    s = top.sub("segmentation", ("tau", "min_area", "extra_steps", "signatures"), default={})
    tau = float(s.get("tau", (int, float), DEFAULT_TAU, check=lambda v: None if 0 < v < 1 else "tau must lie in (0, 1)"))
    sig_doc = s.get("signatures", dict, {})
    sigs = []
    for tag in seen_tags:
        color = sig_doc.get(tag)
        sigs.append(Signature(tag, _color(color, f"{s.at('signatures')}.{tag}", len(palette[tag].generic))
                              if color is not None else palette[tag].generic))
    for tag in sig_doc:
        if tag not in seen_tags:
            raise ConfigError(f"signature for unbound tag {tag!r}", field=s.at("signatures"))
    segmentation = SegmentationConfig(
        tuple(sigs),
        tau,
        s.get("min_area", int, DEFAULT_MIN_AREA, check=lambda v: None if v >= 1 else "must be >= 1"),
        s.get("extra_steps", int, 0, check=lambda v: None if v >= 0 else "must be >= 0"),
    )

    rs = top.sub("resample", ("num_rounds", "multi", "singles", "fresh_noise", "scale"), default={})
    resample = ResampleConfig(
        rs.get("num_rounds", int, 10),
        _lookup(rs.get("multi", str, "c_mul"), conditions, rs.at("multi")),
        tuple(_lookup(name, conditions, f"{rs.at('singles')}[{i}]")
              for i, name in enumerate(rs.get("singles", list, [f"c_{t}" for t in seen_tags]))),
        float(rs.get("scale", (int, float), guidance.scale)),
        rs.get("fresh_noise", bool, False),
    )

    o = top.sub("output", ("dir", "dump_masks", "dump_trajectory"), default={})
    return PipelineConfig(
        schedule=schedule,
        models=models,
        palette=palette,
        content_condition=content,
        t_con=t_con,
        guidance=guidance,
        resample=resample,
        segmentation=segmentation,
        bindings=concepts,
        background=background,
        seeds=seeds,
        fusion_scale=None if fusion_scale is None else float(fusion_scale),
        cfg_scale=cfg_scale,
        mix_space=mix_space,
        content_phase=content_phase,
        out_dir=o.get("dir", str, "runs"),
        dump_masks=o.get("dump_masks", bool, False),
        dump_trajectory=o.get("dump_trajectory", bool, False),
        raw=doc,
    )


def load_config(path: str | os.PathLike) -> PipelineConfig:
    """Read and parse a run config; JSON syntax errors report their line."""
    path = Path(path)
    text = path.read_text()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(exc.msg, line=exc.lineno) from None
    return parse_config(doc, base_dir=path.parent)
