"""Builders for the shipped toy scenes.

A scene places colour-coded objects ("cat", "dog", ...) on a flat background.
The base library mixes

* single objects, large and centred (the bulk of the prior);
* the same centred single objects captioned with *every* object tag, the
  toy version of a multi-object prompt that renders only one object;
* side-by-side arrangements holding every object, in every slot order.

Each object has a generic and a custom colour. The base model renders the
custom colour only rarely (``custom_rate``); concept model ``i`` always renders
its own object in custom colour. The builders return plain config dicts in the
run-config format so they can be dumped to JSON.
"""

from __future__ import annotations

import itertools
import json
from importlib import resources

GRID = 24
BACKGROUND = [0.15, 0.15, 0.15]

PALETTE = {
    "cat": {"generic": [0.95, 0.55, 0.10], "custom": [0.60, 0.20, 0.85]},
    "dog": {"generic": [0.30, 0.75, 0.30], "custom": [0.20, 0.35, 0.95]},
    "ball": {"generic": [0.95, 0.95, 0.40], "custom": [0.95, 0.25, 0.45]},
}


def _scaled(rect, unit):
    return [round(v * unit) for v in rect]


def _layout(num_objects: int, grid: int):
    """Centre box for singles and side-by-side slots for multi-object images."""
    u = grid / 16
    if num_objects == 2:
        slots = [_scaled((4, 1, 12, 7), u), _scaled((4, 9, 12, 15), u)]
    elif num_objects == 3:
        slots = [_scaled((5, 0, 11, 5), u), _scaled((5, 5.5, 11, 10.5), u), _scaled((5, 11, 11, 16), u)]
    else:
        raise ValueError("toy scenes hold two or three objects")
    return _scaled((3, 4, 13, 12), u), slots


def _library(model_id, tags, custom_tag, grid, weights, custom_rate):
    centre, slots = _layout(len(tags), grid)

    def looks(tag):
        if tag == custom_tag:
            return [("custom", 1.0)]
        return [("generic", 1.0 - custom_rate), ("custom", custom_rate)]

    def appearance(pairs):
        return model_id if any(t == custom_tag for t, _ in pairs) else 0

    templates = []
    for tag in tags:
        for look, frac in looks(tag):
            blob = {"tag": tag, "rect": centre, "look": look}
            app = appearance([(tag, look)])
            templates.append({"weight": weights["single"] * frac, "tags": [tag],
                              "appearance": app, "blobs": [blob]})
            templates.append({"weight": weights["dropped"] * frac, "tags": list(tags),
                              "appearance": app, "blobs": [blob]})
    for order in itertools.permutations(tags):
        for combo in itertools.product(*(looks(t) for t in order)):
            frac = 1.0
            blobs = []
            for tag, slot, (look, f) in zip(order, slots, combo):
                frac *= f
                blobs.append({"tag": tag, "rect": slot, "look": look})
            templates.append({
                "weight": weights["multi"] * frac,
                "tags": list(tags),
                "appearance": appearance([(b["tag"], b["look"]) for b in blobs]),
                "blobs": blobs,
            })
    for t in templates:
        t["weight"] = round(t["weight"], 12)
    return {"id": model_id, "templates": templates}


def build_scene(
    tags=("cat", "dog"),
    grid: int = GRID,
    custom_rate: float = 0.05,
    single_weight: float = 0.25,
    dropped_weight: float = 0.10,
    multi_weight: float = 0.03,
    seeds: int = 200,
    out_dir: str = "runs",
) -> dict:
    """Run config for a scene with one concept model per tag."""
    tags = list(tags)
    weights = {"single": single_weight, "dropped": dropped_weight, "multi": multi_weight}
    libraries = [_library(0, tags, None, grid, weights, custom_rate)]
    libraries += [_library(i, tags, tag, grid, weights, custom_rate) for i, tag in enumerate(tags, 1)]
    conditions = {"c_mul": {"kind": "multi", "tags": tags, "text": " and ".join(f"a {t}" for t in tags)}}
    for i, tag in enumerate(tags, 1):
        conditions[f"c_{tag}"] = {"kind": "single", "tag": tag, "text": f"a [c{i}] {tag}"}
    return {
        "schedule": {"kind": "linear", "num_steps": 50, "beta_min": 1e-4, "beta_max": 0.2},
        "models": {
            "grid": [grid, grid, 3],
            "background": BACKGROUND,
            "data_sigma": 0.05,
            "palette": {t: PALETTE[t] for t in tags},
            "library": libraries,
        },
        "conditions": conditions,
        "pipeline": {
            "t_con": 40,
            "guidance": {"mode": "cfg_pp", "scale": 0.6},
            "cfg_scale": 7.5,
            "content_condition": "c_mul",
            "seeds": {"start": 0, "count": seeds},
        },
        "segmentation": {"tau": 0.15, "min_area": 4, "extra_steps": 3},
        "fusion_bindings": {
            "background": {"model": 0, "condition": "c_mul"},
            "concepts": [
                {"concept_id": i, "tag": tag, "model": i, "condition": f"c_{tag}"}
                for i, tag in enumerate(tags, 1)
            ],
        },
        "resample": {
            "num_rounds": 10,
            "multi": "c_mul",
            "singles": [f"c_{tag}" for tag in tags],
        },
        "output": {"dir": out_dir},
    }


SHIPPED = {
    "two_concept": lambda: build_scene(("cat", "dog"), out_dir="runs/two_concept"),
    "three_concept": lambda: build_scene(("cat", "dog", "ball"), seeds=50, out_dir="runs/three_concept"),
}


def scene_path(name: str):
    return resources.files("conceptmix") / "scenes" / f"{name}.json"


def load_scene(name: str) -> dict:
    return json.loads(scene_path(name).read_text())


if __name__ == "__main__":
    import pathlib

    here = pathlib.Path(__file__).parent / "scenes"
    for name, make in SHIPPED.items():
        (here / f"{name}.json").write_text(json.dumps(make(), indent=1) + "\n")
