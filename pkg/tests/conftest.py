from __future__ import annotations

import copy

import numpy as np
import pytest

from conceptmix.grid import Rect
from conceptmix.oracle import ConditionSpec, Template, TemplateMixtureModel, render
from conceptmix.scenes import build_scene
from conceptmix.schedule import build_schedule

BG = (0.1, 0.1, 0.1)
CAT, CAT_CUSTOM = (0.9, 0.5, 0.1), (0.6, 0.2, 0.9)
DOG, DOG_CUSTOM = (0.3, 0.8, 0.3), (0.2, 0.3, 0.9)
LEFT, RIGHT, CENTRE = Rect(2, 0, 6, 4), Rect(2, 4, 6, 8), Rect(2, 2, 6, 6)


@pytest.fixture(scope="session")
def schedule():
    return build_schedule("linear", 50, 1e-4, 0.2)


def _tpl(blobs, tags, weight=1.0, appearance=0, shape=(8, 8, 3)):
    image = render(shape, BG, blobs)
    return Template(image, weight, frozenset(tags), appearance)


def tiny_models(schedule, sigma=0.05):
    """8x8 two-object toy: base plus one concept model per object."""
    base = TemplateMixtureModel(0, [
        _tpl([(CENTRE, CAT)], {"cat"}, 2.0),
        _tpl([(CENTRE, DOG)], {"dog"}, 2.0),
        _tpl([(LEFT, CAT), (RIGHT, DOG)], {"cat", "dog"}),
        _tpl([(LEFT, DOG), (RIGHT, CAT)], {"cat", "dog"}),
    ], schedule, sigma)
    cat = TemplateMixtureModel(1, [
        _tpl([(CENTRE, CAT_CUSTOM)], {"cat"}, 2.0, appearance=1),
        _tpl([(CENTRE, DOG)], {"dog"}, 2.0),
        _tpl([(LEFT, CAT_CUSTOM), (RIGHT, DOG)], {"cat", "dog"}, appearance=1),
    ], schedule, sigma)
    dog = TemplateMixtureModel(2, [
        _tpl([(CENTRE, CAT)], {"cat"}, 2.0),
        _tpl([(CENTRE, DOG_CUSTOM)], {"dog"}, 2.0, appearance=2),
        _tpl([(LEFT, CAT), (RIGHT, DOG_CUSTOM)], {"cat", "dog"}, appearance=2),
    ], schedule, sigma)
    return base, cat, dog


@pytest.fixture
def models(schedule):
    return tiny_models(schedule)


@pytest.fixture
def conds():
    return {
        "mul": ConditionSpec.multi(["cat", "dog"]),
        "cat": ConditionSpec.single("cat"),
        "dog": ConditionSpec.single("dog"),
        "null": ConditionSpec.null(),
    }


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def scene_doc():
    """Two-concept shipped scene, shrunk to a 16-pixel grid and a few seeds for speed."""
    return build_scene(("cat", "dog"), grid=16, seeds=6)


@pytest.fixture
def scene(scene_doc):
    return copy.deepcopy(scene_doc)


def pytest_terminal_summary(terminalreporter):
    """One pass/fail line per acceptance criterion, in criterion order."""
    lines = []
    for outcome in ("passed", "failed"):
        for rep in terminalreporter.stats.get(outcome, []):
            if rep.when != "call" or "test_acceptance.py::test_criterion_" not in rep.nodeid:
                continue
            props = dict(rep.user_properties)
            lines.append((props.get("number", 0), outcome.upper()[:4], props.get("title", rep.nodeid),
                          props.get("detail", "")))
    if not lines:
        return
    terminalreporter.section("acceptance criteria")
    for number, verdict, title, detail in sorted(lines):
        terminalreporter.write_line(f"criterion {number:>2} {verdict}  {title}" + (f" ({detail})" if detail else ""))
