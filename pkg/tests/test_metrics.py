import numpy as np
import pytest

from conceptmix.config import parse_config
from conceptmix.grid import Rect
from conceptmix.metrics import (
    CSV_COLUMNS,
    MetricScene,
    SampleMetrics,
    blending_fraction,
    format_rows,
    sample_metrics,
    score,
    summarize,
)
from conceptmix.oracle import render


@pytest.fixture
def mscene(scene):
    return MetricScene.from_config(parse_config(scene))


def _img(mscene, blobs):
    return render(mscene.shape, mscene.background, blobs)


def test_custom_composite_is_perfect(mscene):
    img = _img(mscene, [(Rect(4, 1, 12, 7), mscene.custom["cat"]), (Rect(4, 9, 12, 15), mscene.custom["dog"])])
    m = sample_metrics(img, mscene)
    assert m == SampleMetrics(covered=True, objects_found=2, fidelity=1.0, blending=0.0)


def test_generic_composite_has_zero_fidelity(mscene):
    img = _img(mscene, [(Rect(4, 1, 12, 7), mscene.generic["cat"]), (Rect(4, 9, 12, 15), mscene.generic["dog"])])
    m = sample_metrics(img, mscene)
    assert m.covered and m.fidelity == 0.0


def test_blank_image_is_uncovered(mscene):
    m = sample_metrics(_img(mscene, []), mscene)
    assert m == SampleMetrics(False, 0, None, None)


def test_blending_counts_wrong_concept_pixels(mscene):
    # the cat box carries a 2x2 patch of dog colour: 4 of 48 object pixels are wrong
    img = _img(mscene, [(Rect(4, 1, 12, 7), mscene.custom["cat"]), (Rect(5, 2, 7, 4), mscene.custom["dog"])])
    boxes = {"cat": Rect(4, 1, 12, 7)}
    assert blending_fraction(img, boxes, mscene) == pytest.approx(4 / 48)


def test_shape_mismatch(mscene):
    with pytest.raises(ValueError, match="shape"):
        sample_metrics(np.zeros((3, 3, 3)), mscene)


def test_summarize_and_score():
    rows = [
        SampleMetrics(True, 2, 1.0, 0.0),
        SampleMetrics(False, 1, 0.0, 0.5),
        None,
        SampleMetrics(True, 2, 0.5, 0.1),
    ]
    s = summarize(rows)
    assert s["coverage_rate"] == 0.5
    assert s["fidelity_score"] == pytest.approx((2 * 1.0 + 0 + 2 * 0.5) / 5)
    assert s["blending_score"] == pytest.approx(0.2)
    assert score(s) == pytest.approx(0.5 * 0.6)
    assert summarize([]) == {"coverage_rate": 0.0, "fidelity_score": 0.0, "blending_score": 0.0}


def test_format_rows_stable_columns():
    text = format_rows([{"seed": 3, "status": "ok", "covered": True, "objects_found": 2, "fidelity": 0.5,
                         "blending": None}])
    lines = text.splitlines()
    assert lines[0] == ",".join(CSV_COLUMNS)
    assert lines[1] == "3,ok,1,2,0.5,"
