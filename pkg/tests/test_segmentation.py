import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conceptmix.errors import ExtractionFailed, PartitionError
from conceptmix.grid import Rect
from conceptmix.oracle import render
from conceptmix.sampler import GuidanceConfig, SamplerState, cfgpp_step, guided_denoised
from conceptmix.segmentation import (
    RegionMaskSet,
    Signature,
    check_partition,
    detect_objects,
    extract_masks,
    find_blob,
    intermediate_image,
    is_partition,
    resolve_overlaps,
    signatures_separated,
)

from .conftest import BG, CAT, DOG

SIGS = (Signature("cat", CAT), Signature("dog", DOG))


def test_find_blob_tight_box_of_largest_component():
    img = render((10, 10, 3), BG, [(Rect(1, 1, 4, 5), CAT), (Rect(7, 7, 8, 8), CAT)])
    assert find_blob(img, CAT) == Rect(1, 1, 4, 5)
    assert find_blob(img, DOG) is None


def test_find_blob_respects_tau_and_min_area():
    img = render((6, 6, 3), BG, [(Rect(0, 0, 2, 2), CAT)])
    shifted = img + np.where(img == img[0, 0], 0.1, 0.0)
    assert find_blob(shifted, CAT, tau=0.15) == Rect(0, 0, 2, 2)
    assert find_blob(shifted, CAT, tau=0.05) is None
    assert find_blob(img, CAT, min_area=5) is None
    assert find_blob(img, CAT, min_area=4) == Rect(0, 0, 2, 2)


def test_detect_objects_missing_tag_fails():
    img = render((8, 8, 3), BG, [(Rect(0, 0, 3, 3), CAT)])
    with pytest.raises(ExtractionFailed) as exc:
        detect_objects(img, SIGS)
    assert exc.value.reason == "no component found" and exc.value.tag == "dog"


def test_extract_masks_side_by_side():
    img = render((8, 8, 3), BG, [(Rect(2, 0, 6, 4), CAT), (Rect(2, 4, 6, 8), DOG)])
    masks = extract_masks(img, SIGS)
    assert masks.tags == ("cat", "dog")
    assert masks.mask_for("cat").sum() == 16 and masks.mask_for("dog").sum() == 16
    assert masks.background.sum() == 32
    assert masks.is_partition()
    d = masks.as_dict()
    assert d["regions"][0] == {"tag": "cat", "box": [2, 0, 6, 4], "pixels": 16}


def test_overlap_priority_clips_later_box():
    masks = resolve_overlaps([("cat", Rect(0, 0, 4, 4)), ("dog", Rect(2, 2, 6, 6))], (6, 6))
    assert masks.mask_for("cat").sum() == 16
    assert masks.mask_for("dog").sum() == 16 - 4
    assert not masks.mask_for("dog")[2, 2]
    assert masks.is_partition()


def test_nested_box_is_complete_overlap():
    with pytest.raises(ExtractionFailed) as exc:
        resolve_overlaps([("cat", Rect(0, 0, 6, 6)), ("dog", Rect(1, 1, 3, 3))], (6, 6))
    assert exc.value.reason == "complete overlap" and exc.value.tag == "dog"


def test_custom_segmenter_is_used():
    img = np.zeros((4, 4, 3))
    seg = lambda image, sigs: [(s.tag, Rect(0, i * 2, 4, i * 2 + 2)) for i, s in enumerate(sigs)]
    masks = extract_masks(img, SIGS, segmenter=seg)
    assert masks.background.sum() == 0 and masks.is_partition()


def test_partition_helpers():
    a = np.zeros((2, 2), bool)
    a[0] = True
    assert is_partition([a, ~a])
    assert not is_partition([a, a])
    assert not is_partition([])
    with pytest.raises(PartitionError):
        check_partition([a, np.zeros_like(a)])


def test_signature_separation_warning():
    assert signatures_separated(SIGS, 0.15) == []
    close = (Signature("a", (0.5, 0.5, 0.5)), Signature("b", (0.6, 0.5, 0.5)))
    warnings = signatures_separated(close, 0.15)
    assert len(warnings) == 1 and "'a'" in warnings[0] and "'b'" in warnings[0]


def test_intermediate_image_reads_without_mutating(models, conds, schedule, rng):
    base = models[0]
    z = rng.standard_normal(base.shape)
    keep = z.copy()
    img = intermediate_image(z, 41, base, conds["mul"], 0.6, schedule)
    np.testing.assert_array_equal(z, keep)
    np.testing.assert_array_equal(img, guided_denoised(base, base, z, 41, conds["mul"], 0.6, schedule))


def test_intermediate_image_extra_steps(models, conds, schedule, rng):
    base = models[0]
    z = rng.standard_normal(base.shape)
    s = SamplerState(z, 41)
    for _ in range(2):
        s = cfgpp_step(s, base, base, conds["mul"], 0.6, schedule)
    expected = guided_denoised(base, base, s.z, 39, conds["mul"], 0.6, schedule)
    got = intermediate_image(z, 41, base, conds["mul"], GuidanceConfig("cfg_pp", 0.6), schedule, extra_steps=2)
    np.testing.assert_array_equal(got, expected)


rects = st.tuples(st.integers(0, 7), st.integers(0, 7), st.integers(1, 8), st.integers(1, 8)).filter(
    lambda r: r[2] > r[0] and r[3] > r[1]
).map(lambda r: Rect(*r))


@settings(max_examples=200, deadline=None)
@given(boxes=st.lists(rects, min_size=1, max_size=4))
def test_resolution_is_partition_or_failure(boxes):
    named = [(f"o{i}", b) for i, b in enumerate(boxes)]
    try:
        masks = resolve_overlaps(named, (8, 8))
    except ExtractionFailed as exc:
        assert exc.reason == "complete overlap"
        return
    assert isinstance(masks, RegionMaskSet)
    assert masks.is_partition()
    for (_, box), m in zip(named, masks.masks):
        assert m.any()
        assert not (m & ~box.raster(8, 8)).any()
