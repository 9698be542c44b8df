import numpy as np
import pytest
from scipy import ndimage

from promptseg.errors import EmptySegmentation, NoForeground
from promptseg.maskgen import (
    BoxPrompt,
    IntensityThresholdSegmenter,
    ZeroShotOptions,
    create_segmenter,
    extract_boxes,
    segment_with_boxes,
    zero_shot_segment,
)
from promptseg.metrics import iou_dsc


def test_single_component_tight_box():
    mask = np.zeros((10, 10), dtype=bool)
    mask[2:6, 3:8] = True  # rows 2-5, cols 3-7
    assert extract_boxes(mask) == [BoxPrompt(3, 2, 7, 5)]


def test_empty_mask_no_foreground():
    with pytest.raises(NoForeground):
        extract_boxes(np.zeros((10, 10), dtype=bool))


def test_two_components_sorted_by_area():
    mask = np.zeros((100, 100), dtype=bool)
    mask[10:30, 10:20] = True  # 200 px
    mask[60:75, 60:70] = True  # 150 px, above the 1% (100 px) threshold
    boxes = extract_boxes(mask, min_area_fraction=0.01)
    assert boxes == [BoxPrompt(10, 10, 19, 29), BoxPrompt(60, 60, 69, 74)]


def test_area_threshold_filters_small_components():
    mask = np.zeros((100, 100), dtype=bool)
    mask[10:30, 10:20] = True
    mask[60:63, 60:63] = True  # 9 px, under 1% of 10000
    assert len(extract_boxes(mask)) == 1


def test_multi_box_false_keeps_largest():
    mask = np.zeros((100, 100), dtype=bool)
    mask[10:30, 10:20] = True
    mask[60:80, 60:80] = True  # 400 px, larger
    boxes = extract_boxes(mask, multi_box=False)
    assert boxes == [BoxPrompt(60, 60, 79, 79)]


def test_boxes_are_tight_on_random_masks(rng):
    structure = np.ones((3, 3), dtype=int)
    for _ in range(100):
        mask = rng.random((24, 24)) > 0.8
        try:
            boxes = extract_boxes(mask, min_area_fraction=0.0)
        except NoForeground:
            assert not mask.any()
            continue
        labeled, _ = ndimage.label(mask, structure=structure)
        for box in boxes:
            sub = mask[box.ymin : box.ymax + 1, box.xmin : box.xmax + 1]
            # shrinking any side by one pixel drops at least one foreground
            # pixel of the component that produced the box
            comp = labeled[box.ymin : box.ymax + 1, box.xmin : box.xmax + 1] > 0
            tight = sub & comp
            assert tight[0].any() and tight[-1].any()
            assert tight[:, 0].any() and tight[:, -1].any()


def test_degenerate_box_rejected():
    with pytest.raises(ValueError):
        BoxPrompt(5, 0, 4, 0)


def test_segment_with_boxes_intensity_threshold():
    img = np.zeros((32, 32, 3))
    img[8:16, 8:16] = 0.9  # bright square
    seg = IntensityThresholdSegmenter(threshold=0.5)
    box = extract_boxes(img[:, :, 0] > 0.5)[0]
    mask = segment_with_boxes(seg, img, [box])
    np.testing.assert_array_equal(mask, img[:, :, 0] > 0.5)


def test_segment_with_background_box_empty_allowed(caplog):
    img = np.zeros((32, 32, 3))
    seg = IntensityThresholdSegmenter()
    mask = segment_with_boxes(seg, img, [BoxPrompt(0, 0, 5, 5)])
    assert not mask.any()


def test_segment_union_of_disjoint_boxes():
    img = np.zeros((32, 32, 3))
    img[2:6, 2:6] = 1.0
    img[20:26, 20:26] = 1.0
    seg = IntensityThresholdSegmenter()
    mask = segment_with_boxes(seg, img, [BoxPrompt(2, 2, 5, 5), BoxPrompt(20, 20, 25, 25)])
    np.testing.assert_array_equal(mask, img[:, :, 0] > 0.5)


def test_zero_shot_end_to_end(synthetic_backend):
    seg = IntensityThresholdSegmenter()
    for concept in synthetic_backend.vocabulary:
        img = synthetic_backend.render_concept(concept)
        gt = synthetic_backend.concept_region(concept)
        result = zero_shot_segment(
            synthetic_backend, seg, img, concept,
            ZeroShotOptions(top_k=len(synthetic_backend.vocabulary)),
        )
        iou, _ = iou_dsc(result.mask, gt)
        assert iou >= 0.7


def test_zero_shot_absent_concept_empty(synthetic_backend):
    seg = IntensityThresholdSegmenter()
    img = synthetic_backend.render_concept("disk")
    with pytest.raises(EmptySegmentation) as excinfo:
        zero_shot_segment(synthetic_backend, seg, img, "square",
                          ZeroShotOptions(method="gradcam"))
    assert excinfo.value.saliency is not None


def test_zero_shot_provenance_replays_bit_exactly(synthetic_backend):
    seg = IntensityThresholdSegmenter()
    img = synthetic_backend.render_concept("lung")
    opts = ZeroShotOptions(method="gscorecam", top_k=4)
    first = zero_shot_segment(synthetic_backend, seg, img, "lung", opts)
    prov = first.provenance
    replay_opts = ZeroShotOptions(
        method=prov["method"],
        top_k=prov["top_k"],
        min_area_fraction=prov["min_area_fraction"],
        multi_box=prov["multi_box"],
    )
    second = zero_shot_segment(synthetic_backend, seg, img, prov["prompt"], replay_opts)
    np.testing.assert_array_equal(first.mask, second.mask)
    np.testing.assert_array_equal(first.saliency.values, second.saliency.values)
    assert first.provenance == second.provenance


def test_zero_shot_records_gradcam_provenance(synthetic_backend):
    seg = IntensityThresholdSegmenter()
    img = synthetic_backend.render_concept("disk")
    result = zero_shot_segment(synthetic_backend, seg, img, "disk",
                               ZeroShotOptions(method="gradcam"))
    assert result.provenance["method"] == "gradcam"


def test_create_segmenter_unknown():
    from promptseg.errors import BackendUnavailable

    with pytest.raises(BackendUnavailable):
        create_segmenter({"name": "nope"})
    with pytest.raises(BackendUnavailable):
        create_segmenter({"name": "sam", "checkpoint_path": "/missing.pt"})
