from __future__ import annotations

import numpy as np
import pytest

from roadval.bev import BevMask, GridSpec, RoadMask
from roadval.metrics import (
    CITYSCAPES_POLICY,
    SYNTHETIC_POLICY,
    LabelPolicy,
    OverlapCounts,
    dice,
    error_masks,
    error_overlay,
    ios,
    iom,
    metrics_from_counts,
    overlap_counts,
)

POLICY = SYNTHETIC_POLICY  # road=1, occluder=2, ignore=3, void=255
ROAD, OCC, IGN, VOID, BG = 1, 2, 3, 255, 0


def _grid(w: int, h: int) -> GridSpec:
    return GridSpec(resolution_m=1.0, width_px=w, height_px=h, vehicle_px=(0, 0))


def _bev(labels: np.ndarray, valid: np.ndarray | None = None) -> BevMask:
    h, w = labels.shape
    if valid is None:
        valid = labels != VOID
    return BevMask(grid=_grid(w, h), labels=labels.astype(np.uint8), valid=valid)


def _road(mask: np.ndarray) -> RoadMask:
    h, w = mask.shape
    return RoadMask(grid=_grid(w, h), road=mask.astype(bool))


def test_perfect_overlap_counts():
    labels = np.full((4, 4), ROAD, dtype=np.uint8)
    counts = overlap_counts(_bev(labels), _road(np.ones((4, 4))), POLICY)
    assert (counts.tp, counts.fp, counts.fn) == (16, 0, 0)
    assert counts.occluded == counts.ignored == counts.invalid == 0


def test_hand_counted_quadrant_example():
    # segmentation road = left two columns (8 px), map road = top two rows (8 px)
    labels = np.full((4, 4), BG, dtype=np.uint8)
    labels[:, :2] = ROAD
    map_road = np.zeros((4, 4), dtype=bool)
    map_road[:2, :] = True
    counts = overlap_counts(_bev(labels), _road(map_road), POLICY)
    assert (counts.tp, counts.fp, counts.fn) == (4, 4, 4)
    m = metrics_from_counts(counts)
    assert m.ios == pytest.approx(0.5)
    assert m.dice == pytest.approx(0.5)


def test_hand_counted_occlusion_example():
    # map road = 8 px, 4 covered by road labels, 2 by occluders
    labels = np.full((4, 4), BG, dtype=np.uint8)
    map_road = np.zeros((4, 4), dtype=bool)
    map_road[:2, :] = True
    labels[0, :] = ROAD  # tp = 4
    labels[1, :2] = OCC  # occluded = 2
    counts = overlap_counts(_bev(labels), _road(map_road), POLICY)
    assert (counts.tp, counts.fp, counts.fn, counts.occluded) == (4, 0, 2, 2)
    assert iom(counts) == pytest.approx(2.0 / 3.0)


@pytest.mark.parametrize(
    "counts,expected",
    [
        (OverlapCounts(4, 4, 0, 0, 0, 0, 16), 0.5),
        (OverlapCounts(0, 0, 5, 0, 0, 0, 16), None),
        (OverlapCounts(5, 0, 3, 0, 0, 0, 16), 1.0),
    ],
)
def test_ios_examples(counts, expected):
    assert ios(counts) == (pytest.approx(expected) if expected is not None else None)


@pytest.mark.parametrize(
    "counts,expected",
    [
        (OverlapCounts(4, 0, 2, 2, 0, 0, 16), 2.0 / 3.0),
        (OverlapCounts(0, 7, 0, 0, 0, 0, 16), None),
        (OverlapCounts(5, 2, 0, 0, 0, 0, 16), 1.0),
    ],
)
def test_iom_examples(counts, expected):
    assert iom(counts) == (pytest.approx(expected) if expected is not None else None)


@pytest.mark.parametrize(
    "counts,expected",
    [
        (OverlapCounts(4, 4, 4, 0, 0, 0, 16), 0.5),
        (OverlapCounts(5, 0, 0, 0, 0, 0, 16), 1.0),
        (OverlapCounts(4, 0, 2, 0, 0, 0, 16), 0.8),
        (OverlapCounts(0, 0, 0, 0, 0, 0, 16), None),
    ],
)
def test_dice_examples(counts, expected):
    assert dice(counts) == (pytest.approx(expected) if expected is not None else None)


def test_dice_is_harmonic_mean_of_ios_and_iom():
    c = OverlapCounts(4, 0, 2, 0, 0, 0, 16)
    i_s, i_m, d = ios(c), iom(c), dice(c)
    assert d == pytest.approx(2 * i_s * i_m / (i_s + i_m), abs=1e-12)


def test_policy_requires_disjoint_sets():
    with pytest.raises(ValueError):
        LabelPolicy(road_ids=frozenset({1}), occluder_ids=frozenset({1}))
    with pytest.raises(ValueError):
        LabelPolicy(road_ids=frozenset({7}), occluder_ids=frozenset({2}), void_id=7)


def test_grid_mismatch_is_rejected():
    labels = np.full((4, 4), ROAD, dtype=np.uint8)
    with pytest.raises(ValueError):
        overlap_counts(_bev(labels), _road(np.ones((5, 5))), POLICY)
    with pytest.raises(ValueError):
        error_masks(_bev(labels), _road(np.ones((5, 5))), POLICY)


def test_error_masks_match_hand_example():
    labels = np.full((4, 4), BG, dtype=np.uint8)
    labels[:, :2] = ROAD
    map_road = np.zeros((4, 4), dtype=bool)
    map_road[:2, :] = True
    masks = error_masks(_bev(labels), _road(map_road), POLICY)
    assert int(masks.fp_mask.sum()) == 4
    assert int(masks.fn_mask.sum()) == 4
    assert not (masks.fp_mask & masks.fn_mask).any()
    assert np.array_equal(masks.fp_mask, (labels == ROAD) & ~map_road)


def test_occluded_pixels_never_in_fn_mask():
    labels = np.full((4, 4), OCC, dtype=np.uint8)
    masks = error_masks(_bev(labels), _road(np.ones((4, 4))), POLICY)
    assert not masks.fn_mask.any()


def test_perfect_scene_has_empty_error_masks():
    labels = np.full((6, 6), ROAD, dtype=np.uint8)
    masks = error_masks(_bev(labels), _road(np.ones((6, 6))), POLICY)
    assert not masks.fp_mask.any()
    assert not masks.fn_mask.any()


def _brute_classify(labels, valid, map_road, policy):
    """Independent per-pixel classifier used as the counting oracle."""
    tp = fp = fn = occ = ign = inv = 0
    fp_mask = np.zeros(labels.shape, dtype=bool)
    fn_mask = np.zeros(labels.shape, dtype=bool)
    for row in range(labels.shape[0]):
        for col in range(labels.shape[1]):
            if not valid[row, col]:
                inv += 1
                continue
            label = int(labels[row, col])
            if label in policy.ignore_ids:
                ign += 1
                continue
            is_road = label in policy.road_ids
            is_occ = label in policy.occluder_ids
            if is_road and map_road[row, col]:
                tp += 1
            elif is_road:
                fp += 1
                fp_mask[row, col] = True
            elif is_occ and map_road[row, col]:
                occ += 1
            elif map_road[row, col]:
                fn += 1
                fn_mask[row, col] = True
    return (tp, fp, fn, occ, ign, inv), fp_mask, fn_mask


def test_counts_and_masks_match_brute_force_on_random_grids():
    rng = np.random.default_rng(21)
    for _ in range(25):
        labels = rng.choice(
            np.array([BG, ROAD, OCC, IGN, VOID], dtype=np.uint8), size=(16, 16)
        )
        valid = (labels != VOID) & (rng.random((16, 16)) > 0.05)
        map_road = rng.random((16, 16)) > 0.5
        bev = _bev(labels, valid=valid)
        counts = overlap_counts(bev, _road(map_road), POLICY)
        (tp, fp, fn, occ, ign, inv), fp_mask, fn_mask = _brute_classify(
            labels, valid, map_road, POLICY
        )
        assert (counts.tp, counts.fp, counts.fn) == (tp, fp, fn)
        assert (counts.occluded, counts.ignored, counts.invalid) == (occ, ign, inv)
        masks = error_masks(bev, _road(map_road), POLICY)
        assert np.array_equal(masks.fp_mask, fp_mask)
        assert np.array_equal(masks.fn_mask, fn_mask)
        # the tallies partition the grid
        assert counts.true_negative >= 0
        assert (
            counts.tp + counts.fp + counts.fn + counts.occluded
            + counts.ignored + counts.invalid + counts.true_negative
        ) == labels.size


def test_converting_fp_pixel_to_background_never_decreases_ios():
    rng = np.random.default_rng(33)
    for _ in range(10):
        labels = rng.choice(np.array([BG, ROAD], dtype=np.uint8), size=(8, 8))
        map_road = rng.random((8, 8)) > 0.5
        bev = _bev(labels)
        before = ios(overlap_counts(bev, _road(map_road), POLICY))
        fp_pixels = np.argwhere((labels == ROAD) & ~map_road)
        if len(fp_pixels) == 0:
            continue
        row, col = fp_pixels[0]
        flipped = labels.copy()
        flipped[row, col] = BG
        after = ios(overlap_counts(_bev(flipped), _road(map_road), POLICY))
        if after is not None and before is not None:
            assert after >= before


def test_cityscapes_policy_is_consistent():
    assert 7 in CITYSCAPES_POLICY.road_ids
    assert 6 in CITYSCAPES_POLICY.ignore_ids
    assert 26 in CITYSCAPES_POLICY.occluder_ids  # car
    assert 21 in CITYSCAPES_POLICY.occluder_ids  # vegetation


def test_error_overlay_colors():
    fp = np.zeros((4, 4), dtype=bool)
    fn = np.zeros((4, 4), dtype=bool)
    fp[0, 0] = True
    fn[1, 1] = True
    from roadval.metrics import ErrorMasks

    img = error_overlay(ErrorMasks(fp_mask=fp, fn_mask=fn))
    assert tuple(img[0, 0]) == (255, 69, 0)
    assert tuple(img[1, 1]) == (255, 20, 147)
    assert tuple(img[2, 2]) == (0, 0, 0)
