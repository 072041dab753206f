"""Overlap metrics between a segmentation BEV mask and the map-road raster.

Per-pixel classification over valid, non-ignored pixels:

* tp: segmentation road on map road
* fp: segmentation road off map road
* occluded: occluder label (dynamic object / vegetation) on map road --
  omitted from false-negative accounting, since it may legitimately hide road
* fn: neither road nor occluder, on map road

The ratios derived from these counts are asymmetric by design: occluders
shrink only the false-negative budget, never the false-positive one.  A ratio
with an empty denominator is ``None`` (undefined), not 0 or 1, so degenerate
scenes can be filtered instead of polluting batch statistics.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .bev import DEFAULT_VOID_ID, BevMask, RoadMask


@dataclass(frozen=True)
class LabelPolicy:
    """Class-id semantics of a label mask.

    The three id sets and the void id must be pairwise disjoint, so no pixel
    is ever double-counted.
    """

    road_ids: frozenset[int]
    occluder_ids: frozenset[int]
    ignore_ids: frozenset[int] = frozenset()
    void_id: int = DEFAULT_VOID_ID

    def __post_init__(self) -> None:
        object.__setattr__(self, "road_ids", frozenset(self.road_ids))
        object.__setattr__(self, "occluder_ids", frozenset(self.occluder_ids))
        object.__setattr__(self, "ignore_ids", frozenset(self.ignore_ids))
        groups = [self.road_ids, self.occluder_ids, self.ignore_ids, {self.void_id}]
        total = sum(len(g) for g in groups)
        if len(frozenset().union(*groups)) != total:
            raise ValueError("road/occluder/ignore/void ids must be pairwise disjoint")
        if any(not 0 <= i <= 255 for g in groups for i in g):
            raise ValueError("class ids must fit in 8 bits")


# Cityscapes labelIds: road=7; ground=6 is shared space that is neither road
# nor no-road; occluders are the dynamic classes plus vegetation.
CITYSCAPES_POLICY = LabelPolicy(
    road_ids=frozenset({7}),
    occluder_ids=frozenset({5, 21, 24, 25, 26, 27, 28, 29, 30, 31, 32, 33}),
    ignore_ids=frozenset({6}),
    void_id=255,
)

# Compact id table used by the synthetic scene generator.
SYNTHETIC_POLICY = LabelPolicy(
    road_ids=frozenset({1}),
    occluder_ids=frozenset({2}),
    ignore_ids=frozenset({3}),
    void_id=255,
)

POLICY_PRESETS = {"cityscapes": CITYSCAPES_POLICY, "synthetic": SYNTHETIC_POLICY}


@lru_cache(maxsize=16)
def _luts(policy: LabelPolicy) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    road = np.zeros(256, dtype=bool)
    occ = np.zeros(256, dtype=bool)
    ign = np.zeros(256, dtype=bool)
    road[list(policy.road_ids)] = True
    occ[list(policy.occluder_ids)] = True
    ign[list(policy.ignore_ids)] = True
    return road, occ, ign


@dataclass(frozen=True)
class PixelClasses:
    """Boolean per-pixel classification of a BEV mask under a policy."""

    road: np.ndarray
    occluder: np.ndarray
    ignored: np.ndarray
    valid: np.ndarray


def classify(bev: BevMask, policy: LabelPolicy) -> PixelClasses:
    """Split a BEV mask into road / occluder / ignored / valid channels."""
    road_lut, occ_lut, ign_lut = _luts(policy)
    valid = bev.valid
    ignored = valid & ign_lut[bev.labels]
    considered = valid & ~ignored
    return PixelClasses(
        road=considered & road_lut[bev.labels],
        occluder=considered & occ_lut[bev.labels],
        ignored=ignored,
        valid=valid,
    )


@dataclass(frozen=True)
class OverlapCounts:
    """Pixel tallies from comparing a segmentation with the map raster."""

    tp: int
    fp: int
    fn: int
    occluded: int
    ignored: int
    invalid: int
    total: int

    @property
    def true_negative(self) -> int:
        return self.total - self.tp - self.fp - self.fn - self.occluded - self.ignored - self.invalid


@dataclass(frozen=True)
class ValidationMetrics:
    """The three overlap ratios; ``None`` marks an undefined value."""

    ios: float | None
    iom: float | None
    dice: float | None


@dataclass(frozen=True)
class ErrorMasks:
    """Per-pixel validation errors: fp (road not in map), fn (map not in road)."""

    fp_mask: np.ndarray
    fn_mask: np.ndarray


def _tally(cls: PixelClasses, map_road: np.ndarray) -> OverlapCounts:
    on_map = cls.road & map_road
    occluded = cls.occluder & map_road
    fn = map_road & cls.valid & ~cls.ignored & ~cls.road & ~cls.occluder
    return OverlapCounts(
        tp=int(np.count_nonzero(on_map)),
        fp=int(np.count_nonzero(cls.road) - np.count_nonzero(on_map)),
        fn=int(np.count_nonzero(fn)),
        occluded=int(np.count_nonzero(occluded)),
        ignored=int(np.count_nonzero(cls.ignored)),
        invalid=int(cls.valid.size - np.count_nonzero(cls.valid)),
        total=int(cls.valid.size),
    )


def overlap_counts(bev: BevMask, road_mask: RoadMask, policy: LabelPolicy) -> OverlapCounts:
    """Count tp/fp/fn/occluded pixels between a BEV mask and the map raster.

    Only valid, non-ignored pixels enter the tp/fp/fn/occluded classes;
    invalid and ignored pixels are tallied separately so the counts always
    partition the grid.
    """
    if bev.grid != road_mask.grid:
        raise ValueError("BEV mask and road mask grids differ")
    return _tally(classify(bev, policy), road_mask.road)


def ios(c: OverlapCounts) -> float | None:
    """Share of predicted road confirmed by the map: tp / (tp + fp)."""
    denom = c.tp + c.fp
    return c.tp / denom if denom else None


def iom(c: OverlapCounts) -> float | None:
    """Share of visible (non-occluded) map road that was predicted: tp / (tp + fn)."""
    denom = c.tp + c.fn
    return c.tp / denom if denom else None


def dice(c: OverlapCounts) -> float | None:
    """Overall overlap 2*tp / (2*tp + fp + fn); harmonic mean of ios and iom."""
    denom = 2 * c.tp + c.fp + c.fn
    return 2 * c.tp / denom if denom else None


def metrics_from_counts(c: OverlapCounts) -> ValidationMetrics:
    return ValidationMetrics(ios=ios(c), iom=iom(c), dice=dice(c))


def error_masks(bev: BevMask, road_mask: RoadMask, policy: LabelPolicy) -> ErrorMasks:
    """Per-pixel fp/fn masks matching :func:`overlap_counts` exactly."""
    if bev.grid != road_mask.grid:
        raise ValueError("BEV mask and road mask grids differ")
    cls = classify(bev, policy)
    fp_mask = cls.road & ~road_mask.road
    fn_mask = road_mask.road & cls.valid & ~cls.ignored & ~cls.road & ~cls.occluder
    return ErrorMasks(fp_mask=fp_mask, fn_mask=fn_mask)


# Overlay colors follow the usual rendering of validation errors: false
# positives orange-red, false negatives pink-red.
DEFAULT_FP_COLOR = (255, 69, 0)
DEFAULT_FN_COLOR = (255, 20, 147)


def error_overlay(
    masks: ErrorMasks,
    fp_color: tuple[int, int, int] = DEFAULT_FP_COLOR,
    fn_color: tuple[int, int, int] = DEFAULT_FN_COLOR,
) -> np.ndarray:
    """Render fp/fn masks into an RGB image (black background)."""
    h, w = masks.fp_mask.shape
    img = np.zeros((h, w, 3), dtype=np.uint8)
    img[masks.fp_mask] = fp_color
    img[masks.fn_mask] = fn_color
    return img
