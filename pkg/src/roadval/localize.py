"""GPS correction by dice-maximizing search over road-aligned candidate poses.

Three steps: bound the search to a radius around the GPS prior, coarse-scan a
grid of positions along and across every road element in range (headings
snapped to the element direction), then refine around the coarse optimum on a
finer grid.  The ground-truth BEV mask stays fixed throughout -- only the map
raster moves with the candidate pose -- so each candidate costs one
rasterization plus one overlap tally.

The original pose is always a candidate, which guarantees the corrected dice
never drops below the starting dice.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .bev import BevMask, GridSpec, rasterize_roads
from .geodesy import LocalFrame, LocalPoint, Pose, from_local, to_local
from .mapio import RoadElement
from .metrics import LabelPolicy, PixelClasses, classify, dice, overlap_counts


class NoRoadInRangeError(RuntimeError):
    """No road element lies within the search radius of the pose."""


class CorrectionFailedError(RuntimeError):
    """Every candidate produced an undefined dice; nothing to optimize."""


@dataclass(frozen=True)
class SearchConfig:
    """Search-space geometry.  Defaults bracket a few metres of GPS error."""

    radius_m: float = 20.0
    along_step_m: float = 1.0
    across_step_m: float = 0.5
    fine_step_m: float = 0.1
    try_reversed_heading: bool = True

    def __post_init__(self) -> None:
        if not self.radius_m > 0:
            raise ValueError("radius must be > 0")
        if not 0 < self.fine_step_m < min(self.along_step_m, self.across_step_m):
            raise ValueError("fine step must be positive and smaller than the coarse steps")


@dataclass(frozen=True)
class Candidate:
    """A pose to score.  ``element_id`` indexes the source element (-1 = GPS prior)."""

    pose: Pose
    element_id: int
    dice: float | None = None


@dataclass(frozen=True)
class CorrectionResult:
    original_pose: Pose
    corrected_pose: Pose
    dice_before: float | None
    dice_after: float | None
    candidates_evaluated: int
    coarse_best: Candidate


def _point_segment_distance(p: LocalPoint, el: RoadElement) -> float:
    ex = el.b.east - el.a.east
    ey = el.b.north - el.a.north
    t = ((p.east - el.a.east) * ex + (p.north - el.a.north) * ey) / (ex * ex + ey * ey)
    t = min(max(t, 0.0), 1.0)
    return math.hypot(p.east - el.a.east - t * ex, p.north - el.a.north - t * ey)


def candidate_grid(
    elements: list[RoadElement], pose: Pose, frame: LocalFrame, cfg: SearchConfig
) -> list[Candidate]:
    """Road-aligned candidate poses within the search radius.

    Each in-range element is sampled every ``along_step_m`` along its
    centerline and every ``across_step_m`` across its width; samples outside
    the radius disc are clipped.  Candidate headings equal the element angle
    (plus the reversed direction when configured).  The original pose is
    always appended last.
    """
    center = to_local(frame, pose.position)
    cands: list[Candidate] = []
    any_in_range = False
    for idx, el in enumerate(elements):
        if _point_segment_distance(center, el) > cfg.radius_m:
            continue
        any_in_range = True
        length = el.length_m
        ux = (el.b.east - el.a.east) / length
        uy = (el.b.north - el.a.north) / length
        # right-hand normal of the direction of travel
        nx, ny = uy, -ux
        n_along = int(math.floor(length / cfg.along_step_m + 1e-9))
        half = el.width_m / 2.0
        n_across = int(math.floor(half / cfg.across_step_m + 1e-9))
        headings = [el.angle_deg]
        if cfg.try_reversed_heading:
            headings.append((el.angle_deg + 180.0) % 360.0)
        for i in range(n_along + 1):
            s = i * cfg.along_step_m
            px = el.a.east + s * ux
            py = el.a.north + s * uy
            for k in range(-n_across, n_across + 1):
                c = k * cfg.across_step_m
                qx = px + c * nx
                qy = py + c * ny
                if math.hypot(qx - center.east, qy - center.north) > cfg.radius_m + 1e-9:
                    continue
                position = from_local(frame, LocalPoint(east=qx, north=qy))
                for h in headings:
                    cands.append(Candidate(pose=Pose(position=position, heading_deg=h), element_id=idx))
    if not any_in_range:
        raise NoRoadInRangeError(f"no road element within {cfg.radius_m} m of the pose")
    cands.append(Candidate(pose=pose, element_id=-1))
    return cands


def score(
    pose: Pose,
    gt_bev: BevMask,
    elements: list[RoadElement],
    frame: LocalFrame,
    grid: GridSpec,
    policy: LabelPolicy,
) -> float | None:
    """Dice of the ground-truth BEV mask against the map rasterized at ``pose``.

    ``None`` marks an undefined dice (no road visible on either side); the
    search treats it as 0 while keeping the flag.
    """
    road = rasterize_roads(elements, pose, frame, grid)
    return dice(overlap_counts(gt_bev, road, policy))


class _DiceScorer:
    """Dice against a fixed segmentation, one rasterization per pose.

    With the segmentation classification precomputed, dice reduces to two
    masked pixel counts: fp = |road| - tp, so 2tp + fp + fn = |road| + tp + fn.
    Produces exactly the integers overlap_counts would.
    """

    def __init__(self, cls: PixelClasses, elements: list[RoadElement], frame: LocalFrame, grid: GridSpec):
        self.road = cls.road
        self.fn_eligible = cls.valid & ~cls.ignored & ~cls.road & ~cls.occluder
        self.road_count = int(np.count_nonzero(cls.road))
        self.elements = elements
        self.frame = frame
        self.grid = grid

    def dice(self, pose: Pose) -> float | None:
        m = rasterize_roads(self.elements, pose, self.frame, self.grid).road
        tp = int(np.count_nonzero(self.road & m))
        fn = int(np.count_nonzero(self.fn_eligible & m))
        denom = self.road_count + tp + fn
        return (2 * tp / denom) if denom else None


def _rank_key(c: Candidate, center: LocalPoint, frame: LocalFrame) -> tuple[float, float, float]:
    # Order-independent argmax: dice, then smallest displacement from the
    # original position, then lowest element id.
    p = to_local(frame, c.pose.position)
    displacement = math.hypot(p.east - center.east, p.north - center.north)
    return ((-1.0 if c.dice is None else c.dice), -displacement, -float(c.element_id))


def correct_pose(
    gt_bev: BevMask,
    elements: list[RoadElement],
    pose: Pose,
    frame: LocalFrame,
    grid: GridSpec,
    policy: LabelPolicy,
    cfg: SearchConfig | None = None,
) -> CorrectionResult:
    """Coarse-then-fine dice maximization around the GPS prior.

    The fine pass holds the heading of the coarse optimum fixed and scans the
    cell between it and its adjacent coarse candidates at ``fine_step_m``,
    still clipped to the radius disc.  Ties are broken deterministically by
    displacement from the prior, then element id.
    """
    cfg = cfg or SearchConfig()
    scorer = _DiceScorer(classify(gt_bev, policy), elements, frame, grid)
    center = to_local(frame, pose.position)

    cands = candidate_grid(elements, pose, frame, cfg)
    scored = [replace(c, dice=scorer.dice(c.pose)) for c in cands]
    evaluated = len(scored)
    dice_before = next(c.dice for c in scored if c.element_id == -1)

    if all(c.dice is None for c in scored):
        raise CorrectionFailedError("dice undefined at every candidate pose")
    coarse_best = max(scored, key=lambda c: _rank_key(c, center, frame))

    h = math.radians(coarse_best.pose.heading_deg)
    ux, uy = math.sin(h), math.cos(h)
    nx, ny = uy, -ux
    base = to_local(frame, coarse_best.pose.position)
    n_along = int(round(cfg.along_step_m / cfg.fine_step_m))
    n_across = int(round(cfg.across_step_m / cfg.fine_step_m))

    best = coarse_best
    best_key = _rank_key(best, center, frame)
    for i in range(-n_along, n_along + 1):
        for k in range(-n_across, n_across + 1):
            if i == 0 and k == 0:
                continue
            qx = base.east + i * cfg.fine_step_m * ux + k * cfg.fine_step_m * nx
            qy = base.north + i * cfg.fine_step_m * uy + k * cfg.fine_step_m * ny
            if math.hypot(qx - center.east, qy - center.north) > cfg.radius_m + 1e-9:
                continue
            cand = Candidate(
                pose=Pose(
                    position=from_local(frame, LocalPoint(east=qx, north=qy)),
                    heading_deg=coarse_best.pose.heading_deg,
                ),
                element_id=coarse_best.element_id,
            )
            cand = replace(cand, dice=scorer.dice(cand.pose))
            evaluated += 1
            key = _rank_key(cand, center, frame)
            if key > best_key:
                best, best_key = cand, key

    return CorrectionResult(
        original_pose=pose,
        corrected_pose=best.pose,
        dice_before=dice_before,
        dice_after=best.dice,
        candidates_evaluated=evaluated,
        coarse_best=coarse_best,
    )
