"""Per-scene validation and batch analysis.

Pipeline: clean the scene list, validate every scene against the map, filter
scenes whose ground truth fits the map poorly, summarize the metric
distributions, flag outliers below a dice threshold and judge them as
false-positive or false-negative type, and (when ground truth is present)
compare the detected error pixels against the true ones.

Everything here is deterministic: re-running a batch with identical inputs
and configuration produces an identical report.
"""
from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from . import maskio
from .bev import BevMask, CameraModel, GridSpec, LabelMask, rasterize_roads, warp_to_bev
from .geodesy import LocalFrame, Pose, GeoPoint, bbox_around, normalize_heading
from .mapio import DEFAULT_DRIVABLE_CLASSES, RoadGraph, WidthConfig, filter_drivable, to_elements
from .metrics import (
    ErrorMasks,
    LabelPolicy,
    OverlapCounts,
    ValidationMetrics,
    classify,
    error_masks,
    metrics_from_counts,
    overlap_counts,
)

# Extra map-query margin beyond the grid reach, so wide roads just outside the
# grid still rasterize their in-grid part.
QUERY_MARGIN_M = 10.0

MASK_SPACES = ("camera", "bev")


class EmptyBatchError(ValueError):
    """No defined metric values to summarize."""


@dataclass(frozen=True)
class SceneRecord:
    """One manifest line: masks plus the GPS pose (and optional correction)."""

    scene_id: str
    pred_mask_path: Path
    pose: Pose
    gt_mask_path: Path | None = None
    corrected_pose: Pose | None = None
    mask_space: str = "camera"

    def __post_init__(self) -> None:
        if self.mask_space not in MASK_SPACES:
            raise ValueError(f"mask_space must be one of {MASK_SPACES}")


@dataclass(frozen=True)
class RemovedScene:
    scene_id: str
    reason: str


@dataclass
class SceneResult:
    """Validation output for one scene; flags are filled by the batch stages."""

    scene_id: str
    metrics_pred: ValidationMetrics
    counts_pred: OverlapCounts
    errors_pred: ErrorMasks
    metrics_gt: ValidationMetrics | None = None
    counts_gt: OverlapCounts | None = None
    gt_errors: ErrorMasks | None = None
    prf: "PixelPRF | None" = None
    cleaned_out: bool = False
    outlier: bool = False
    fp_type: bool = False
    fn_type: bool = False


@dataclass(frozen=True)
class PixelPRF:
    """Pixel-level agreement between detected and true error regions."""

    recall: float | None
    precision: float | None
    intersection: int
    detected: int
    true_count: int


@dataclass(frozen=True)
class MetricSummary:
    count: int
    undefined: int
    min: float
    q1: float
    median: float
    q3: float
    max: float
    lower_whisker: float
    upper_whisker: float
    mean: float
    stddev: float


@dataclass(frozen=True)
class BatchSummary:
    per_metric: dict[str, MetricSummary]
    total_scenes: int
    cleaned_out: int
    analyzed: int


# --------------------------------------------------------------------------
# manifest I/O

def read_manifest(
    path: str | Path,
    heading_offset_deg: float = 0.0,
    heading_sign: int = 1,
) -> list[SceneRecord]:
    """Read a JSON-lines scene manifest.

    Relative mask paths resolve against the manifest's directory.  Heading
    conventions vary between pose sources, so an offset and sign can be
    applied on ingestion: stored = sign * heading + offset (degrees).
    """
    path = Path(path)
    base = path.resolve().parent
    records = []
    for line_no, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        try:
            row = json.loads(line)
            pose = Pose(
                position=GeoPoint(lat=row["lat"], lon=row["lon"]),
                heading_deg=normalize_heading(heading_sign * row["heading_deg"] + heading_offset_deg),
            )
            corrected = None
            if "corrected_lat" in row:
                corrected = Pose(
                    position=GeoPoint(lat=row["corrected_lat"], lon=row["corrected_lon"]),
                    heading_deg=row["corrected_heading_deg"],
                )
            records.append(
                SceneRecord(
                    scene_id=str(row["scene_id"]),
                    pred_mask_path=_resolve(base, row["pred_mask"]),
                    gt_mask_path=_resolve(base, row["gt_mask"]) if row.get("gt_mask") else None,
                    pose=pose,
                    corrected_pose=corrected,
                    mask_space=row.get("mask_space", "camera"),
                )
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ValueError(f"{path}:{line_no}: bad manifest line: {exc}") from exc
    return records


def _resolve(base: Path, p: str) -> Path:
    candidate = Path(p)
    return candidate if candidate.is_absolute() else base / candidate


def manifest_row(record: SceneRecord, base: Path | None = None) -> dict:
    """JSON-ready manifest row; paths relative to ``base`` when possible.

    Paths that do not live under ``base`` are written absolute, so the row
    stays valid wherever the manifest file ends up.
    """

    def rel(p: Path) -> str:
        if base is not None:
            try:
                return p.relative_to(base.resolve()).as_posix()
            except ValueError:
                pass
        return str(p.resolve())

    row: dict = {
        "scene_id": record.scene_id,
        "pred_mask": rel(record.pred_mask_path),
        "lat": record.pose.position.lat,
        "lon": record.pose.position.lon,
        "heading_deg": record.pose.heading_deg,
        "mask_space": record.mask_space,
    }
    if record.gt_mask_path is not None:
        row["gt_mask"] = rel(record.gt_mask_path)
    if record.corrected_pose is not None:
        row["corrected_lat"] = record.corrected_pose.position.lat
        row["corrected_lon"] = record.corrected_pose.position.lon
        row["corrected_heading_deg"] = record.corrected_pose.heading_deg
    return row


def write_manifest(path: str | Path, records: Sequence[SceneRecord]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    rows = [manifest_row(r, base=path.parent) for r in records]
    path.write_text("".join(json.dumps(row, sort_keys=True) + "\n" for row in rows), encoding="utf-8")


# --------------------------------------------------------------------------
# cleaning

def clean_scenes(
    records: Sequence[SceneRecord],
    policy: LabelPolicy,
    gt_fit_min: float | None = None,
    gt_dice: Mapping[str, float | None] | None = None,
) -> tuple[list[SceneRecord], list[RemovedScene]]:
    """Drop scenes that cannot be validated cleanly.

    A scene is removed when its ground-truth mask contains any ignore-labeled
    pixel (shared-space areas are neither road nor no-road).  When a ground
    truth fit threshold is configured, scenes whose map-vs-ground-truth dice
    is undefined or <= the threshold are removed as well (``gt_dice`` maps
    scene_id to that dice).  Unreadable masks are recorded and skipped; the
    run continues.
    """
    kept: list[SceneRecord] = []
    removed: list[RemovedScene] = []
    ignore = np.zeros(256, dtype=bool)
    ignore[list(policy.ignore_ids)] = True
    for record in records:
        if record.gt_mask_path is not None:
            try:
                labels = maskio.read_mask(record.gt_mask_path)
            except (OSError, ValueError) as exc:
                removed.append(RemovedScene(record.scene_id, f"error: {exc}"))
                continue
            if bool(ignore[labels].any()):
                removed.append(RemovedScene(record.scene_id, "ignore-labeled pixels in ground truth"))
                continue
        if gt_fit_min is not None and gt_dice is not None and record.scene_id in gt_dice:
            d = gt_dice[record.scene_id]
            if d is None or d <= gt_fit_min:
                shown = "undefined" if d is None else f"{d:.4f}"
                removed.append(RemovedScene(record.scene_id, f"ground-truth fit dice {shown} <= {gt_fit_min}"))
                continue
        kept.append(record)
    return kept, removed


# --------------------------------------------------------------------------
# per-scene validation

def load_bev_mask(
    path: Path, mask_space: str, grid: GridSpec, policy: LabelPolicy, camera: CameraModel | None
) -> BevMask:
    """Load a mask file as a BEV raster, warping camera-space masks."""
    labels = maskio.read_mask(path)
    if mask_space == "bev":
        if labels.shape != grid.shape:
            raise ValueError(f"{path}: BEV mask shape {labels.shape} does not match grid {grid.shape}")
        return BevMask(grid=grid, labels=labels, valid=labels != policy.void_id)
    if camera is None:
        raise ValueError(f"{path}: camera calibration required for camera-space masks")
    return warp_to_bev(LabelMask(labels=labels), camera, grid, void_id=policy.void_id)


def scene_road_mask(
    record_pose: Pose,
    graph: RoadGraph,
    grid: GridSpec,
    width_cfg: WidthConfig,
    drivable: Iterable[str] = DEFAULT_DRIVABLE_CLASSES,
):
    """Rasterize the map roads around a pose; returns (road_mask, frame, elements)."""
    frame = LocalFrame(origin=record_pose.position)
    bbox = bbox_around(record_pose, grid.reach_m() + QUERY_MARGIN_M)
    elements = to_elements(filter_drivable(graph, drivable), frame, bbox, width_cfg)
    return rasterize_roads(elements, record_pose, frame, grid), frame, elements


def validate_scene(
    record: SceneRecord,
    graph: RoadGraph,
    grid: GridSpec,
    policy: LabelPolicy,
    camera: CameraModel | None = None,
    width_cfg: WidthConfig | None = None,
    drivable: Iterable[str] = DEFAULT_DRIVABLE_CLASSES,
) -> SceneResult:
    """Validate one scene's predicted mask (and ground truth when present)."""
    width_cfg = width_cfg or WidthConfig()
    pose = record.corrected_pose or record.pose
    road_mask, _, _ = scene_road_mask(pose, graph, grid, width_cfg, drivable)

    pred_bev = load_bev_mask(record.pred_mask_path, record.mask_space, grid, policy, camera)
    counts_pred = overlap_counts(pred_bev, road_mask, policy)
    result = SceneResult(
        scene_id=record.scene_id,
        metrics_pred=metrics_from_counts(counts_pred),
        counts_pred=counts_pred,
        errors_pred=error_masks(pred_bev, road_mask, policy),
    )

    if record.gt_mask_path is not None:
        gt_bev = load_bev_mask(record.gt_mask_path, record.mask_space, grid, policy, camera)
        counts_gt = overlap_counts(gt_bev, road_mask, policy)
        result.counts_gt = counts_gt
        result.metrics_gt = metrics_from_counts(counts_gt)
        result.gt_errors = gt_error_masks(pred_bev, gt_bev, policy)
        result.prf = compare_to_ground_truth(result.errors_pred, result.gt_errors)
    return result


def gt_error_masks(pred_bev: BevMask, gt_bev: BevMask, policy: LabelPolicy) -> ErrorMasks:
    """True prediction errors: validate the prediction against the ground truth.

    Same omission rule as the map path (occluder pixels never count as false
    negatives), restricted to pixels valid and non-ignored on both sides.
    """
    if pred_bev.grid != gt_bev.grid:
        raise ValueError("prediction and ground truth grids differ")
    pred = classify(pred_bev, policy)
    gt = classify(gt_bev, policy)
    considered = pred.valid & gt.valid & ~pred.ignored & ~gt.ignored
    fp = considered & pred.road & ~gt.road
    fn = considered & gt.road & ~pred.road & ~pred.occluder
    return ErrorMasks(fp_mask=fp, fn_mask=fn)


def compare_to_ground_truth(detected: ErrorMasks, true_: ErrorMasks) -> PixelPRF:
    """Pool fp and fn pixels per side and compute pixel recall/precision."""
    if detected.fp_mask.shape != true_.fp_mask.shape:
        raise ValueError("error mask grids differ")
    det = detected.fp_mask | detected.fn_mask
    tru = true_.fp_mask | true_.fn_mask
    n_det = int(np.count_nonzero(det))
    n_tru = int(np.count_nonzero(tru))
    n_int = int(np.count_nonzero(det & tru))
    return PixelPRF(
        recall=n_int / n_tru if n_tru else None,
        precision=n_int / n_det if n_det else None,
        intersection=n_int,
        detected=n_det,
        true_count=n_tru,
    )


# --------------------------------------------------------------------------
# batch statistics

def _summary(values: list[float], whisker_k: float, undefined: int) -> MetricSummary:
    arr = np.sort(np.asarray(values, dtype=np.float64))
    q1, median, q3 = (float(v) for v in np.percentile(arr, [25.0, 50.0, 75.0]))
    iqr = q3 - q1
    lo_fence = q1 - whisker_k * iqr
    hi_fence = q3 + whisker_k * iqr
    return MetricSummary(
        count=len(values),
        undefined=undefined,
        min=float(arr[0]),
        q1=q1,
        median=median,
        q3=q3,
        max=float(arr[-1]),
        lower_whisker=float(arr[arr >= lo_fence][0]),
        upper_whisker=float(arr[arr <= hi_fence][-1]),
        mean=float(arr.mean()),
        stddev=float(arr.std()),
    )


def _metric_series(results: Sequence[SceneResult]) -> dict[str, list[float | None]]:
    series: dict[str, list[float | None]] = {
        "dice_pred": [], "ios_pred": [], "iom_pred": [],
        "dice_gt": [], "ios_gt": [], "iom_gt": [],
    }
    for r in results:
        series["dice_pred"].append(r.metrics_pred.dice)
        series["ios_pred"].append(r.metrics_pred.ios)
        series["iom_pred"].append(r.metrics_pred.iom)
        if r.metrics_gt is not None:
            series["dice_gt"].append(r.metrics_gt.dice)
            series["ios_gt"].append(r.metrics_gt.ios)
            series["iom_gt"].append(r.metrics_gt.iom)
    return series


def analyzed_results(results: Sequence[SceneResult]) -> list[SceneResult]:
    """Scenes that survived cleaning and have a defined predicted dice."""
    return [r for r in results if not r.cleaned_out and r.metrics_pred.dice is not None]


def batch_stats(results: Sequence[SceneResult], whisker_k: float = 1.5) -> BatchSummary:
    """Quartiles, Tukey whiskers, and moments per metric over a batch.

    Quartiles use linear interpolation on the sorted defined values; the
    whiskers are the extreme data points within ``whisker_k`` interquartile
    ranges of the quartiles.  Undefined metric values are excluded and
    counted.
    """
    kept = [r for r in results if not r.cleaned_out]
    per_metric: dict[str, MetricSummary] = {}
    for name, values in _metric_series(kept).items():
        defined = [v for v in values if v is not None]
        if defined:
            per_metric[name] = _summary(defined, whisker_k, undefined=len(values) - len(defined))
    if "dice_pred" not in per_metric:
        raise EmptyBatchError("no defined predicted dice values in the batch")
    return BatchSummary(
        per_metric=per_metric,
        total_scenes=len(results),
        cleaned_out=len(results) - len(kept),
        analyzed=len(analyzed_results(results)),
    )


def _effective(value: float | None) -> float:
    # An undefined ratio means that error type is impossible (empty
    # numerator side), so it cannot be the weaker metric.
    return 1.0 if value is None else value


def flag_outliers(
    results: Sequence[SceneResult], dice_pred_max: float, tie_eps: float = 1e-9
) -> list[SceneResult]:
    """Flag scenes with predicted dice below the threshold and judge the type.

    A flagged scene is false-positive type when its ios is the weaker metric,
    false-negative type when iom is weaker, and both when they tie within
    ``tie_eps``.  Flags are set on the results and the flagged subset is
    returned.
    """
    flagged = []
    for r in analyzed_results(results):
        d = r.metrics_pred.dice
        assert d is not None
        if d < dice_pred_max:
            r.outlier = True
            ios_v = _effective(r.metrics_pred.ios)
            iom_v = _effective(r.metrics_pred.iom)
            if abs(ios_v - iom_v) <= tie_eps:
                r.fp_type = True
                r.fn_type = True
            elif ios_v < iom_v:
                r.fp_type = True
            else:
                r.fn_type = True
            flagged.append(r)
    return flagged


def relative_count_curve(
    results: Sequence[SceneResult], thresholds: Sequence[float]
) -> list[tuple[float, float]]:
    """Fraction of analyzed scenes with predicted dice below each threshold."""
    if any(b < a for a, b in zip(thresholds, thresholds[1:])):
        raise ValueError("thresholds must be sorted ascending")
    dices = sorted(
        r.metrics_pred.dice for r in analyzed_results(results)
    )
    n = len(dices)
    curve = []
    for t in thresholds:
        below = int(np.searchsorted(dices, t, side="left"))
        curve.append((float(t), below / n if n else 0.0))
    return curve


# --------------------------------------------------------------------------
# batch orchestration

@dataclass
class BatchOutcome:
    results: list[SceneResult]
    removed: list[RemovedScene]
    errors: list[tuple[str, str]]
    summary: BatchSummary | None
    dice_pred_max: float | None
    flagged: list[SceneResult]
    curve: list[tuple[float, float]]
    pooled_prf: PixelPRF | None


THRESHOLD_TOKENS = ("q1", "lower_whisker", "gt_q1", "gt_lower_whisker")


def resolve_threshold(summary: BatchSummary, spec: float | str) -> float:
    """Turn a threshold spec (number or summary token) into a dice value."""
    if isinstance(spec, (int, float)):
        return float(spec)
    metric = "dice_gt" if spec.startswith("gt_") else "dice_pred"
    attr = spec.removeprefix("gt_")
    if spec not in THRESHOLD_TOKENS:
        raise ValueError(f"unknown threshold token {spec!r}; expected one of {THRESHOLD_TOKENS}")
    if metric not in summary.per_metric:
        raise ValueError(f"threshold token {spec!r} needs {metric} statistics, which are absent")
    return float(getattr(summary.per_metric[metric], attr))


DEFAULT_CURVE_THRESHOLDS = tuple(round(0.05 * i, 2) for i in range(21))


def run_batch(
    records: Sequence[SceneRecord],
    graph: RoadGraph,
    grid: GridSpec,
    policy: LabelPolicy,
    camera: CameraModel | None = None,
    width_cfg: WidthConfig | None = None,
    drivable: Iterable[str] = DEFAULT_DRIVABLE_CLASSES,
    gt_fit_min: float | None = None,
    dice_pred_max: float | str | None = "q1",
    curve_thresholds: Sequence[float] = DEFAULT_CURVE_THRESHOLDS,
    whisker_k: float = 1.5,
    jobs: int = 1,
) -> BatchOutcome:
    """Run the full validation pipeline over a scene list.

    Scene validation is parallel across scenes; results are gathered in
    scene_id order so the outcome is independent of completion order.
    Per-scene failures are recorded and do not abort the batch.
    """
    width_cfg = width_cfg or WidthConfig()
    kept, removed = clean_scenes(records, policy)

    def work(record: SceneRecord) -> tuple[str, SceneResult | None, str | None]:
        try:
            return record.scene_id, validate_scene(
                record, graph, grid, policy, camera=camera, width_cfg=width_cfg, drivable=drivable
            ), None
        except Exception as exc:  # per-scene isolation
            return record.scene_id, None, str(exc)

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            raw = list(pool.map(work, kept))
    else:
        raw = [work(r) for r in kept]
    raw.sort(key=lambda item: item[0])

    results = [res for _, res, err in raw if res is not None]
    errors = [(sid, err) for sid, _, err in raw if err is not None]

    if gt_fit_min is not None:
        for r in results:
            if r.metrics_gt is not None and (r.metrics_gt.dice is None or r.metrics_gt.dice <= gt_fit_min):
                r.cleaned_out = True

    summary: BatchSummary | None = None
    threshold: float | None = None
    flagged: list[SceneResult] = []
    curve: list[tuple[float, float]] = []
    try:
        summary = batch_stats(results, whisker_k=whisker_k)
    except EmptyBatchError:
        summary = None
    if summary is not None:
        if dice_pred_max is not None:
            threshold = resolve_threshold(summary, dice_pred_max)
            flagged = flag_outliers(results, threshold)
        curve = relative_count_curve(results, curve_thresholds)

    pooled = None
    prf_results = [r for r in results if r.prf is not None and not r.cleaned_out]
    if prf_results:
        n_int = sum(r.prf.intersection for r in prf_results)
        n_det = sum(r.prf.detected for r in prf_results)
        n_tru = sum(r.prf.true_count for r in prf_results)
        pooled = PixelPRF(
            recall=n_int / n_tru if n_tru else None,
            precision=n_int / n_det if n_det else None,
            intersection=n_int,
            detected=n_det,
            true_count=n_tru,
        )

    return BatchOutcome(
        results=results,
        removed=removed,
        errors=errors,
        summary=summary,
        dice_pred_max=threshold,
        flagged=flagged,
        curve=curve,
        pooled_prf=pooled,
    )


# --------------------------------------------------------------------------
# report building

def _metrics_dict(m: ValidationMetrics | None) -> dict | None:
    if m is None:
        return None
    return {"ios": m.ios, "iom": m.iom, "dice": m.dice}


def _counts_dict(c: OverlapCounts | None) -> dict | None:
    if c is None:
        return None
    return {
        "tp": c.tp, "fp": c.fp, "fn": c.fn,
        "occluded": c.occluded, "ignored": c.ignored, "invalid": c.invalid, "total": c.total,
    }


def _prf_dict(p: PixelPRF | None) -> dict | None:
    if p is None:
        return None
    return {
        "recall": p.recall, "precision": p.precision,
        "intersection": p.intersection, "detected": p.detected, "true": p.true_count,
    }


def build_report(outcome: BatchOutcome, config_echo: dict) -> dict:
    """Assemble the batch report as a JSON-ready dictionary.

    Deterministic for identical inputs: no timestamps, stable ordering.
    The config echo embeds every resolved setting so a run can be reproduced
    from the report alone.
    """
    summary_dict = None
    if outcome.summary is not None:
        summary_dict = {
            "per_metric": {
                name: dict(sorted(ms.__dict__.items()))
                for name, ms in sorted(outcome.summary.per_metric.items())
            },
            "total_scenes": outcome.summary.total_scenes,
            "cleaned_out": outcome.summary.cleaned_out,
            "analyzed": outcome.summary.analyzed,
        }
    scenes = []
    for r in outcome.results:
        scenes.append(
            {
                "scene_id": r.scene_id,
                "metrics_pred": _metrics_dict(r.metrics_pred),
                "counts_pred": _counts_dict(r.counts_pred),
                "metrics_gt": _metrics_dict(r.metrics_gt),
                "counts_gt": _counts_dict(r.counts_gt),
                "pixel_prf": _prf_dict(r.prf),
                "flags": {
                    "cleaned_out": r.cleaned_out,
                    "outlier": r.outlier,
                    "fp_type": r.fp_type,
                    "fn_type": r.fn_type,
                },
            }
        )
    return {
        "config": config_echo,
        "scene_counts": {
            "total": len(outcome.results) + len(outcome.removed) + len(outcome.errors),
            "removed": len(outcome.removed),
            "validated": len(outcome.results),
            "errors": len(outcome.errors),
            "cleaned_out": sum(1 for r in outcome.results if r.cleaned_out),
            "analyzed": len(analyzed_results(outcome.results)),
        },
        "summary": summary_dict,
        "dice_pred_max": outcome.dice_pred_max,
        "flagged": [
            {
                "scene_id": r.scene_id,
                "dice": r.metrics_pred.dice,
                "ios": r.metrics_pred.ios,
                "iom": r.metrics_pred.iom,
                "fp_type": r.fp_type,
                "fn_type": r.fn_type,
            }
            for r in outcome.flagged
        ],
        "relative_count_curve": [[t, f] for t, f in outcome.curve],
        "pixel_prf_pooled": _prf_dict(outcome.pooled_prf),
        "scenes": scenes,
        "removed": [{"scene_id": r.scene_id, "reason": r.reason} for r in outcome.removed],
        "scene_errors": [{"scene_id": sid, "error": msg} for sid, msg in outcome.errors],
    }
