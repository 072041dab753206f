"""Synthetic maps, scenes, and perturbations with known injected errors.

Ground truth is generated from the map itself, so at the true pose the
map-vs-ground-truth dice is exactly 1.0 and pose-recovery experiments have an
unambiguous optimum.  Perturbations operate directly in BEV space with exact
pixel budgets (an injected blob of N pixels produces exactly N counted
errors); a separate camera-space renderer exercises the perspective warp end
to end.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import maskio
from .bev import BevMask, CameraModel, GridSpec, LabelMask, pixel_to_ground, points_within_elements, rasterize_roads
from .geodesy import GeoPoint, LocalFrame, LocalPoint, Pose, bbox_around, from_local, to_local
from .mapio import RoadElement, RoadGraph, RoadWay, WidthConfig, parse_osm, to_elements, write_osm
from .metrics import SYNTHETIC_POLICY, LabelPolicy
from .validate import SceneRecord, write_manifest

LAYOUTS = ("straight", "t-intersection", "crossroads", "parking-strip")

# Fixed anchor for all synthetic maps.
SYNTH_ORIGIN = GeoPoint(lat=50.0, lon=7.0)

_ARM_M = 120.0  # half-length of generated roads

# 30 m wide x 40 m tall at 0.1 m/px, vehicle 6 m above the bottom edge.
DEFAULT_BUNDLE_GRID = GridSpec(resolution_m=0.1, width_px=300, height_px=400, vehicle_px=(150, 339))


@dataclass(frozen=True)
class LayoutSpec:
    """Road layout to generate.  ``heading_deg`` rotates the whole layout.

    ``branch_width_m`` sizes the secondary way of the intersection layouts
    (defaults to the main width).  An asymmetric branch makes the overlap
    objective's optimum unique, which pose-recovery experiments rely on.
    """

    layout: str = "straight"
    road_width_m: float = 6.0
    heading_deg: float = 0.0
    seed: int = 0
    branch_width_m: float | None = None

    def __post_init__(self) -> None:
        if self.layout not in LAYOUTS:
            raise ValueError(f"unknown layout {self.layout!r}; expected one of {LAYOUTS}")
        if not self.road_width_m > 0:
            raise ValueError("road width must be > 0")
        if self.branch_width_m is not None and not self.branch_width_m > 0:
            raise ValueError("branch width must be > 0")


@dataclass(frozen=True)
class Patch:
    """A pixel-budgeted label patch anchored in the vehicle frame (metres)."""

    x_m: float
    y_m: float
    area_px: int

    def __post_init__(self) -> None:
        if self.area_px <= 0:
            raise ValueError("patch area must be positive")


@dataclass(frozen=True)
class PerturbationSpec:
    """Errors injected into the predicted mask, plus GPS jitter."""

    fp_blob: Patch | None = None
    fn_erase: Patch | None = None
    pose_jitter: tuple[float, float, float] | None = None  # (along m, across m, heading deg)
    occluder_blobs: tuple[int, int] = (0, 0)  # (count, area_px each)
    seed: int = 0


@dataclass(frozen=True)
class SyntheticScene:
    gt: BevMask
    pred: BevMask
    gps_pose: Pose
    truth_pose: Pose


def _local(east: float, north: float, frame: LocalFrame) -> GeoPoint:
    return from_local(frame, LocalPoint(east=east, north=north))


def gen_map(spec: LayoutSpec) -> tuple[RoadGraph, LocalFrame]:
    """Deterministic road graph for a layout, centered on a fixed origin."""
    frame = LocalFrame(origin=SYNTH_ORIGIN)
    h = math.radians(spec.heading_deg)
    ux, uy = math.sin(h), math.cos(h)  # along the layout heading
    nx, ny = uy, -ux  # to the right of it
    w = spec.road_width_m

    nodes: dict[int, GeoPoint] = {
        1: _local(-_ARM_M * ux, -_ARM_M * uy, frame),
        2: _local(0.0, 0.0, frame),
        3: _local(_ARM_M * ux, _ARM_M * uy, frame),
    }
    ways = [RoadWay(way_id=1, node_refs=(1, 2, 3), highway_class="residential", explicit_width_m=w)]

    branch_w = spec.branch_width_m if spec.branch_width_m is not None else w
    if spec.layout == "t-intersection":
        nodes[4] = _local(_ARM_M * nx, _ARM_M * ny, frame)
        ways.append(RoadWay(way_id=2, node_refs=(2, 4), highway_class="residential", explicit_width_m=branch_w))
    elif spec.layout == "crossroads":
        nodes[4] = _local(-_ARM_M * nx, -_ARM_M * ny, frame)
        nodes[5] = _local(_ARM_M * nx, _ARM_M * ny, frame)
        ways.append(RoadWay(way_id=2, node_refs=(4, 2, 5), highway_class="residential", explicit_width_m=branch_w))
    elif spec.layout == "parking-strip":
        offset = w / 2.0 + 4.0
        for node_id, s in ((4, -30.0), (5, 30.0)):
            nodes[node_id] = _local(s * ux + offset * nx, s * uy + offset * ny, frame)
        ways.append(RoadWay(way_id=2, node_refs=(4, 5), highway_class="service", explicit_width_m=4.0))

    return RoadGraph(nodes=nodes, ways=tuple(ways), dropped_ways=0), frame


def scene_elements(
    graph: RoadGraph, frame: LocalFrame, pose: Pose, grid: GridSpec
) -> list[RoadElement]:
    """All road elements that can touch the BEV grid at this pose."""
    widths = [w.explicit_width_m or 8.0 for w in graph.ways]
    reach = grid.reach_m() + max(widths, default=8.0)
    return to_elements(graph, frame, bbox_around(pose, reach), WidthConfig())


def _policy_labels(policy: LabelPolicy) -> tuple[int, int, int]:
    """(road, occluder, background) ids to paint with under a policy."""
    reserved = policy.road_ids | policy.occluder_ids | policy.ignore_ids | {policy.void_id}
    background = next(i for i in range(256) if i not in reserved)
    road = min(policy.road_ids)
    occluder = min(policy.occluder_ids) if policy.occluder_ids else background
    return road, occluder, background


def _anchor_px(grid: GridSpec, x_m: float, y_m: float) -> tuple[int, int]:
    vcol, vrow = grid.vehicle_px
    return (
        vrow - int(round(y_m / grid.resolution_m)),
        vcol + int(round(x_m / grid.resolution_m)),
    )


def _pick_patch(eligible: np.ndarray, anchor_rc: tuple[int, int], area_px: int) -> tuple[np.ndarray, np.ndarray]:
    """The ``area_px`` eligible pixels closest to the anchor (deterministic)."""
    rows, cols = np.nonzero(eligible)
    if rows.size < area_px:
        raise ValueError(f"patch needs {area_px} pixels but only {rows.size} are eligible")
    d2 = (rows - anchor_rc[0]) ** 2 + (cols - anchor_rc[1]) ** 2
    order = np.lexsort((cols, rows, d2))[:area_px]
    return rows[order], cols[order]


def gen_scene(
    graph: RoadGraph,
    frame: LocalFrame,
    pose: Pose,
    grid: GridSpec,
    policy: LabelPolicy,
    pert: PerturbationSpec | None = None,
) -> SyntheticScene:
    """Ground-truth and perturbed BEV masks for a pose on the map.

    The ground truth labels road exactly where the map rasterizes at the true
    pose; the prediction starts as a copy and then receives the configured
    false-positive blob (off-road pixels), false-negative erasure (road
    pixels), and occluder blobs.  All pixels are valid.
    """
    pert = pert or PerturbationSpec()
    elements = scene_elements(graph, frame, pose, grid)
    p_local = to_local(frame, pose.position)
    on_road = any(
        _dist_to_element(p_local, el) <= el.width_m / 2.0 for el in elements
    )
    if not on_road:
        raise ValueError("pose does not lie on a road of the map")

    road_id, occluder_id, background_id = _policy_labels(policy)
    road = rasterize_roads(elements, pose, frame, grid).road
    gt_labels = np.where(road, road_id, background_id).astype(np.uint8)
    valid = np.ones(grid.shape, dtype=bool)
    gt = BevMask(grid=grid, labels=gt_labels, valid=valid)

    pred_labels = gt_labels.copy()
    if pert.fn_erase is not None:
        rows, cols = _pick_patch(road, _anchor_px(grid, pert.fn_erase.x_m, pert.fn_erase.y_m), pert.fn_erase.area_px)
        pred_labels[rows, cols] = background_id
    if pert.fp_blob is not None:
        rows, cols = _pick_patch(~road, _anchor_px(grid, pert.fp_blob.x_m, pert.fp_blob.y_m), pert.fp_blob.area_px)
        pred_labels[rows, cols] = road_id

    count, blob_area = pert.occluder_blobs
    if count > 0 and blob_area > 0:
        rng = np.random.default_rng(pert.seed)
        everything = np.ones(grid.shape, dtype=bool)
        for _ in range(count):
            anchor = (int(rng.integers(grid.height_px)), int(rng.integers(grid.width_px)))
            rows, cols = _pick_patch(everything, anchor, blob_area)
            pred_labels[rows, cols] = occluder_id

    pred = BevMask(grid=grid, labels=pred_labels, valid=valid.copy())

    gps_pose = pose
    if pert.pose_jitter is not None:
        along, across, dh = pert.pose_jitter
        h = math.radians(pose.heading_deg)
        ux, uy = math.sin(h), math.cos(h)
        gps_pose = Pose(
            position=from_local(
                frame,
                LocalPoint(
                    east=p_local.east + along * ux + across * uy,
                    north=p_local.north + along * uy - across * ux,
                ),
            ),
            heading_deg=pose.heading_deg + dh,
        )
    return SyntheticScene(gt=gt, pred=pred, gps_pose=gps_pose, truth_pose=pose)


def _dist_to_element(p: LocalPoint, el: RoadElement) -> float:
    ex = el.b.east - el.a.east
    ey = el.b.north - el.a.north
    t = ((p.east - el.a.east) * ex + (p.north - el.a.north) * ey) / (ex * ex + ey * ey)
    t = min(max(t, 0.0), 1.0)
    return math.hypot(p.east - el.a.east - t * ex, p.north - el.a.north - t * ey)


@dataclass(frozen=True)
class BundleSpec:
    """A whole scene bundle: one map layout plus categorized scenes.

    Categories: clean scenes, scenes with an off-road false-positive blob,
    and scenes with an on-road false-negative erasure.  Blob areas are drawn
    per scene as a fraction of that scene's road pixel count, uniform in
    [area_frac, 1.5 * area_frac].
    """

    seed: int = 0
    layout: str = "crossroads"
    road_width_m: float = 6.0
    heading_deg: float = 0.0
    grid: GridSpec = DEFAULT_BUNDLE_GRID
    n_clean: int = 2
    n_fp: int = 2
    n_fn: int = 2
    fp_area_frac: float = 0.08
    fn_area_frac: float = 0.08
    occluder_blobs: tuple[int, int] = (0, 0)
    jitter_along_m: float = 0.0
    jitter_across_m: float = 0.0
    jitter_heading_deg: float = 0.0

    def __post_init__(self) -> None:
        if self.layout not in LAYOUTS:
            raise ValueError(f"unknown layout {self.layout!r}; expected one of {LAYOUTS}")
        if min(self.n_clean, self.n_fp, self.n_fn) < 0 or self.n_clean + self.n_fp + self.n_fn == 0:
            raise ValueError("scene counts must be non-negative and sum to at least 1")
        if not (self.fp_area_frac > 0 and self.fn_area_frac > 0):
            raise ValueError("blob area fractions must be positive")

    @classmethod
    def from_dict(cls, raw: dict) -> "BundleSpec":
        grid = DEFAULT_BUNDLE_GRID
        if "grid" in raw:
            g = raw["grid"]
            grid = GridSpec(
                resolution_m=g["resolution_m"],
                width_px=g["width_px"],
                height_px=g["height_px"],
                vehicle_px=tuple(g["vehicle_px"]),
            )
        scenes = raw.get("scenes", {})
        jitter = raw.get("jitter", {})
        return cls(
            seed=int(raw.get("seed", 0)),
            layout=raw.get("layout", "crossroads"),
            road_width_m=float(raw.get("road_width_m", 6.0)),
            heading_deg=float(raw.get("heading_deg", 0.0)),
            grid=grid,
            n_clean=int(scenes.get("clean", 2)),
            n_fp=int(scenes.get("fp", 2)),
            n_fn=int(scenes.get("fn", 2)),
            fp_area_frac=float(raw.get("fp_area_frac", 0.08)),
            fn_area_frac=float(raw.get("fn_area_frac", 0.08)),
            occluder_blobs=tuple(raw.get("occluder_blobs", (0, 0))),
            jitter_along_m=float(jitter.get("along_max_m", 0.0)),
            jitter_across_m=float(jitter.get("across_max_m", 0.0)),
            jitter_heading_deg=float(jitter.get("heading_max_deg", 0.0)),
        )

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "layout": self.layout,
            "road_width_m": self.road_width_m,
            "heading_deg": self.heading_deg,
            "grid": {
                "resolution_m": self.grid.resolution_m,
                "width_px": self.grid.width_px,
                "height_px": self.grid.height_px,
                "vehicle_px": list(self.grid.vehicle_px),
            },
            "scenes": {"clean": self.n_clean, "fp": self.n_fp, "fn": self.n_fn},
            "fp_area_frac": self.fp_area_frac,
            "fn_area_frac": self.fn_area_frac,
            "occluder_blobs": list(self.occluder_blobs),
            "jitter": {
                "along_max_m": self.jitter_along_m,
                "across_max_m": self.jitter_across_m,
                "heading_max_deg": self.jitter_heading_deg,
            },
        }


def write_bundle(spec: BundleSpec, out_dir: str | Path) -> dict:
    """Write a complete bundle: map.osm, mask rasters, manifest, truth poses.

    Fully seed-deterministic: the same spec produces byte-identical files.
    The manifest carries the jittered GPS poses; true poses go to a separate
    truth.jsonl sidecar for evaluation.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    layout = LayoutSpec(
        layout=spec.layout,
        road_width_m=spec.road_width_m,
        heading_deg=spec.heading_deg,
        seed=spec.seed,
    )
    graph, frame = gen_map(layout)
    osm_bytes = write_osm(graph)
    (out / "map.osm").write_bytes(osm_bytes)
    # Generate scenes from the serialized graph, so the ground truth agrees
    # bit-for-bit with what a consumer re-parses from map.osm.
    graph = parse_osm(osm_bytes)

    categories = ["clean"] * spec.n_clean + ["fp"] * spec.n_fp + ["fn"] * spec.n_fn
    records: list[SceneRecord] = []
    truth_rows: list[dict] = []
    h = math.radians(spec.heading_deg)
    ux, uy = math.sin(h), math.cos(h)
    for idx, category in enumerate(categories):
        rng = np.random.default_rng([spec.seed, idx])
        along = float(rng.uniform(-5.0, 5.0))
        pose = Pose(
            position=_local(along * ux, along * uy, frame),
            heading_deg=spec.heading_deg,
        )
        # Anchor the frame at the pose, exactly like the validation pipeline,
        # so an unperturbed bundle validates to metrics of exactly 1.0.
        scene_frame = LocalFrame(origin=pose.position)
        road_px = int(
            np.count_nonzero(
                rasterize_roads(
                    scene_elements(graph, scene_frame, pose, spec.grid), pose, scene_frame, spec.grid
                ).road
            )
        )
        fp_blob = fn_erase = None
        if category == "fp":
            frac = float(rng.uniform(spec.fp_area_frac, 1.5 * spec.fp_area_frac))
            fp_blob = Patch(
                x_m=spec.road_width_m / 2.0 + 3.0, y_m=8.0, area_px=max(1, round(frac * road_px))
            )
        elif category == "fn":
            frac = float(rng.uniform(spec.fn_area_frac, 1.5 * spec.fn_area_frac))
            fn_erase = Patch(x_m=0.0, y_m=8.0, area_px=max(1, round(frac * road_px)))
        jitter = None
        if spec.jitter_along_m or spec.jitter_across_m or spec.jitter_heading_deg:
            jitter = (
                float(rng.uniform(-spec.jitter_along_m, spec.jitter_along_m)),
                float(rng.uniform(-spec.jitter_across_m, spec.jitter_across_m)),
                float(rng.uniform(-spec.jitter_heading_deg, spec.jitter_heading_deg)),
            )
        scene = gen_scene(
            graph,
            scene_frame,
            pose,
            spec.grid,
            SYNTHETIC_POLICY,
            PerturbationSpec(
                fp_blob=fp_blob,
                fn_erase=fn_erase,
                pose_jitter=jitter,
                occluder_blobs=spec.occluder_blobs,
                seed=idx,
            ),
        )
        scene_id = f"scene_{idx:04d}"
        pred_path = out / "masks" / f"{scene_id}_pred.png"
        gt_path = out / "masks" / f"{scene_id}_gt.png"
        maskio.write_mask(pred_path, scene.pred.labels)
        maskio.write_mask(gt_path, scene.gt.labels)
        records.append(
            SceneRecord(
                scene_id=scene_id,
                pred_mask_path=pred_path,
                gt_mask_path=gt_path,
                pose=scene.gps_pose,
                mask_space="bev",
            )
        )
        truth_rows.append(
            {
                "scene_id": scene_id,
                "category": category,
                "lat": scene.truth_pose.position.lat,
                "lon": scene.truth_pose.position.lon,
                "heading_deg": scene.truth_pose.heading_deg,
            }
        )

    write_manifest(out / "manifest.jsonl", records)
    (out / "truth.jsonl").write_text(
        "".join(json.dumps(row, sort_keys=True) + "\n" for row in truth_rows), encoding="utf-8"
    )
    meta = {"spec": spec.to_dict(), "policy": "synthetic", "map": "map.osm", "scene_count": len(records)}
    (out / "bundle.json").write_text(
        json.dumps(meta, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    # ready-to-use config for `roadval validate` / `roadval correct-pose`
    validate_config = {
        "manifest": "manifest.jsonl",
        "map": "map.osm",
        "policy": "synthetic",
        "grid": spec.to_dict()["grid"],
    }
    (out / "validate_config.json").write_text(
        json.dumps(validate_config, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    return meta


def render_camera_view(
    cam: CameraModel,
    elements: list[RoadElement],
    pose: Pose,
    frame: LocalFrame,
    policy: LabelPolicy,
) -> LabelMask:
    """Render the road footprint into a synthetic camera-space label mask.

    Each pixel's ground intersection is tested against the buffered road
    footprint; pixels at or above the horizon become background.  Used to
    exercise the camera-to-BEV warp end to end.
    """
    road_id, _, background_id = _policy_labels(policy)
    u, v = np.meshgrid(np.arange(cam.image_width), np.arange(cam.image_height))
    x, y, ok = pixel_to_ground(cam, u, v)
    labels = np.full((cam.image_height, cam.image_width), background_id, dtype=np.uint8)
    if np.any(ok):
        member = points_within_elements(x[ok], y[ok], elements, pose, frame)
        hit = np.zeros(ok.shape, dtype=bool)
        hit[ok] = member
        labels[hit] = road_id
    return LabelMask(labels=labels)
