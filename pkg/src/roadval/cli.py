"""Command-line entry point: validate, correct-pose, synth, report.

Configuration comes from an optional JSON config file plus command-line
flags; flags win.  Every report embeds the fully resolved configuration so a
run can be reproduced from the report alone.  Exit codes: 0 = all scenes
processed, 1 = partial (some scenes failed), 2 = configuration/input error
before any processing.
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from .bev import DEFAULT_GRID, CameraModel, GridSpec
from .geodesy import LocalFrame, bbox_around
from .localize import CorrectionFailedError, NoRoadInRangeError, SearchConfig, correct_pose
from .mapio import DEFAULT_DRIVABLE_CLASSES, WidthConfig, filter_drivable, load_osm, to_elements
from .metrics import POLICY_PRESETS, LabelPolicy, error_overlay
from . import maskio
from .synth import BundleSpec, write_bundle
from .validate import (
    QUERY_MARGIN_M,
    THRESHOLD_TOKENS,
    build_report,
    load_bev_mask,
    read_manifest,
    run_batch,
    write_manifest,
)

OUT_ENV_VAR = "ROADVAL_OUT"


class ConfigError(ValueError):
    """Bad configuration or missing input, detected before processing."""


# --------------------------------------------------------------------------
# configuration plumbing

def _load_json(path: str | Path, what: str) -> Any:
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigError(f"cannot read {what} {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{what} {path} is not valid JSON: {exc}") from exc


_PATH_KEYS = ("manifest", "map", "camera", "policy")


def _merge_config(args: argparse.Namespace, keys: Sequence[str]) -> dict:
    """Defaults < config file < command-line flags."""
    merged: dict = {}
    if getattr(args, "config", None):
        file_cfg = _load_json(args.config, "config file")
        if not isinstance(file_cfg, dict):
            raise ConfigError(f"config file {args.config} must hold a JSON object")
        base = Path(args.config).parent
        for key, value in file_cfg.items():
            # path-like values in the config file resolve against its location
            if key in _PATH_KEYS and isinstance(value, str) and (base / value).exists():
                value = str(base / value)
            merged[key] = value
    for key in keys:
        value = getattr(args, key, None)
        if value is not None:
            merged[key] = value
    return merged


def _grid_from(cfg: dict) -> GridSpec:
    raw = cfg.get("grid")
    if raw is None:
        return DEFAULT_GRID
    try:
        return GridSpec(
            resolution_m=raw["resolution_m"],
            width_px=raw["width_px"],
            height_px=raw["height_px"],
            vehicle_px=tuple(raw["vehicle_px"]),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"bad grid config: {exc}") from exc


def _policy_from(cfg: dict) -> LabelPolicy:
    raw = cfg.get("policy", "cityscapes")
    if isinstance(raw, str) and raw in POLICY_PRESETS:
        return POLICY_PRESETS[raw]
    if isinstance(raw, str):
        raw = _load_json(raw, "policy file")
    try:
        return LabelPolicy(
            road_ids=frozenset(raw["road_ids"]),
            occluder_ids=frozenset(raw.get("occluder_ids", ())),
            ignore_ids=frozenset(raw.get("ignore_ids", ())),
            void_id=raw.get("void_id", 255),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"bad label policy: {exc}") from exc


def _width_from(cfg: dict) -> WidthConfig:
    raw = cfg.get("width")
    if raw is None:
        return WidthConfig()
    try:
        return WidthConfig(
            default_lane_width_m=raw.get("default_lane_width_m", 3.5),
            class_widths_m=dict(raw.get("class_widths_m", {})) or WidthConfig().class_widths_m,
            fallback_width_m=raw.get("fallback_width_m", 6.0),
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad width config: {exc}") from exc


def _camera_from(cfg: dict) -> CameraModel | None:
    raw = cfg.get("camera")
    if raw is None:
        return None
    if isinstance(raw, str):
        raw = _load_json(raw, "camera calibration")
    try:
        return CameraModel(**raw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad camera calibration: {exc}") from exc


def _search_from(cfg: dict) -> SearchConfig:
    raw = cfg.get("search", {})
    try:
        return SearchConfig(
            radius_m=raw.get("radius_m", 20.0),
            along_step_m=raw.get("along_step_m", 1.0),
            across_step_m=raw.get("across_step_m", 0.5),
            fine_step_m=raw.get("fine_step_m", 0.1),
            try_reversed_heading=raw.get("try_reversed_heading", True),
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad search config: {exc}") from exc


def _threshold_from(cfg: dict) -> float | str | None:
    raw = cfg.get("dice_pred_max", "q1")
    if raw is None or isinstance(raw, (int, float)):
        return raw
    raw = str(raw).replace("-", "_")
    try:
        return float(raw)
    except ValueError:
        if raw not in THRESHOLD_TOKENS:
            raise ConfigError(
                f"dice_pred_max must be a number or one of {THRESHOLD_TOKENS}, got {raw!r}"
            ) from None
        return raw


def _out_dir(cfg: dict) -> Path:
    out = cfg.get("out") or os.environ.get(OUT_ENV_VAR)
    if not out:
        raise ConfigError(f"no output directory: pass --out or set {OUT_ENV_VAR}")
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _require_file(cfg: dict, key: str, what: str) -> Path:
    raw = cfg.get(key)
    if not raw:
        raise ConfigError(f"missing required input: {what} (--{key.replace('_', '-')})")
    path = Path(raw)
    if not path.is_file():
        raise ConfigError(f"{what} not found: {path}")
    return path


def _read_scene_manifest(cfg: dict, path: Path):
    try:
        return read_manifest(
            path,
            heading_offset_deg=cfg.get("heading_offset_deg", 0.0),
            heading_sign=int(cfg.get("heading_sign", 1)),
        )
    except (OSError, ValueError) as exc:
        raise ConfigError(f"cannot read scene manifest: {exc}") from exc


def _read_map(path: Path):
    try:
        return load_osm(path)
    except (OSError, ValueError) as exc:
        raise ConfigError(f"cannot read map extract: {exc}") from exc


def _policy_echo(policy: LabelPolicy) -> dict:
    return {
        "road_ids": sorted(policy.road_ids),
        "occluder_ids": sorted(policy.occluder_ids),
        "ignore_ids": sorted(policy.ignore_ids),
        "void_id": policy.void_id,
    }


def _grid_echo(grid: GridSpec) -> dict:
    return {
        "resolution_m": grid.resolution_m,
        "width_px": grid.width_px,
        "height_px": grid.height_px,
        "vehicle_px": list(grid.vehicle_px),
    }


def _write_json(path: Path, payload: dict) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")


# --------------------------------------------------------------------------
# validate

_VALIDATE_KEYS = (
    "manifest", "map", "camera", "out", "policy", "dice_pred_max", "gt_fit_min",
    "jobs", "heading_offset_deg", "heading_sign",
)


def _cmd_validate(args: argparse.Namespace) -> int:
    cfg = _merge_config(args, _VALIDATE_KEYS)
    manifest_path = _require_file(cfg, "manifest", "scene manifest")
    map_path = _require_file(cfg, "map", "map extract")
    out = _out_dir(cfg)
    grid = _grid_from(cfg)
    policy = _policy_from(cfg)
    width_cfg = _width_from(cfg)
    camera = _camera_from(cfg)
    threshold = _threshold_from(cfg)
    gt_fit_min = cfg.get("gt_fit_min")
    jobs = int(cfg.get("jobs", 1))
    drivable = sorted(cfg.get("drivable_classes", sorted(DEFAULT_DRIVABLE_CLASSES)))
    curve_thresholds = cfg.get("curve_thresholds")

    records = _read_scene_manifest(cfg, manifest_path)
    graph = _read_map(map_path)
    if any(r.mask_space == "camera" for r in records) and camera is None:
        raise ConfigError("manifest contains camera-space masks but no --camera was given")
    if isinstance(threshold, str) and threshold.startswith("gt_") and all(
        r.gt_mask_path is None for r in records
    ):
        raise ConfigError(f"dice_pred_max={threshold!r} needs ground-truth masks in the manifest")

    kwargs: dict = {}
    if curve_thresholds is not None:
        kwargs["curve_thresholds"] = curve_thresholds
    outcome = run_batch(
        records,
        graph,
        grid=grid,
        policy=policy,
        camera=camera,
        width_cfg=width_cfg,
        drivable=drivable,
        gt_fit_min=gt_fit_min,
        dice_pred_max=threshold,
        jobs=jobs,
        **kwargs,
    )

    config_echo = {
        "command": "validate",
        "manifest": str(cfg["manifest"]),
        "map": str(cfg["map"]),
        "camera": cfg.get("camera"),
        "out": str(cfg.get("out") or os.environ.get(OUT_ENV_VAR)),
        "grid": _grid_echo(grid),
        "policy": _policy_echo(policy),
        "width": {
            "default_lane_width_m": width_cfg.default_lane_width_m,
            "class_widths_m": dict(sorted(width_cfg.class_widths_m.items())),
            "fallback_width_m": width_cfg.fallback_width_m,
        },
        "drivable_classes": list(drivable),
        "dice_pred_max": threshold,
        "gt_fit_min": gt_fit_min,
        "jobs": jobs,
        "heading_offset_deg": cfg.get("heading_offset_deg", 0.0),
        "heading_sign": int(cfg.get("heading_sign", 1)),
        "bev_validity": "map pixels outside the warped camera footprint are excluded",
    }
    report = build_report(outcome, config_echo)
    _write_json(out / "report.json", report)
    _write_scene_csv(out / "scenes.csv", report)
    for result in outcome.results:
        maskio.write_rgb(out / "errors" / f"{result.scene_id}.png", error_overlay(result.errors_pred))

    failures = outcome.errors or [r for r in outcome.removed if r.reason.startswith("error:")]
    return 1 if failures else 0


def _write_scene_csv(path: Path, report: dict) -> None:
    columns = [
        "scene_id", "dice_pred", "ios_pred", "iom_pred", "dice_gt", "ios_gt", "iom_gt",
        "tp", "fp", "fn", "occluded", "ignored", "invalid",
        "prf_recall", "prf_precision", "error_px_detected", "error_px_true",
        "cleaned_out", "outlier", "fp_type", "fn_type",
    ]
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(columns)
        for scene in report["scenes"]:
            mp = scene["metrics_pred"] or {}
            mg = scene["metrics_gt"] or {}
            cp = scene["counts_pred"] or {}
            prf = scene["pixel_prf"] or {}
            flags = scene["flags"]
            writer.writerow(
                [
                    scene["scene_id"],
                    mp.get("dice"), mp.get("ios"), mp.get("iom"),
                    mg.get("dice"), mg.get("ios"), mg.get("iom"),
                    cp.get("tp"), cp.get("fp"), cp.get("fn"),
                    cp.get("occluded"), cp.get("ignored"), cp.get("invalid"),
                    prf.get("recall"), prf.get("precision"),
                    prf.get("detected"), prf.get("true"),
                    flags["cleaned_out"], flags["outlier"], flags["fp_type"], flags["fn_type"],
                ]
            )


# --------------------------------------------------------------------------
# correct-pose

_CORRECT_KEYS = (
    "manifest", "map", "out", "policy", "camera", "jobs",
    "radius_m", "along_step_m", "across_step_m", "fine_step_m",
    "heading_offset_deg", "heading_sign",
)


def _cmd_correct_pose(args: argparse.Namespace) -> int:
    cfg = _merge_config(args, _CORRECT_KEYS)
    for key in ("radius_m", "along_step_m", "across_step_m", "fine_step_m"):
        if key in cfg:
            cfg.setdefault("search", {})[key] = cfg.pop(key)
    manifest_path = _require_file(cfg, "manifest", "scene manifest")
    map_path = _require_file(cfg, "map", "map extract")
    out = _out_dir(cfg)
    grid = _grid_from(cfg)
    policy = _policy_from(cfg)
    width_cfg = _width_from(cfg)
    camera = _camera_from(cfg)
    search = _search_from(cfg)
    drivable = sorted(cfg.get("drivable_classes", sorted(DEFAULT_DRIVABLE_CLASSES)))

    records = _read_scene_manifest(cfg, manifest_path)
    graph = _read_map(map_path)
    drivable_graph = filter_drivable(graph, drivable)

    def work(record):
        if record.gt_mask_path is None:
            return record, None, "no ground-truth mask"
        frame = LocalFrame(origin=record.pose.position)
        reach = max(search.radius_m, grid.reach_m()) + QUERY_MARGIN_M
        elements = to_elements(
            drivable_graph, frame, bbox_around(record.pose, reach), width_cfg
        )
        try:
            gt_bev = load_bev_mask(record.gt_mask_path, record.mask_space, grid, policy, camera)
            return record, correct_pose(gt_bev, elements, record.pose, frame, grid, policy, search), None
        except (OSError, ValueError, NoRoadInRangeError, CorrectionFailedError) as exc:
            return record, None, str(exc)

    ordered = sorted(records, key=lambda r: r.scene_id)
    jobs = int(cfg.get("jobs", 1))
    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            worked = list(pool.map(work, ordered))
    else:
        worked = [work(r) for r in ordered]

    rows: list[dict] = []
    corrected_records = []
    skipped: list[dict] = []
    for record, result, error in worked:
        if result is None:
            skipped.append({"scene_id": record.scene_id, "error": error})
            continue
        rows.append(
            {
                "scene_id": record.scene_id,
                "lat": result.original_pose.position.lat,
                "lon": result.original_pose.position.lon,
                "heading_deg": result.original_pose.heading_deg,
                "corrected_lat": result.corrected_pose.position.lat,
                "corrected_lon": result.corrected_pose.position.lon,
                "corrected_heading_deg": result.corrected_pose.heading_deg,
                "dice_before": result.dice_before,
                "dice_after": result.dice_after,
                "candidates_evaluated": result.candidates_evaluated,
            }
        )
        corrected_records.append(dataclasses.replace(record, corrected_pose=result.corrected_pose))

    (out / "corrections.jsonl").write_text(
        "".join(json.dumps(row, sort_keys=True) + "\n" for row in rows), encoding="utf-8"
    )
    write_manifest(out / "corrected_manifest.jsonl", corrected_records)
    _write_json(
        out / "correction_summary.json",
        {
            "config": {
                "command": "correct-pose",
                "manifest": str(cfg["manifest"]),
                "map": str(cfg["map"]),
                "grid": _grid_echo(grid),
                "policy": _policy_echo(policy),
                "search": dataclasses.asdict(search),
                "drivable_classes": list(drivable),
            },
            "scenes": {"corrected": len(rows), "skipped": len(skipped)},
            "dice_before": _distribution([r["dice_before"] for r in rows]),
            "dice_after": _distribution([r["dice_after"] for r in rows]),
            "skipped": skipped,
        },
    )
    return 1 if skipped else 0


def _distribution(values: list[float | None]) -> dict | None:
    defined = sorted(v for v in values if v is not None)
    if not defined:
        return None
    arr = np.asarray(defined)
    hist, edges = np.histogram(arr, bins=20, range=(0.0, 1.0))
    q1, median, q3 = (float(x) for x in np.percentile(arr, [25, 50, 75]))
    return {
        "count": len(defined),
        "undefined": len(values) - len(defined),
        "mean": float(arr.mean()),
        "stddev": float(arr.std()),
        "min": float(arr[0]),
        "q1": q1,
        "median": median,
        "q3": q3,
        "max": float(arr[-1]),
        "histogram": {"bin_edges": [float(e) for e in edges], "counts": [int(c) for c in hist]},
    }


# --------------------------------------------------------------------------
# synth

def _cmd_synth(args: argparse.Namespace) -> int:
    spec_raw = _load_json(args.spec, "bundle spec")
    if not isinstance(spec_raw, dict):
        raise ConfigError(f"bundle spec {args.spec} must hold a JSON object")
    if args.seed is not None:
        spec_raw["seed"] = args.seed
    try:
        spec = BundleSpec.from_dict(spec_raw)
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"bad bundle spec: {exc}") from exc
    out = _out_dir({"out": args.out})
    meta = write_bundle(spec, out)
    print(json.dumps({"out": str(out), "scenes": meta["scene_count"]}))
    return 0


# --------------------------------------------------------------------------
# report re-rendering

def _cmd_report(args: argparse.Namespace) -> int:
    report = _load_json(args.report, "report")
    if not isinstance(report, dict) or "scenes" not in report:
        raise ConfigError(f"{args.report} does not look like a validation report")
    out = _out_dir({"out": args.out})
    _write_scene_csv(out / "scenes.csv", report)
    with (out / "curve.csv").open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["dice_pred_max", "relative_count"])
        writer.writerows(report.get("relative_count_curve", []))
    (out / "summary.txt").write_text(_render_summary(report), encoding="utf-8")
    return 0


def _render_summary(report: dict) -> str:
    lines = ["validation report summary", ""]
    counts = report.get("scene_counts", {})
    lines.append(
        "scenes: total={total} validated={validated} removed={removed} "
        "cleaned_out={cleaned_out} analyzed={analyzed} errors={errors}".format(
            **{k: counts.get(k, 0) for k in ("total", "validated", "removed", "cleaned_out", "analyzed", "errors")}
        )
    )
    summary = report.get("summary") or {}
    for name, stats in (summary.get("per_metric") or {}).items():
        lines.append(
            f"{name}: median={stats['median']:.4f} q1={stats['q1']:.4f} q3={stats['q3']:.4f} "
            f"whiskers=[{stats['lower_whisker']:.4f}, {stats['upper_whisker']:.4f}] "
            f"mean={stats['mean']:.4f} +/- {stats['stddev']:.4f} (n={stats['count']})"
        )
    threshold = report.get("dice_pred_max")
    if threshold is not None:
        lines.append(f"dice_pred_max: {threshold:.4f}")
    flagged = report.get("flagged", [])
    lines.append(f"flagged scenes: {len(flagged)}")
    for row in flagged:
        kinds = [k for k in ("fp_type", "fn_type") if row.get(k)]
        lines.append(
            f"  {row['scene_id']}: dice={row['dice']:.4f} ios={_fmt(row['ios'])} "
            f"iom={_fmt(row['iom'])} -> {'+'.join(kinds) or 'unjudged'}"
        )
    prf = report.get("pixel_prf_pooled")
    if prf:
        lines.append(
            f"pixel prf (pooled): recall={_fmt(prf['recall'])} precision={_fmt(prf['precision'])}"
        )
    return "\n".join(lines) + "\n"


def _fmt(value: float | None) -> str:
    return "undefined" if value is None else f"{value:.4f}"


# --------------------------------------------------------------------------
# entry point

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="roadval", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file; flags override its keys")
    common.add_argument("--manifest", help="scene manifest (JSON lines)")
    common.add_argument("--map", help="OSM XML extract (.osm or .osm.gz)")
    common.add_argument("--camera", help="camera calibration JSON (for camera-space masks)")
    common.add_argument("--out", help=f"output directory (default: ${OUT_ENV_VAR})")
    common.add_argument("--policy", help="label policy preset name or JSON file")
    common.add_argument("--jobs", type=int, help="parallel scene workers")
    common.add_argument("--heading-offset-deg", type=float, dest="heading_offset_deg",
                        help="added to manifest headings on ingestion")
    common.add_argument("--heading-sign", type=int, choices=(-1, 1), dest="heading_sign",
                        help="sign applied to manifest headings on ingestion")

    v = sub.add_parser("validate", parents=[common], help="validate segmentation masks against the map")
    v.add_argument("--dice-pred-max", dest="dice_pred_max",
                   help=f"flagging threshold: number or one of {', '.join(THRESHOLD_TOKENS)}")
    v.add_argument("--gt-fit-min", dest="gt_fit_min", type=float,
                   help="drop scenes whose ground-truth dice is <= this value")
    v.set_defaults(func=_cmd_validate)

    c = sub.add_parser("correct-pose", parents=[common], help="correct GPS poses against ground truth")
    c.add_argument("--radius", dest="radius_m", type=float, help="search radius, metres")
    c.add_argument("--along-step", dest="along_step_m", type=float, help="coarse step along the road")
    c.add_argument("--across-step", dest="across_step_m", type=float, help="coarse step across the road")
    c.add_argument("--fine-step", dest="fine_step_m", type=float, help="refinement step")
    c.set_defaults(func=_cmd_correct_pose)

    s = sub.add_parser("synth", help="generate a synthetic scene bundle")
    s.add_argument("spec", help="bundle spec JSON file")
    s.add_argument("--out", help=f"output directory (default: ${OUT_ENV_VAR})")
    s.add_argument("--seed", type=int, help="override the bundle seed")
    s.set_defaults(func=_cmd_synth)

    r = sub.add_parser("report", help="re-render artifacts from a prior run's report.json")
    r.add_argument("report", help="report.json from a validate run")
    r.add_argument("--out", help=f"output directory (default: ${OUT_ENV_VAR})")
    r.set_defaults(func=_cmd_report)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(json.dumps({"errors": [str(exc)]}), file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
