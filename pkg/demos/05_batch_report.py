"""Batch validation: bundle -> report -> flagged error list.

Writes a synthetic bundle of clean and perturbed scenes to disk, runs the
command-line pipeline over it, and digests the resulting report.
"""
import json
from pathlib import Path

from roadval.bev import GridSpec
from roadval.cli import main as roadval
from roadval.synth import BundleSpec, write_bundle

out = Path("demos/output")
bundle_dir = out / "bundle"
run_dir = out / "run"

spec = BundleSpec(
    seed=42,
    layout="crossroads",
    road_width_m=6.0,
    grid=GridSpec(resolution_m=0.1, width_px=200, height_px=260, vehicle_px=(100, 219)),
    n_clean=4,
    n_fp=3,
    n_fn=3,
    fp_area_frac=0.07,
    fn_area_frac=0.07,
)
write_bundle(spec, bundle_dir)
print(f"bundle written to {bundle_dir} (10 scenes)")

# Same entry point as `roadval validate ...` on the shell.
rc = roadval([
    "validate",
    "--config", str(bundle_dir / "validate_config.json"),
    "--out", str(run_dir),
    "--dice-pred-max", "gt_q1",
])
print(f"validate exit code: {rc}")

report = json.loads((run_dir / "report.json").read_text())
stats = report["summary"]["per_metric"]["dice_pred"]
print(f"dice_pred: median={stats['median']:.4f}  q1={stats['q1']:.4f}  min={stats['min']:.4f}")
print(f"threshold dice_pred_max = {report['dice_pred_max']:.4f}")
for row in report["flagged"]:
    kind = "false-positive" if row["fp_type"] else "false-negative"
    print(f"  flagged {row['scene_id']}: dice={row['dice']:.4f} -> {kind} road error")
prf = report["pixel_prf_pooled"]
print(f"pixel agreement with ground-truth errors: recall={prf['recall']:.3f} precision={prf['precision']:.3f}")
print(f"full report: {run_dir / 'report.json'}")
