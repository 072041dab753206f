"""Detecting segmentation errors with map knowledge.

Builds a ground-truth scene from the map, injects one false-positive road
blob (a misread parking strip) and one false-negative erasure (a missed
branch), and shows how the overlap metrics expose each error type.
"""
from roadval import (
    GridSpec,
    LocalFrame,
    Pose,
    SYNTHETIC_POLICY,
    error_masks,
    error_overlay,
    metrics_from_counts,
    overlap_counts,
    rasterize_roads,
)
from roadval.maskio import write_rgb
from roadval.synth import LayoutSpec, Patch, PerturbationSpec, gen_map, gen_scene, scene_elements

grid = GridSpec(resolution_m=0.1, width_px=300, height_px=400, vehicle_px=(150, 339))
graph, frame = gen_map(LayoutSpec(layout="t-intersection", road_width_m=6.0, branch_width_m=4.5))
pose = Pose(position=frame.origin, heading_deg=0.0)

# The prediction gets a 900 px road blob beside the road and loses 700 px of
# real road ahead.
pert = PerturbationSpec(
    fp_blob=Patch(x_m=6.5, y_m=10.0, area_px=900),
    fn_erase=Patch(x_m=0.0, y_m=14.0, area_px=700),
)
scene = gen_scene(graph, frame, pose, grid, SYNTHETIC_POLICY, pert)

# Rasterize the map once; compare both masks against it.
road = rasterize_roads(scene_elements(graph, frame, pose, grid), pose, frame, grid)

for name, bev in [("ground truth", scene.gt), ("prediction", scene.pred)]:
    counts = overlap_counts(bev, road, SYNTHETIC_POLICY)
    m = metrics_from_counts(counts)
    print(
        f"{name:12s}  ios={m.ios:.4f}  iom={m.iom:.4f}  dice={m.dice:.4f}  "
        f"(tp={counts.tp}, fp={counts.fp}, fn={counts.fn})"
    )

# ios drops with the false positive, iom with the false negative. The error
# rasters localize both: orange-red = false positive, pink-red = false
# negative.
masks = error_masks(scene.pred, road, SYNTHETIC_POLICY)
print(f"fp pixels: {int(masks.fp_mask.sum())}, fn pixels: {int(masks.fn_mask.sum())}")
write_rgb("demos/output/validation_errors.png", error_overlay(masks))
print("wrote demos/output/validation_errors.png")
