"""From street-map XML to a vehicle-centered road raster.

Generates a small synthetic junction, round-trips it through OSM XML, and
rasterizes the drivable area into a metric bird's-eye-view grid around a
vehicle pose.
"""
import numpy as np

from roadval import (
    DEFAULT_DRIVABLE_CLASSES,
    GridSpec,
    LocalFrame,
    Pose,
    filter_drivable,
    parse_osm,
    rasterize_roads,
    to_elements,
    bbox_around,
    write_osm,
)
from roadval.maskio import write_mask
from roadval.synth import LayoutSpec, gen_map

# A t-intersection with a 6 m main road, rotated 25 degrees from north.
graph, frame = gen_map(LayoutSpec(layout="t-intersection", road_width_m=6.0, heading_deg=25.0))

# Serialize to OSM XML and parse it back: this is exactly the file format a
# real map extract would arrive in.
xml = write_osm(graph)
print(f"OSM extract: {len(xml)} bytes, {len(graph.nodes)} nodes, {len(graph.ways)} ways")
graph = parse_osm(xml)

# The vehicle sits at the map origin, facing along the main road.
pose = Pose(position=frame.origin, heading_deg=25.0)

# 40 m x 60 m grid at 0.1 m/px, vehicle bottom-center. Forward is up.
grid = GridSpec(resolution_m=0.1, width_px=400, height_px=600, vehicle_px=(200, 499))

# Query the map around the pose, reduce ways to width-carrying segments, and
# rasterize. Each segment paints a band of its width with rounded caps.
drivable = filter_drivable(graph, DEFAULT_DRIVABLE_CLASSES)
elements = to_elements(drivable, frame, bbox_around(pose, grid.reach_m() + 10.0))
road = rasterize_roads(elements, pose, frame, grid)

print(f"road elements in range: {len(elements)}")
print(f"road pixels: {int(road.road.sum())} of {road.road.size}")

write_mask("demos/output/road_raster.png", np.where(road.road, 255, 0).astype(np.uint8))
print("wrote demos/output/road_raster.png")
