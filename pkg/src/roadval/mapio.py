"""OpenStreetMap ingestion: XML parsing, drivability filtering, road elements.

Road geometry is modelled as way centerlines buffered by a width.  OSM rarely
tags widths, so :class:`WidthConfig` supplies per-class defaults; the resolved
configuration is surfaced in batch reports rather than treated as ground truth.
"""
from __future__ import annotations

import gzip
import math
import xml.etree.ElementTree as ET
from dataclasses import dataclass, field
from pathlib import Path
from types import MappingProxyType
from typing import Iterable, Mapping

from .geodesy import GeoBBox, GeoPoint, LocalFrame, LocalPoint, to_local

# Classes rasterized as drivable road by default.  Footways and cycleways are
# excluded: the validated segmentation class is vehicular road.
DEFAULT_DRIVABLE_CLASSES = frozenset(
    {
        "motorway",
        "trunk",
        "primary",
        "secondary",
        "tertiary",
        "unclassified",
        "residential",
        "service",
        "living_street",
        "motorway_link",
        "trunk_link",
        "primary_link",
        "secondary_link",
        "tertiary_link",
    }
)

DEFAULT_CLASS_WIDTHS_M: Mapping[str, float] = MappingProxyType(
    {
        "motorway": 7.5,
        "motorway_link": 7.5,
        "trunk": 7.5,
        "trunk_link": 7.5,
        "primary": 7.0,
        "primary_link": 7.0,
        "secondary": 7.0,
        "secondary_link": 7.0,
        "residential": 6.5,
        "living_street": 6.5,
        "service": 4.0,
    }
)


class OsmParseError(ValueError):
    """Malformed OSM XML.  ``byte_offset`` locates the failure when known."""

    def __init__(self, message: str, byte_offset: int | None = None):
        super().__init__(message)
        self.byte_offset = byte_offset


@dataclass(frozen=True)
class RoadWay:
    """An OSM way carrying a highway tag."""

    way_id: int
    node_refs: tuple[int, ...]
    highway_class: str
    explicit_width_m: float | None = None
    lanes: int | None = None

    def __post_init__(self) -> None:
        if len(self.node_refs) < 2:
            raise ValueError(f"way {self.way_id} needs >= 2 node refs")
        if self.explicit_width_m is not None and not self.explicit_width_m > 0:
            raise ValueError(f"way {self.way_id} explicit width must be > 0")


@dataclass(frozen=True)
class RoadGraph:
    """Parsed road network: node positions plus highway ways.

    ``dropped_ways`` counts ways discarded because they referenced missing
    nodes or degenerated to fewer than two nodes.  Immutable after
    construction and safe to share across threads.
    """

    nodes: dict[int, GeoPoint]
    ways: tuple[RoadWay, ...]
    dropped_ways: int = 0


@dataclass(frozen=True)
class RoadElement:
    """One width-carrying centerline segment in a local frame.

    ``angle_deg`` is the heading of the direction a -> b (degrees clockwise
    from north).
    """

    a: LocalPoint
    b: LocalPoint
    width_m: float
    angle_deg: float
    way_id: int

    def __post_init__(self) -> None:
        if self.a == self.b:
            raise ValueError("element endpoints must differ")
        if not self.width_m > 0:
            raise ValueError("element width must be > 0")

    @property
    def length_m(self) -> float:
        return math.hypot(self.b.east - self.a.east, self.b.north - self.a.north)


@dataclass(frozen=True)
class WidthConfig:
    """Road width fallbacks: explicit tag > lanes > class default > global."""

    default_lane_width_m: float = 3.5
    class_widths_m: Mapping[str, float] = field(default_factory=lambda: DEFAULT_CLASS_WIDTHS_M)
    fallback_width_m: float = 6.0

    def __post_init__(self) -> None:
        widths = [self.default_lane_width_m, self.fallback_width_m, *self.class_widths_m.values()]
        if any(not w > 0 for w in widths):
            raise ValueError("all configured widths must be > 0")


def _byte_offset(document: bytes, line: int, column: int) -> int:
    lines = document.split(b"\n")
    if line - 1 >= len(lines):
        return len(document)
    return sum(len(ln) + 1 for ln in lines[: line - 1]) + column


def parse_osm(document: bytes) -> RoadGraph:
    """Parse an OSM XML extract (schema 0.6) into a road graph.

    Keeps every node and every way carrying a ``highway`` tag.  Ways that
    reference missing nodes are dropped and counted in ``dropped_ways``.
    Output ordering is stable (sorted by id), so identical bytes produce an
    identical graph.
    """
    if not document.strip():
        raise OsmParseError("empty OSM document", byte_offset=0)
    try:
        root = ET.fromstring(document)
    except ET.ParseError as exc:
        line, column = exc.position
        raise OsmParseError(
            f"malformed OSM XML: {exc}", byte_offset=_byte_offset(document, line, column)
        ) from exc

    nodes: dict[int, GeoPoint] = {}
    for el in root.iter("node"):
        try:
            node_id = int(el.attrib["id"])
            point = GeoPoint(lat=float(el.attrib["lat"]), lon=float(el.attrib["lon"]))
        except (KeyError, ValueError) as exc:
            raise OsmParseError(f"invalid node element: {exc}") from exc
        nodes[node_id] = point

    ways: list[RoadWay] = []
    dropped = 0
    for el in root.iter("way"):
        try:
            way_id = int(el.attrib["id"])
        except (KeyError, ValueError) as exc:
            raise OsmParseError(f"invalid way element: {exc}") from exc
        refs = [int(nd.attrib["ref"]) for nd in el.findall("nd")]
        tags = {t.attrib.get("k"): t.attrib.get("v") for t in el.findall("tag")}
        highway = tags.get("highway")
        if highway is None:
            continue
        if len(refs) < 2 or any(r not in nodes for r in refs):
            dropped += 1
            continue
        ways.append(
            RoadWay(
                way_id=way_id,
                node_refs=tuple(refs),
                highway_class=highway,
                explicit_width_m=_parse_width(tags.get("width")),
                lanes=_parse_lanes(tags.get("lanes")),
            )
        )

    ways.sort(key=lambda w: w.way_id)
    return RoadGraph(nodes=dict(sorted(nodes.items())), ways=tuple(ways), dropped_ways=dropped)


def _parse_width(raw: str | None) -> float | None:
    if raw is None:
        return None
    try:
        value = float(raw.split()[0])
    except (ValueError, IndexError):
        return None
    return value if value > 0 else None


def _parse_lanes(raw: str | None) -> int | None:
    if raw is None:
        return None
    try:
        value = int(float(raw))
    except ValueError:
        return None
    return value if value > 0 else None


def load_osm(path: str | Path) -> RoadGraph:
    """Read an ``.osm`` file; ``.gz``-suffixed files are decompressed first."""
    path = Path(path)
    data = path.read_bytes()
    if path.suffix == ".gz":
        data = gzip.decompress(data)
    return parse_osm(data)


def write_osm(graph: RoadGraph) -> bytes:
    """Serialize a road graph back to OSM XML (0.6), 1e-7 degree precision."""
    out = ['<?xml version="1.0" encoding="UTF-8"?>', '<osm version="0.6" generator="roadval">']
    for node_id in sorted(graph.nodes):
        p = graph.nodes[node_id]
        out.append(f'  <node id="{node_id}" lat="{p.lat:.7f}" lon="{p.lon:.7f}"/>')
    for way in sorted(graph.ways, key=lambda w: w.way_id):
        out.append(f'  <way id="{way.way_id}">')
        for ref in way.node_refs:
            out.append(f'    <nd ref="{ref}"/>')
        out.append(f'    <tag k="highway" v="{way.highway_class}"/>')
        if way.explicit_width_m is not None:
            out.append(f'    <tag k="width" v="{way.explicit_width_m:g}"/>')
        if way.lanes is not None:
            out.append(f'    <tag k="lanes" v="{way.lanes}"/>')
        out.append("  </way>")
    out.append("</osm>")
    return ("\n".join(out) + "\n").encode("utf-8")


def filter_drivable(graph: RoadGraph, drivable_classes: Iterable[str]) -> RoadGraph:
    """Keep ways whose class is drivable; prune nodes to the referenced set."""
    classes = set(drivable_classes)
    ways = tuple(w for w in graph.ways if w.highway_class in classes)
    referenced = {ref for w in ways for ref in w.node_refs}
    nodes = {nid: p for nid, p in graph.nodes.items() if nid in referenced}
    return RoadGraph(nodes=nodes, ways=ways, dropped_ways=graph.dropped_ways)


def way_width(way: RoadWay, cfg: WidthConfig) -> float:
    """Resolve a way's road width in metres."""
    if way.explicit_width_m is not None:
        return way.explicit_width_m
    if way.lanes is not None:
        return way.lanes * cfg.default_lane_width_m
    return cfg.class_widths_m.get(way.highway_class, cfg.fallback_width_m)


def _segment_intersects_box(
    ax: float, ay: float, bx: float, by: float,
    min_x: float, min_y: float, max_x: float, max_y: float,
) -> bool:
    # Liang-Barsky clip: does segment a->b meet the axis-aligned box?
    dx = bx - ax
    dy = by - ay
    t0, t1 = 0.0, 1.0
    for p, q in (
        (-dx, ax - min_x),
        (dx, max_x - ax),
        (-dy, ay - min_y),
        (dy, max_y - ay),
    ):
        if p == 0.0:
            if q < 0.0:
                return False
            continue
        t = q / p
        if p < 0.0:
            if t > t1:
                return False
            t0 = max(t0, t)
        else:
            if t < t0:
                return False
            t1 = min(t1, t)
    return t0 <= t1


def to_elements(
    graph: RoadGraph,
    frame: LocalFrame,
    bbox: GeoBBox,
    cfg: WidthConfig | None = None,
) -> list[RoadElement]:
    """Break each way into local-frame segments with resolved widths.

    Consecutive node pairs become one element each.  Elements whose buffered
    footprint lies entirely outside the bbox are excluded.  The graph is taken
    as already filtered for drivability.
    """
    cfg = cfg or WidthConfig()
    lo = to_local(frame, GeoPoint(bbox.min_lat, bbox.min_lon))
    hi = to_local(frame, GeoPoint(bbox.max_lat, bbox.max_lon))
    elements: list[RoadElement] = []
    for way in graph.ways:
        width = way_width(way, cfg)
        margin = width / 2.0
        points = [to_local(frame, graph.nodes[r]) for r in way.node_refs]
        for a, b in zip(points, points[1:]):
            if a == b:
                continue
            if not _segment_intersects_box(
                a.east, a.north, b.east, b.north,
                lo.east - margin, lo.north - margin, hi.east + margin, hi.north + margin,
            ):
                continue
            angle = math.degrees(math.atan2(b.east - a.east, b.north - a.north)) % 360.0
            elements.append(
                RoadElement(a=a, b=b, width_m=width, angle_deg=angle, way_id=way.way_id)
            )
    return elements
