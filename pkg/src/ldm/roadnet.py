"""Static road network: OSM parsing, adjacency, traversal and matching.

Only the OSM subset the scene layer needs is read: <node> and <way>
elements, keeping ways tagged with "highway" and the nodes they
reference. A parsed RoadGraph is immutable by convention and safe to
share across threads.
"""

from __future__ import annotations

import math
import xml.etree.ElementTree as ET
from collections import deque
from dataclasses import dataclass, field
from typing import IO, Optional, Union

from .errors import MalformedDocument, UnknownNode
from .geo import (
    EnuPoint,
    GeoBox,
    bearing_deg,
    haversine_m,
    heading_delta_deg,
    project_to_segment,
    wgs84_to_enu,
)
from .model import ElementKind, LdmLayer, Relation, SceneElement

# Invented, configurable constants: candidate ways are prefiltered by a
# bounding box inflated by MATCH_INFLATE_M, and a position further than
# MATCH_THRESHOLD_M from every segment is reported as unmatched.
MATCH_THRESHOLD_M = 50.0
MATCH_INFLATE_M = 100.0

ONEWAY_TRUE = {"yes", "true", "1"}


@dataclass
class RoadNode:
    osm_id: int
    lat: float
    lon: float


@dataclass
class RoadWay:
    osm_id: int
    node_refs: list[int]
    tags: dict[str, str] = field(default_factory=dict)
    oneway: bool = False


@dataclass
class MatchResult:
    way_id: int
    segment_index: int
    distance_m: float


@dataclass
class RoadGraph:
    """Geo-referenced road topology: nodes, ways and weighted adjacency.

    adjacency maps node id -> [(neighbor id, way id, segment length m)];
    edges are bidirectional unless the way is oneway.
    """

    nodes: dict[int, RoadNode] = field(default_factory=dict)
    ways: dict[int, RoadWay] = field(default_factory=dict)
    adjacency: dict[int, list[tuple[int, int, float]]] = field(default_factory=dict)
    warnings: list[str] = field(default_factory=list)
    _bboxes: dict[int, GeoBox] = field(default_factory=dict, compare=False, repr=False)

    def way_bbox(self, way_id: int) -> GeoBox:
        box = self._bboxes.get(way_id)
        if box is None:
            lats = [self.nodes[n].lat for n in self.ways[way_id].node_refs]
            lons = [self.nodes[n].lon for n in self.ways[way_id].node_refs]
            box = GeoBox(min(lats), min(lons), max(lats), max(lons))
            self._bboxes[way_id] = box
        return box

    def segment_count(self) -> int:
        return sum(len(w.node_refs) - 1 for w in self.ways.values())


def parse_osm(source: Union[bytes, str, IO]) -> RoadGraph:
    """Parse an OSM XML document into a RoadGraph.

    Ways without a "highway" tag are dropped, as are nodes nothing keeps
    referencing. A way referencing a missing node is dropped with a
    warning recorded on the graph; malformed XML raises
    MalformedDocument with the error line.
    """
    if hasattr(source, "read"):
        source = source.read()
    if isinstance(source, str):
        source = source.encode("utf-8")
    try:
        root = ET.fromstring(source)
    except ET.ParseError as exc:
        line = exc.position[0] if exc.position else None
        raise MalformedDocument(f"not well-formed XML: {exc.msg}", line=line) from exc

    raw_nodes: dict[int, tuple[float, float]] = {}
    graph = RoadGraph()

    for el in root:
        if el.tag == "node":
            try:
                raw_nodes[int(el.attrib["id"])] = (
                    float(el.attrib["lat"]),
                    float(el.attrib["lon"]),
                )
            except (KeyError, ValueError) as exc:
                raise MalformedDocument(f"bad node element: {exc}") from exc
        elif el.tag == "way":
            try:
                way_id = int(el.attrib["id"])
            except (KeyError, ValueError) as exc:
                raise MalformedDocument(f"bad way element: {exc}") from exc
            refs = []
            tags = {}
            for child in el:
                if child.tag == "nd":
                    refs.append(int(child.attrib["ref"]))
                elif child.tag == "tag":
                    tags[child.attrib.get("k", "")] = child.attrib.get("v", "")
            if "highway" not in tags:
                continue
            missing = [r for r in refs if r not in raw_nodes]
            if missing:
                graph.warnings.append(
                    f"way {way_id} references missing node(s) {missing}; dropped"
                )
                continue
            # Consecutive duplicate refs carry no geometry; collapse them.
            deduped: list[int] = []
            for r in refs:
                if not deduped or deduped[-1] != r:
                    deduped.append(r)
            if len(deduped) < 2:
                graph.warnings.append(f"way {way_id} has fewer than 2 distinct nodes; dropped")
                continue
            oneway_tag = tags.get("oneway", "no").lower()
            if oneway_tag == "-1":
                deduped.reverse()
                oneway = True
            else:
                oneway = oneway_tag in ONEWAY_TRUE
            graph.ways[way_id] = RoadWay(way_id, deduped, tags, oneway)

    for way in graph.ways.values():
        for ref in way.node_refs:
            if ref not in graph.nodes:
                lat, lon = raw_nodes[ref]
                graph.nodes[ref] = RoadNode(ref, lat, lon)

    rebuild_adjacency(graph)
    return graph


def merge_graphs(base: RoadGraph, incoming: RoadGraph) -> RoadGraph:
    """Combine two road graphs; incoming entries win on id collisions."""
    merged = RoadGraph(
        nodes={**base.nodes, **incoming.nodes},
        ways={**base.ways, **incoming.ways},
        warnings=base.warnings + incoming.warnings,
    )
    rebuild_adjacency(merged)
    return merged


def rebuild_adjacency(graph: RoadGraph) -> None:
    """Recompute adjacency (and segment lengths) from nodes and ways."""
    graph.adjacency = {node_id: [] for node_id in graph.nodes}
    for way in graph.ways.values():
        for a, b in zip(way.node_refs, way.node_refs[1:]):
            na, nb = graph.nodes[a], graph.nodes[b]
            length = haversine_m(na.lat, na.lon, nb.lat, nb.lon)
            graph.adjacency[a].append((b, way.osm_id, length))
            if not way.oneway:
                graph.adjacency[b].append((a, way.osm_id, length))


def load_into_store(graph: RoadGraph, store) -> tuple[int, int]:
    """Commit the road graph into the store as permanent-layer elements.

    Nodes become "road.node" contexts, ways become "road.way" contexts
    with their tags as static attributes, connected to their nodes by
    ordered "hasNode" relations. Idempotent: elements upsert by osm id.
    Returns (node count, way count).
    """
    with store.write_lock():
        node_ids: dict[int, int] = {}
        for osm_id in graph.nodes:
            node = graph.nodes[osm_id]
            eid = store.upsert_element(SceneElement(
                id=0,
                kind=ElementKind.Context,
                name=str(osm_id),
                semantic_type="road.node",
                layer=LdmLayer.L1_Static,
                static_attributes={"lat": node.lat, "lon": node.lon},
            ))
            node_ids[osm_id] = eid
        for osm_id in graph.ways:
            way = graph.ways[osm_id]
            attrs = {f"tag.{k}": v for k, v in way.tags.items()}
            attrs["oneway"] = way.oneway
            attrs["node_refs"] = list(way.node_refs)
            way_eid = store.upsert_element(SceneElement(
                id=0,
                kind=ElementKind.Context,
                name=str(osm_id),
                semantic_type="road.way",
                layer=LdmLayer.L1_Static,
                static_attributes=attrs,
            ))
            for ref in way.node_refs:
                store.add_relation(Relation(way_eid, "hasNode", node_ids[ref]))
    return (len(graph.nodes), len(graph.ways))


def next_nodes(graph: RoadGraph, from_id: int, heading: float, k: int) -> list[int]:
    """Breadth-first road nodes ahead of `from_id`.

    The expansion is seeded by the outgoing edge whose bearing deviates
    least from `heading` (ties to the lower node id) and follows
    adjacency from there, so oneway restrictions are respected. Returns
    up to k node ids in traversal order, never including from_id.
    """
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    if from_id not in graph.nodes:
        raise UnknownNode(f"node {from_id} not in road graph")
    origin = graph.nodes[from_id]
    outgoing = graph.adjacency.get(from_id, [])
    if not outgoing:
        return []

    def deviation(nbr: int) -> float:
        n = graph.nodes[nbr]
        return heading_delta_deg(bearing_deg(origin.lat, origin.lon, n.lat, n.lon), heading)

    seed = min((nbr for nbr, _, _ in outgoing), key=lambda n: (deviation(n), n))
    visited = {from_id, seed}
    queue = deque([seed])
    result: list[int] = []
    while queue and len(result) < k:
        node = queue.popleft()
        result.append(node)
        for nbr, _, _ in graph.adjacency.get(node, []):
            if nbr not in visited:
                visited.add(nbr)
                queue.append(nbr)
    return result


def map_match(
    graph: RoadGraph,
    lat: float,
    lon: float,
    *,
    threshold_m: float = MATCH_THRESHOLD_M,
    inflate_m: float = MATCH_INFLATE_M,
) -> Optional[MatchResult]:
    """Snap a position to the nearest road segment.

    Candidate ways are those whose inflated bounding box contains the
    position. Returns None when every segment is further than
    threshold_m. Near-ties (within 1e-9 m) resolve to the lower
    (way id, segment index).
    """
    candidates: list[tuple[float, int, int]] = []
    for way_id in graph.ways:
        if not graph.way_bbox(way_id).inflate_m(inflate_m).contains(lat, lon):
            continue
        way = graph.ways[way_id]
        for i, (a, b) in enumerate(zip(way.node_refs, way.node_refs[1:])):
            na, nb = graph.nodes[a], graph.nodes[b]
            ea = wgs84_to_enu(lat, lon, na.lat, na.lon, max_range_m=math.inf)
            eb = wgs84_to_enu(lat, lon, nb.lat, nb.lon, max_range_m=math.inf)
            proj = project_to_segment(EnuPoint(0.0, 0.0), ea, eb)
            if proj.distance_m <= threshold_m:
                candidates.append((proj.distance_m, way_id, i))
    if not candidates:
        return None
    dmin = min(d for d, _, _ in candidates)
    best = min(
        ((w, i, d) for d, w, i in candidates if d <= dmin + 1e-9),
        key=lambda t: (t[0], t[1]),
    )
    return MatchResult(best[0], best[1], best[2])
