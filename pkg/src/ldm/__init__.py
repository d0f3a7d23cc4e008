"""Embedded layered scene database (local dynamic map) for road traffic.

Fuses digital-map, on-board-perception and V2X data into one queryable,
geo-referenced scene model: a temporal property graph with per-layer
TTL eviction, OpenLABEL-style scene I/O, a CPM ingestion path, OSM road
graphs with map matching, geo-queries, archival export, and a socket /
replay feed.
"""

from .api import ExportCounts, LocalDynamicMap, ObjectReport
from .errors import LdmError
from .geo import EnuPoint, GeoBox
from .ingest import CommitCounts, CpmMessage, OpenLabelPayload, PerceivedObject
from .model import (
    ElementKind,
    FrameRecord,
    FrameSource,
    GeoPose,
    LdmLayer,
    Relation,
    SceneElement,
    StreamDescriptor,
    Timestamp,
    now_us,
)
from .roadnet import MatchResult, RoadGraph, RoadNode, RoadWay
from .store import LdmConfig, LdmStore, Snapshot, StoreStats

__version__ = "0.1.0"

__all__ = [
    "CommitCounts",
    "CpmMessage",
    "ElementKind",
    "EnuPoint",
    "ExportCounts",
    "FrameRecord",
    "FrameSource",
    "GeoBox",
    "GeoPose",
    "LdmConfig",
    "LdmError",
    "LdmLayer",
    "LdmStore",
    "LocalDynamicMap",
    "MatchResult",
    "ObjectReport",
    "OpenLabelPayload",
    "PerceivedObject",
    "Relation",
    "RoadGraph",
    "RoadNode",
    "RoadWay",
    "SceneElement",
    "Snapshot",
    "StoreStats",
    "StreamDescriptor",
    "Timestamp",
    "now_us",
]
