"""Core scene data model: layers, elements, frames, poses, relations.

Everything here is a plain value type. Mutating operations return new
values; the store (ldm.store) owns all shared mutable state.

Attribute values are restricted to four kinds: boolean, number, text and
number-vector. An attribute name is either static (lives on the element)
or dynamic (lives in frame records) for a given element, never both.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Mapping, Optional, Union

from .errors import AttributeOverlap, TimestampRegression

# Microseconds since the Unix epoch. Arrival order is not assumed to be
# time order; only (frame_index, timestamp) consistency is enforced.
Timestamp = int

ElementId = int

AttrValue = Union[bool, int, float, str, list]


def now_us() -> Timestamp:
    """Current wall-clock time in microseconds since the epoch."""
    return time.time_ns() // 1000


class LdmLayer(Enum):
    """Dynamism layers, from permanent map data to fast-moving objects."""

    L1_Static = 1
    L2_QuasiStatic = 2
    L3_Transient = 3
    L4_Dynamic = 4


class ElementKind(Enum):
    Object = "object"
    Context = "context"


class FrameSource(Enum):
    LocalPerception = "local_perception"
    V2X = "v2x"
    Synthetic = "synthetic"


class StreamType(Enum):
    Camera = "camera"
    Lidar = "lidar"
    Gnss = "gnss"
    V2X = "v2x"
    Other = "other"


@dataclass
class GeoPose:
    """WGS84 position plus optional kinematics.

    Heading is degrees clockwise from true north, normalized into
    [0, 360) on construction (feeds commonly deliver wrapped values).
    Range violations on lat/lon/speed are reported by validation, not
    at construction time, so invalid input can still be inspected.
    """

    lat: float
    lon: float
    alt: float = 0.0
    heading: Optional[float] = None
    speed: Optional[float] = None

    def __post_init__(self):
        if self.heading is not None and math.isfinite(self.heading):
            self.heading = self.heading % 360.0

    def range_violations(self) -> list[str]:
        out = []
        if not (-90.0 <= self.lat <= 90.0):
            out.append(f"lat out of range: {self.lat}")
        if not (-180.0 <= self.lon < 180.0):
            out.append(f"lon out of range: {self.lon}")
        if self.speed is not None and self.speed < 0:
            out.append(f"speed negative: {self.speed}")
        return out


@dataclass
class FrameRecord:
    """Time-indexed snapshot of one element's dynamic state."""

    frame_index: int
    timestamp: Timestamp
    element_id: ElementId
    pose: Optional[GeoPose] = None
    dynamic_attributes: dict = field(default_factory=dict)
    source: FrameSource = FrameSource.LocalPerception


@dataclass
class SceneElement:
    """One scene entity: static descriptor plus per-frame dynamic records.

    frames maps frame_index -> FrameRecord. frame_span is derived: the
    half-open [min index, max index + 1), or None when purely static.
    """

    id: ElementId
    kind: ElementKind
    name: str
    semantic_type: str
    layer: LdmLayer
    static_attributes: dict = field(default_factory=dict)
    frames: Mapping[int, FrameRecord] = field(default_factory=dict)

    @property
    def frame_span(self) -> Optional[tuple[int, int]]:
        if not self.frames:
            return None
        lo = min(self.frames)
        hi = max(self.frames)
        return (lo, hi + 1)

    def dynamic_attribute_names(self) -> set[str]:
        names: set[str] = set()
        for rec in self.frames.values():
            names.update(rec.dynamic_attributes)
        return names


@dataclass
class Relation:
    """Directed predicate edge between two stored elements."""

    subject: ElementId
    predicate: str
    object: ElementId
    frame_span: Optional[tuple[int, int]] = None

    def key(self) -> tuple:
        return (self.subject, self.predicate, self.object, self.frame_span)


@dataclass
class StreamDescriptor:
    """A data source feeding the scene (sensor, receiver, ...)."""

    name: str
    stream_type: StreamType = StreamType.Other
    source_uri: str = ""


def validate_element(e: SceneElement) -> list[str]:
    """Check every SceneElement invariant; returns violation messages.

    Total function: an empty list means the element is valid.
    """
    violations: list[str] = []
    if e.id < 0:
        violations.append(f"id negative: {e.id}")
    if not e.name:
        violations.append("name empty")

    overlap = set(e.static_attributes) & e.dynamic_attribute_names()
    for name in sorted(overlap):
        violations.append(f"attribute overlap: {name}")

    prev_index = None
    prev_ts = None
    for idx in sorted(e.frames):
        rec = e.frames[idx]
        if rec.frame_index != idx:
            violations.append(f"frame key {idx} != record index {rec.frame_index}")
        if rec.frame_index < 0:
            violations.append(f"frame index negative: {rec.frame_index}")
        if rec.element_id != e.id:
            violations.append(f"frame {idx} element_id {rec.element_id} != {e.id}")
        if prev_index is not None and rec.timestamp <= prev_ts:
            violations.append(
                f"timestamp not increasing: frame {idx} at {rec.timestamp} "
                f"after frame {prev_index} at {prev_ts}"
            )
        if rec.pose is not None:
            violations.extend(rec.pose.range_violations())
        prev_index, prev_ts = idx, rec.timestamp
    return violations


def check_frame_monotonic(frames: Mapping[int, FrameRecord], rec: FrameRecord) -> None:
    """Raise TimestampRegression if inserting rec breaks (index, ts) order.

    A record replacing the same index is checked against its neighbors
    only. Shared by merge_dynamic and the store's in-place insert path.
    """
    for idx, other in frames.items():
        if idx == rec.frame_index:
            continue
        if idx < rec.frame_index and other.timestamp >= rec.timestamp:
            raise TimestampRegression(
                f"frame {rec.frame_index} at t={rec.timestamp} is not after "
                f"frame {idx} at t={other.timestamp}"
            )
        if idx > rec.frame_index and other.timestamp <= rec.timestamp:
            raise TimestampRegression(
                f"frame {rec.frame_index} at t={rec.timestamp} is not before "
                f"frame {idx} at t={other.timestamp}"
            )


def merge_dynamic(existing: SceneElement, rec: FrameRecord) -> SceneElement:
    """Return a copy of existing with rec merged in.

    Last-writer-wins on an existing frame index. Static attributes are
    untouched. Raises AttributeOverlap if rec introduces a dynamic name
    the element already holds statically, TimestampRegression if the
    record breaks time ordering, ValueError on element id mismatch.
    """
    if rec.element_id != existing.id:
        raise ValueError(f"record element_id {rec.element_id} != element {existing.id}")
    overlap = set(rec.dynamic_attributes) & set(existing.static_attributes)
    if overlap:
        raise AttributeOverlap(
            "attribute overlap: " + ", ".join(sorted(overlap))
        )
    check_frame_monotonic(existing.frames, rec)
    frames = dict(existing.frames)
    frames[rec.frame_index] = rec
    return replace(existing, frames=frames)
