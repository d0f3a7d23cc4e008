"""Embedded temporal property-graph store.

One process, in memory: elements keyed by id, frame records indexed by
(element, frame index) with timestamps ascending alongside indices,
relations as deduplicated edges, layer-scoped TTL eviction, and
consistent point-in-time snapshots.

Locking contract: many concurrent readers or one writer. The lock is
writer-preferring and reentrant within a thread, so composite writers
(payload commits, eviction) can read while holding the write side.
"""

from __future__ import annotations

import math
import os
import threading
from bisect import bisect_left, bisect_right
from dataclasses import dataclass, field
from types import MappingProxyType
from typing import Optional

from .errors import (
    AttributeOverlap,
    InvalidConfig,
    InvalidElement,
    SinkError,
    UnknownElement,
)
from .geo import GeoBox
from .model import (
    ElementId,
    ElementKind,
    FrameRecord,
    LdmLayer,
    Relation,
    SceneElement,
    StreamDescriptor,
    Timestamp,
    check_frame_monotonic,
    now_us,
    validate_element,
)


def default_ttls() -> dict[LdmLayer, float]:
    """Per-layer record lifetime in seconds, mirroring the dynamism
    gradient: permanent map data down to 30 s for moving objects."""
    return {
        LdmLayer.L1_Static: math.inf,
        LdmLayer.L2_QuasiStatic: 24 * 3600.0,
        LdmLayer.L3_Transient: 600.0,
        LdmLayer.L4_Dynamic: 30.0,
    }


@dataclass
class LdmConfig:
    """Store behavior knobs; all durations are seconds."""

    ttl_per_layer: dict[LdmLayer, float] = field(default_factory=default_ttls)
    eviction_period: float = 1.0
    spatial_filter: Optional[GeoBox] = None
    archive_dir: Optional[str] = None
    max_frames_per_element: Optional[int] = None

    def ttl_us(self, layer: LdmLayer) -> float:
        ttl = self.ttl_per_layer.get(layer, math.inf)
        return ttl * 1e6


def validate_config(cfg: LdmConfig) -> None:
    """Raise InvalidConfig naming the offending field."""
    for layer in LdmLayer:
        ttl = cfg.ttl_per_layer.get(layer, math.inf)
        if not ttl > 0:
            raise InvalidConfig(f"ttl_per_layer[{layer.name}] must be > 0, got {ttl}")
    if not cfg.eviction_period > 0:
        raise InvalidConfig(f"eviction_period must be > 0, got {cfg.eviction_period}")
    finite = [t for t in cfg.ttl_per_layer.values() if math.isfinite(t)]
    if finite and cfg.eviction_period > min(finite):
        raise InvalidConfig(
            f"eviction_period {cfg.eviction_period} exceeds minimum finite TTL {min(finite)}"
        )
    if cfg.max_frames_per_element is not None and cfg.max_frames_per_element < 1:
        raise InvalidConfig(
            f"max_frames_per_element must be >= 1, got {cfg.max_frames_per_element}"
        )
    box = cfg.spatial_filter
    if box is not None:
        if box.min_lat > box.max_lat or box.min_lon > box.max_lon:
            raise InvalidConfig(f"spatial_filter box is inverted: {box}")
        if not (-90 <= box.min_lat and box.max_lat <= 90):
            raise InvalidConfig(f"spatial_filter latitude out of range: {box}")


@dataclass
class StoreStats:
    element_count_per_layer: dict[LdmLayer, int]
    frame_range: Optional[tuple[int, int]]
    relation_count: int
    last_update: Timestamp
    evicted_total: int
    frame_count: int = 0


@dataclass
class SnapshotEntry:
    element: SceneElement
    frame: Optional[FrameRecord]


@dataclass
class Snapshot:
    """State of the scene as of a timestamp: per element, the latest
    frame at or before `at` (None for purely static elements)."""

    at: Timestamp
    entries: list[SnapshotEntry]
    relations: list[Relation]


class RWLock:
    """Writer-preferring reader/writer lock, reentrant per thread.

    A thread holding the write side may take either side again; read
    holders must not upgrade to write (that would deadlock).
    """

    def __init__(self):
        self._cond = threading.Condition()
        self._readers = 0
        self._writer: Optional[int] = None
        self._depth = 0
        self._waiting_writers = 0

    def acquire_read(self):
        me = threading.get_ident()
        with self._cond:
            if self._writer == me:
                self._depth += 1
                return
            while self._writer is not None or self._waiting_writers:
                self._cond.wait()
            self._readers += 1

    def release_read(self):
        me = threading.get_ident()
        with self._cond:
            if self._writer == me:
                self._depth -= 1
                return
            self._readers -= 1
            if self._readers == 0:
                self._cond.notify_all()

    def acquire_write(self):
        me = threading.get_ident()
        with self._cond:
            if self._writer == me:
                self._depth += 1
                return
            self._waiting_writers += 1
            try:
                while self._writer is not None or self._readers:
                    self._cond.wait()
            finally:
                self._waiting_writers -= 1
            self._writer = me
            self._depth = 1

    def release_write(self):
        with self._cond:
            self._depth -= 1
            if self._depth == 0:
                self._writer = None
                self._cond.notify_all()

    class _Guard:
        def __init__(self, acquire, release):
            self._acquire = acquire
            self._release = release

        def __enter__(self):
            self._acquire()
            return self

        def __exit__(self, *exc):
            self._release()
            return False

    def read(self) -> "_Guard":
        return self._Guard(self.acquire_read, self.release_read)

    def write(self) -> "_Guard":
        return self._Guard(self.acquire_write, self.release_write)


class _Entry:
    """Mutable per-element storage: static descriptor, frame log and the
    parallel (index, timestamp) orderings used for time lookups."""

    __slots__ = (
        "element",
        "frames",
        "order_idx",
        "order_ts",
        "created_at",
        "latest_ts",
        "dynamic_names",
        "had_frames",
    )

    def __init__(self, element: SceneElement, created_at: Timestamp):
        self.frames: dict[int, FrameRecord] = {}
        # The public view shares the live frame dict, read-only.
        self.element = SceneElement(
            id=element.id,
            kind=element.kind,
            name=element.name,
            semantic_type=element.semantic_type,
            layer=element.layer,
            static_attributes=dict(element.static_attributes),
            frames=MappingProxyType(self.frames),
        )
        self.order_idx: list[int] = []
        self.order_ts: list[int] = []
        self.created_at = created_at
        self.latest_ts = created_at
        # Dynamic attribute names stay reserved for the element's
        # lifetime even if the frames carrying them are evicted.
        self.dynamic_names: set[str] = set()
        self.had_frames = False


class LdmStore:
    """The scene database. All public methods are thread-safe."""

    def __init__(self, config: Optional[LdmConfig] = None):
        self._lock = RWLock()
        self._config = config or LdmConfig()
        validate_config(self._config)
        self._entries: dict[ElementId, _Entry] = {}
        self._by_key: dict[tuple, ElementId] = {}
        self._relations: dict[tuple, Relation] = {}
        self._rels_by_element: dict[ElementId, set[tuple]] = {}
        self._streams: dict[str, StreamDescriptor] = {}
        self._coord_systems: dict[str, dict] = {}
        self._next_id = 0
        self._last_update: Timestamp = 0
        self._evicted_total = 0

    # -- locking helpers (exposed so composite writers stay atomic) --

    def read_lock(self):
        return self._lock.read()

    def write_lock(self):
        return self._lock.write()

    # -- configuration --

    @property
    def config(self) -> LdmConfig:
        return self._config

    def configure(self, cfg: LdmConfig) -> None:
        validate_config(cfg)
        with self._lock.write():
            self._config = cfg

    # -- element / frame / relation writes --

    def upsert_element(self, e: SceneElement) -> ElementId:
        """Insert or merge an element by its (kind, name, type) identity.

        Static attributes of an existing element are merged, new keys
        winning. Frames carried on the value are inserted through the
        normal frame path. Returns the element id.
        """
        violations = validate_element(e)
        if violations:
            raise InvalidElement(violations)
        with self._lock.write():
            key = (e.kind, e.name, e.semantic_type)
            eid = self._by_key.get(key)
            if eid is None:
                eid = self._next_id
                self._next_id += 1
                entry = _Entry(
                    SceneElement(eid, e.kind, e.name, e.semantic_type, e.layer,
                                 dict(e.static_attributes)),
                    created_at=self._last_update,
                )
                self._entries[eid] = entry
                self._by_key[key] = eid
            else:
                entry = self._entries[eid]
                if entry.element.layer is not e.layer:
                    raise InvalidElement(
                        [f"layer change for existing element '{e.name}': "
                         f"{entry.element.layer.name} -> {e.layer.name}"]
                    )
                overlap = set(e.static_attributes) & entry.dynamic_names
                if overlap:
                    raise InvalidElement(
                        [f"attribute overlap: {n}" for n in sorted(overlap)]
                    )
                entry.element.static_attributes.update(e.static_attributes)
            for idx in sorted(e.frames):
                rec = e.frames[idx]
                self._insert_frame_locked(entry, FrameRecord(
                    rec.frame_index, rec.timestamp, eid, rec.pose,
                    dict(rec.dynamic_attributes), rec.source,
                ))
            return eid

    def restore_element(self, e: SceneElement) -> ElementId:
        """Insert an element under its explicit id (state reload path).

        Unlike upsert_element the id on the value is authoritative;
        raises InvalidElement if the id or identity key is taken.
        """
        violations = validate_element(e)
        if violations:
            raise InvalidElement(violations)
        with self._lock.write():
            key = (e.kind, e.name, e.semantic_type)
            if e.id in self._entries or key in self._by_key:
                raise InvalidElement([f"element id {e.id} or key {key} already present"])
            entry = _Entry(
                SceneElement(e.id, e.kind, e.name, e.semantic_type, e.layer,
                             dict(e.static_attributes)),
                created_at=self._last_update,
            )
            self._entries[e.id] = entry
            self._by_key[key] = e.id
            self._next_id = max(self._next_id, e.id + 1)
            for idx in sorted(e.frames):
                rec = e.frames[idx]
                self._insert_frame_locked(entry, FrameRecord(
                    rec.frame_index, rec.timestamp, e.id, rec.pose,
                    dict(rec.dynamic_attributes), rec.source,
                ))
            return e.id

    def insert_frame(self, rec: FrameRecord) -> bool:
        """Insert or update one frame record.

        Returns False (storing nothing) when a spatial filter is set and
        the record's pose falls outside it; True otherwise.
        """
        with self._lock.write():
            entry = self._entries.get(rec.element_id)
            if entry is None:
                raise UnknownElement(f"element {rec.element_id} not in store")
            return self._insert_frame_locked(entry, rec)

    def _insert_frame_locked(self, entry: _Entry, rec: FrameRecord) -> bool:
        if rec.frame_index < 0:
            raise InvalidElement([f"frame index negative: {rec.frame_index}"])
        if rec.pose is not None:
            bad = rec.pose.range_violations()
            if bad:
                raise InvalidElement(bad)
        box = self._config.spatial_filter
        if box is not None and rec.pose is not None:
            if not box.contains(rec.pose.lat, rec.pose.lon):
                return False
        overlap = set(rec.dynamic_attributes) & set(entry.element.static_attributes)
        if overlap:
            raise AttributeOverlap("attribute overlap: " + ", ".join(sorted(overlap)))

        idx = rec.frame_index
        pos = bisect_left(entry.order_idx, idx)
        replacing = pos < len(entry.order_idx) and entry.order_idx[pos] == idx
        # Neighbor timestamps must bracket the new record.
        prev_pos = pos - 1
        next_pos = pos + 1 if replacing else pos
        if prev_pos >= 0 and entry.order_ts[prev_pos] >= rec.timestamp:
            check_frame_monotonic(entry.frames, rec)  # raises with detail
        if next_pos < len(entry.order_ts) and entry.order_ts[next_pos] <= rec.timestamp:
            check_frame_monotonic(entry.frames, rec)

        if replacing:
            entry.order_ts[pos] = rec.timestamp
        else:
            entry.order_idx.insert(pos, idx)
            entry.order_ts.insert(pos, rec.timestamp)
        entry.frames[idx] = rec
        entry.dynamic_names.update(rec.dynamic_attributes)
        entry.latest_ts = max(entry.latest_ts, rec.timestamp)
        entry.had_frames = True
        self._last_update = max(self._last_update, rec.timestamp)

        cap = self._config.max_frames_per_element
        if cap is not None:
            while len(entry.order_idx) > cap:
                dropped = entry.order_idx.pop(0)
                entry.order_ts.pop(0)
                del entry.frames[dropped]
                self._evicted_total += 1
        return True

    def add_relation(self, r: Relation) -> None:
        """Store a relation edge; an exact duplicate is a no-op."""
        with self._lock.write():
            for end in (r.subject, r.object):
                if end not in self._entries:
                    raise UnknownElement(f"relation endpoint {end} not in store")
            key = r.key()
            if key in self._relations:
                return
            self._relations[key] = r
            self._rels_by_element.setdefault(r.subject, set()).add(key)
            self._rels_by_element.setdefault(r.object, set()).add(key)

    def register_stream(self, stream: StreamDescriptor) -> None:
        with self._lock.write():
            self._streams[stream.name] = stream

    def register_coordinate_system(self, name: str, spec: dict) -> None:
        with self._lock.write():
            self._coord_systems[name] = spec

    # -- eviction --

    def evict_expired(self, now: Timestamp) -> int:
        """Drop every frame older than its layer TTL at `now`; drop
        finite-TTL elements left with no frames once they age out, along
        with their relations. Returns the number of frames removed.

        With archive_dir configured, the outgoing frames are written to
        a timestamped archive document first; a failing archive write
        aborts the eviction so nothing is lost.
        """
        with self._lock.write():
            expired_frames: dict[ElementId, list[FrameRecord]] = {}
            dead_elements: list[ElementId] = []
            for eid, entry in self._entries.items():
                ttl = self._config.ttl_us(entry.element.layer)
                if not math.isfinite(ttl):
                    continue
                cutoff = now - ttl
                pos = bisect_left(entry.order_ts, cutoff)
                if pos > 0:
                    expired_frames[eid] = [entry.frames[i] for i in entry.order_idx[:pos]]
                remaining = len(entry.order_idx) - pos
                if remaining == 0 and now - entry.latest_ts > ttl:
                    dead_elements.append(eid)

            if self._config.archive_dir and expired_frames:
                self._archive_locked(now, expired_frames)

            count = 0
            for eid, records in expired_frames.items():
                entry = self._entries[eid]
                n = len(records)
                del entry.order_idx[:n]
                del entry.order_ts[:n]
                for rec in records:
                    del entry.frames[rec.frame_index]
                count += n
            for eid in dead_elements:
                self._remove_element_locked(eid)
            self._evicted_total += count
            return count

    def _remove_element_locked(self, eid: ElementId) -> None:
        entry = self._entries.pop(eid)
        key = (entry.element.kind, entry.element.name, entry.element.semantic_type)
        self._by_key.pop(key, None)
        for rel_key in self._rels_by_element.pop(eid, set()):
            rel = self._relations.pop(rel_key, None)
            if rel is None:
                continue
            other = rel.object if rel.subject == eid else rel.subject
            peers = self._rels_by_element.get(other)
            if peers is not None:
                peers.discard(rel_key)
                if not peers:
                    del self._rels_by_element[other]

    def _archive_locked(self, now: Timestamp, expired: dict[ElementId, list[FrameRecord]]) -> None:
        # Imported here: ingest sits above the store in the layering.
        from .ingest import build_document, serialize_document

        elements = [self._entries[eid].element for eid in sorted(expired)]
        doc = build_document(
            elements,
            frames_for=lambda eid: expired.get(eid, []),
            relations=[],
            streams={},
            note=f"evicted at {now}",
        )
        path = os.path.join(self._config.archive_dir, f"evicted-{now}.json")
        try:
            os.makedirs(self._config.archive_dir, exist_ok=True)
            with open(path, "w", encoding="utf-8") as f:
                f.write(serialize_document(doc))
        except OSError as exc:
            raise SinkError(str(exc)) from exc

    # -- reads --

    def get_element(self, eid: ElementId) -> SceneElement:
        with self._lock.read():
            entry = self._entries.get(eid)
            if entry is None:
                raise UnknownElement(f"element {eid} not in store")
            return entry.element

    def find_element(self, kind: ElementKind, name: str, semantic_type: str) -> Optional[SceneElement]:
        with self._lock.read():
            eid = self._by_key.get((kind, name, semantic_type))
            return self._entries[eid].element if eid is not None else None

    def elements(self) -> list[SceneElement]:
        with self._lock.read():
            return [self._entries[eid].element for eid in sorted(self._entries)]

    def relations(self) -> list[Relation]:
        with self._lock.read():
            return list(self._relations.values())

    def streams(self) -> dict[str, StreamDescriptor]:
        with self._lock.read():
            return dict(self._streams)

    def coordinate_systems(self) -> dict[str, dict]:
        with self._lock.read():
            return dict(self._coord_systems)

    def element_dynamic_names(self, eid: ElementId) -> frozenset:
        """Dynamic attribute names the element has ever carried; the
        names stay reserved even after the frames holding them expire."""
        with self._lock.read():
            entry = self._entries.get(eid)
            if entry is None:
                raise UnknownElement(f"element {eid} not in store")
            return frozenset(entry.dynamic_names)

    def restore_meta(self, next_id: int, last_update: Timestamp, evicted_total: int) -> None:
        """Reinstate counters from a state dump (state reload path)."""
        with self._lock.write():
            self._next_id = max(self._next_id, next_id)
            self._last_update = max(self._last_update, last_update)
            self._evicted_total = evicted_total

    def query_frames(self, element_id: ElementId, start: Timestamp, end: Timestamp) -> list[FrameRecord]:
        """Frames of one element with start <= timestamp < end, ascending
        by frame index."""
        with self._lock.read():
            entry = self._entries.get(element_id)
            if entry is None:
                raise UnknownElement(f"element {element_id} not in store")
            lo = bisect_left(entry.order_ts, start)
            hi = bisect_left(entry.order_ts, end)
            return [entry.frames[i] for i in entry.order_idx[lo:hi]]

    def latest_frame(self, element_id: ElementId, at: Timestamp) -> Optional[FrameRecord]:
        """The element's most recent frame with timestamp <= at."""
        with self._lock.read():
            entry = self._entries.get(element_id)
            if entry is None:
                raise UnknownElement(f"element {element_id} not in store")
            pos = bisect_right(entry.order_ts, at)
            if pos == 0:
                return None
            return entry.frames[entry.order_idx[pos - 1]]

    def snapshot(self, at: Timestamp) -> Snapshot:
        with self._lock.read():
            entries = []
            for eid in sorted(self._entries):
                entry = self._entries[eid]
                pos = bisect_right(entry.order_ts, at)
                rec = entry.frames[entry.order_idx[pos - 1]] if pos else None
                entries.append(SnapshotEntry(entry.element, rec))
            return Snapshot(at, entries, list(self._relations.values()))

    def stats(self) -> StoreStats:
        with self._lock.read():
            per_layer: dict[LdmLayer, int] = {}
            lo = None
            hi = None
            frame_count = 0
            for entry in self._entries.values():
                layer = entry.element.layer
                per_layer[layer] = per_layer.get(layer, 0) + 1
                frame_count += len(entry.order_idx)
                if entry.order_idx:
                    first, last = entry.order_idx[0], entry.order_idx[-1]
                    lo = first if lo is None else min(lo, first)
                    hi = last if hi is None else max(hi, last)
            frame_range = None if lo is None else (lo, hi)
            return StoreStats(
                element_count_per_layer=per_layer,
                frame_range=frame_range,
                relation_count=len(self._relations),
                last_update=self._last_update,
                evicted_total=self._evicted_total,
                frame_count=frame_count,
            )


class EvictionTimer:
    """Background writer that runs evict_expired on a fixed cadence."""

    def __init__(self, store: LdmStore, period_s: Optional[float] = None):
        self._store = store
        self._period = period_s if period_s is not None else store.config.eviction_period
        self._stop = threading.Event()
        self._thread = threading.Thread(target=self._run, daemon=True)

    def start(self) -> "EvictionTimer":
        self._thread.start()
        return self

    def _run(self):
        while not self._stop.wait(self._period):
            self._store.evict_expired(now_us())

    def stop(self):
        self._stop.set()
        if self._thread.is_alive():
            self._thread.join(timeout=5.0)
