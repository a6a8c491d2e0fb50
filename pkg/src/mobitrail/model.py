"""Core value types: points, events, traces and region partitions."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from mobitrail import _backend

EARTH_RADIUS_KM = 6371.0
DEG2RAD = math.pi / 180.0
NO_REGION = -1


@dataclass(frozen=True, order=True)
class GeoPoint:
    lat_deg: float
    lon_deg: float

    def __post_init__(self):
        lat, lon = float(self.lat_deg), float(self.lon_deg)
        if not (-90.0 <= lat <= 90.0) or math.isnan(lat):
            raise ValueError(f"latitude out of range: {self.lat_deg!r}")
        # 180 is accepted and treated as -180 by the grid partition
        if not (-180.0 <= lon <= 180.0) or math.isnan(lon):
            raise ValueError(f"longitude out of range: {self.lon_deg!r}")
        object.__setattr__(self, "lat_deg", lat + 0.0)
        object.__setattr__(self, "lon_deg", lon + 0.0)


@dataclass(frozen=True)
class Event:
    user_id: str
    timestamp: int
    point: GeoPoint
    region_id: int | None = None

    def __post_init__(self):
        if self.timestamp < 0:
            raise ValueError(f"negative timestamp: {self.timestamp}")
        if self.region_id is not None and self.region_id < 0:
            raise ValueError(f"negative region id: {self.region_id}")

    def sort_key(self) -> tuple:
        region = NO_REGION if self.region_id is None else self.region_id
        return (self.timestamp, region, self.point.lat_deg, self.point.lon_deg)

    def with_region(self, region_id: int | None) -> "Event":
        return Event(self.user_id, self.timestamp, self.point, region_id)


@dataclass(frozen=True)
class UserTrace:
    """All events of one user in canonical order.

    Events are sorted on construction by (timestamp, region_id, lat, lon), so
    every downstream argmax and summation sees the same order regardless of
    how the events arrived.
    """

    user_id: str
    events: tuple[Event, ...]

    def __post_init__(self):
        events = tuple(sorted(self.events, key=Event.sort_key))
        if not events:
            raise ValueError("a trace needs at least one event")
        for ev in events:
            if ev.user_id != self.user_id:
                raise ValueError(f"event of user {ev.user_id!r} in trace of {self.user_id!r}")
        object.__setattr__(self, "events", events)

    def __len__(self) -> int:
        return len(self.events)

    def columns(self) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        """Return (timestamps, lats, lons, region_ids) arrays; missing regions are -1."""
        ts = np.array([e.timestamp for e in self.events], dtype=np.int64)
        lat = np.array([e.point.lat_deg for e in self.events], dtype=np.float64)
        lon = np.array([e.point.lon_deg for e in self.events], dtype=np.float64)
        region = np.array(
            [NO_REGION if e.region_id is None else e.region_id for e in self.events],
            dtype=np.int64,
        )
        return ts, lat, lon, region


def haversine_km(a: GeoPoint, b: GeoPoint) -> float:
    """Great-circle distance on a sphere of radius 6371 km."""
    return float(
        haversine_array(
            np.array([a.lat_deg]), np.array([a.lon_deg]), np.array([b.lat_deg]), np.array([b.lon_deg])
        )[0]
    )


def haversine_array(lat1, lon1, lat2, lon2) -> np.ndarray:
    """Element-wise haversine distance in km for broadcastable degree arrays."""
    p1 = np.asarray(lat1, dtype=np.float64) * DEG2RAD
    p2 = np.asarray(lat2, dtype=np.float64) * DEG2RAD
    dphi = p2 - p1
    dlmb = (np.asarray(lon2, dtype=np.float64) - np.asarray(lon1, dtype=np.float64)) * DEG2RAD
    s1 = np.sin(dphi * 0.5)
    s2 = np.sin(dlmb * 0.5)
    h = s1 * s1 + (np.cos(p1) * np.cos(p2)) * (s2 * s2)
    h = np.clip(h, 0.0, 1.0)
    return 2.0 * EARTH_RADIUS_KM * np.arcsin(np.sqrt(h))


# --------------------------------------------------------------------------
# Region partitions


@dataclass(frozen=True)
class RegionMeta:
    name: str
    country_code: str | None


class RegionPartition:
    """Deterministic mapping from coordinates to integer region ids."""

    kind: str

    def assign(self, lat, lon, threads: int = 1) -> np.ndarray:
        """Vectorised assignment; returns int64 ids with -1 for points outside coverage."""
        raise NotImplementedError

    def meta(self, region_id: int) -> RegionMeta:
        raise NotImplementedError

    def country_of(self, region_id: int | None) -> str | None:
        if region_id is None:
            return None
        try:
            return self.meta(region_id).country_code
        except KeyError:
            return None

    def is_valid(self, region_id: int) -> bool:
        raise NotImplementedError

    def describe(self) -> str:
        raise NotImplementedError


def assign_region(p: RegionPartition, pt: GeoPoint) -> int | None:
    rid = int(p.assign(np.array([pt.lat_deg]), np.array([pt.lon_deg]))[0])
    return None if rid == NO_REGION else rid


class GridPartition(RegionPartition):
    """Regular lat/lon grid anchored at (0, 0).

    A point falls in cell ``(floor(lat / size), floor(lon / size))``.  Cells
    are numbered row-major from the south-west corner of the globe so ids are
    non-negative integers.
    """

    kind = "grid"

    def __init__(self, cell_size_deg: float):
        size = float(cell_size_deg)
        if not (size > 0.0) or math.isinf(size):
            raise ValueError(f"grid cell size must be positive, got {cell_size_deg!r}")
        self.cell_size_deg = size
        self.row_min = math.floor(-90.0 / size)
        self.row_max = math.floor(90.0 / size)
        self.col_min = math.floor(-180.0 / size)
        self.col_max = math.ceil(180.0 / size) - 1
        self.n_cols = self.col_max - self.col_min + 1
        self.n_rows = self.row_max - self.row_min + 1

    def __eq__(self, other):
        return isinstance(other, GridPartition) and other.cell_size_deg == self.cell_size_deg

    def __hash__(self):
        return hash(("grid", self.cell_size_deg))

    def __repr__(self):
        return f"GridPartition({self.cell_size_deg!r})"

    def describe(self) -> str:
        return f"grid:{self.cell_size_deg!r}"

    def cell_of_point(self, lat: float, lon: float) -> tuple[int, int]:
        rid = int(self.assign(np.array([lat]), np.array([lon]))[0])
        return self.cell_of(rid)

    def region_id_for_cell(self, row: int, col: int) -> int:
        if not (self.row_min <= row <= self.row_max and self.col_min <= col <= self.col_max):
            raise KeyError((row, col))
        return (row - self.row_min) * self.n_cols + (col - self.col_min)

    def cell_of(self, region_id: int) -> tuple[int, int]:
        if not self.is_valid(region_id):
            raise KeyError(region_id)
        r, c = divmod(int(region_id), self.n_cols)
        return r + self.row_min, c + self.col_min

    def cell_center(self, region_id: int) -> GeoPoint:
        row, col = self.cell_of(region_id)
        s = self.cell_size_deg
        lat = min(max((row + 0.5) * s, -90.0), 90.0)
        lon = (col + 0.5) * s
        if lon >= 180.0:
            lon = math.nextafter(180.0, 0.0)
        return GeoPoint(lat, lon)

    def assign(self, lat, lon, threads: int = 1) -> np.ndarray:
        lat = np.asarray(lat, dtype=np.float64)
        lon = np.asarray(lon, dtype=np.float64)
        lon = np.where(lon == 180.0, -180.0, lon)
        rows = np.floor(lat / self.cell_size_deg)
        cols = np.floor(lon / self.cell_size_deg)
        ok = (lat >= -90.0) & (lat <= 90.0) & (lon >= -180.0) & (lon < 180.0)
        rows = np.clip(rows, self.row_min, self.row_max)
        cols = np.clip(cols, self.col_min, self.col_max)
        ids = (rows.astype(np.int64) - self.row_min) * self.n_cols + (cols.astype(np.int64) - self.col_min)
        return np.where(ok, ids, NO_REGION).astype(np.int64)

    def is_valid(self, region_id: int) -> bool:
        return 0 <= int(region_id) < self.n_rows * self.n_cols

    def meta(self, region_id: int) -> RegionMeta:
        row, col = self.cell_of(region_id)
        return RegionMeta(name=f"cell({row},{col})", country_code=None)


@dataclass(frozen=True)
class Region:
    region_id: int
    name: str
    country_code: str | None
    bbox: tuple[float, float, float, float]  # min_lat, min_lon, max_lat, max_lon
    ring: tuple[tuple[float, float], ...] | None = None  # (lat, lon) vertices; None = rectangle

    @property
    def is_rect(self) -> bool:
        return self.ring is None


@dataclass
class LookupIndex:
    """Flat arrays handed to the lookup kernel."""

    region_ids: np.ndarray
    bbox: np.ndarray  # (n, 4)
    is_rect: np.ndarray  # uint8
    ring_offsets: np.ndarray  # int64, n + 1
    ring_lat: np.ndarray
    ring_lon: np.ndarray
    grid_lat0: float
    grid_lon0: float
    grid_cell: float
    grid_rows: int
    grid_cols: int
    cell_offsets: np.ndarray  # int64, rows * cols + 1
    cell_regions: np.ndarray  # int64 indices into region arrays, ascending


class LookupPartition(RegionPartition):
    """Regions given by rectangles or simple polygons, first match by ascending id.

    Rectangles are half-open ``[min, max)`` on both axes so that tiles sharing
    an edge never both claim a point.  Polygons use the even-odd rule after a
    closed bounding-box test.
    """

    kind = "lookup"

    def __init__(self, regions: Iterable[Region], source: str | None = None):
        regions = sorted(regions, key=lambda r: r.region_id)
        ids = [r.region_id for r in regions]
        if len(set(ids)) != len(ids):
            raise ValueError("duplicate region_id in lookup partition")
        if any(i < 0 for i in ids):
            raise ValueError("region ids must be non-negative")
        if not regions:
            raise ValueError("lookup partition needs at least one region")
        self.regions: tuple[Region, ...] = tuple(regions)
        self._by_id = {r.region_id: r for r in regions}
        self.source = source
        self.index = self._build_index()

    def __repr__(self):
        return f"LookupPartition({len(self.regions)} regions)"

    def describe(self) -> str:
        return f"lookup:{self.source}" if self.source else f"lookup:<{len(self.regions)} regions>"

    @classmethod
    def from_jsonl(cls, path: str | Path) -> "LookupPartition":
        regions = []
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, 1):
                line = line.strip()
                if not line:
                    continue
                try:
                    regions.append(region_from_record(json.loads(line)))
                except (ValueError, KeyError, TypeError) as exc:
                    raise ValueError(f"{path}:{lineno}: bad region record: {exc}") from exc
        return cls(regions, source=str(path))

    def _build_index(self) -> LookupIndex:
        n = len(self.regions)
        bbox = np.array([r.bbox for r in self.regions], dtype=np.float64).reshape(n, 4)
        is_rect = np.array([r.is_rect for r in self.regions], dtype=np.uint8)
        offs = [0]
        rlat: list[float] = []
        rlon: list[float] = []
        for r in self.regions:
            if r.ring is not None:
                rlat.extend(p[0] for p in r.ring)
                rlon.extend(p[1] for p in r.ring)
            offs.append(len(rlat))
        lat0, lon0 = bbox[:, 0].min(), bbox[:, 1].min()
        lat1, lon1 = bbox[:, 2].max(), bbox[:, 3].max()
        extent = max(lat1 - lat0, lon1 - lon0, 1e-9)
        # roughly a few regions per cell
        cells_per_axis = int(min(256, max(1, math.ceil(math.sqrt(n) * 2))))
        cell = extent / cells_per_axis
        rows = max(1, int(math.floor((lat1 - lat0) / cell)) + 1)
        cols = max(1, int(math.floor((lon1 - lon0) / cell)) + 1)
        buckets: list[list[int]] = [[] for _ in range(rows * cols)]
        for k in range(n):
            r0 = int(math.floor((bbox[k, 0] - lat0) / cell))
            r1 = min(rows - 1, int(math.floor((bbox[k, 2] - lat0) / cell)))
            c0 = int(math.floor((bbox[k, 1] - lon0) / cell))
            c1 = min(cols - 1, int(math.floor((bbox[k, 3] - lon0) / cell)))
            for rr in range(max(r0, 0), r1 + 1):
                for cc in range(max(c0, 0), c1 + 1):
                    buckets[rr * cols + cc].append(k)
        cell_offsets = np.zeros(rows * cols + 1, dtype=np.int64)
        cell_offsets[1:] = np.cumsum([len(b) for b in buckets])
        flat = [k for b in buckets for k in b]
        return LookupIndex(
            region_ids=np.array([r.region_id for r in self.regions], dtype=np.int64),
            bbox=np.ascontiguousarray(bbox),
            is_rect=is_rect,
            ring_offsets=np.array(offs, dtype=np.int64),
            ring_lat=np.array(rlat, dtype=np.float64),
            ring_lon=np.array(rlon, dtype=np.float64),
            grid_lat0=float(lat0),
            grid_lon0=float(lon0),
            grid_cell=float(cell),
            grid_rows=rows,
            grid_cols=cols,
            cell_offsets=cell_offsets,
            cell_regions=np.array(flat, dtype=np.int64),
        )

    def assign(self, lat, lon, threads: int = 1) -> np.ndarray:
        lat = np.ascontiguousarray(lat, dtype=np.float64)
        lon = np.ascontiguousarray(lon, dtype=np.float64)
        return _backend.kernels().lookup_assign(lat, lon, self.index, threads)

    def is_valid(self, region_id: int) -> bool:
        return int(region_id) in self._by_id

    def meta(self, region_id: int) -> RegionMeta:
        r = self._by_id[int(region_id)]
        return RegionMeta(r.name, r.country_code)


def region_from_record(rec: Mapping) -> Region:
    rid = int(rec["region_id"])
    name = str(rec.get("name", rid))
    cc = rec.get("country_code")
    cc = None if cc in (None, "") else str(cc).upper()
    if "polygon" in rec and rec["polygon"] is not None:
        ring = tuple((float(p[0]), float(p[1])) for p in rec["polygon"])
        if len(ring) > 1 and ring[0] == ring[-1]:
            ring = ring[:-1]
        if len(ring) < 3:
            raise ValueError("polygon ring needs at least 3 vertices")
        lats = [p[0] for p in ring]
        lons = [p[1] for p in ring]
        bbox = (min(lats), min(lons), max(lats), max(lons))
        return Region(rid, name, cc, bbox, ring)
    if "bbox" in rec:
        b = tuple(float(x) for x in rec["bbox"])
        if len(b) != 4 or not (b[0] < b[2] and b[1] < b[3]):
            raise ValueError("bbox must be [min_lat, min_lon, max_lat, max_lon] with min < max")
        return Region(rid, name, cc, b, None)
    raise ValueError("record needs 'bbox' or 'polygon'")


def parse_partition_spec(spec: str) -> RegionPartition:
    """Build a partition from ``grid:<deg>`` or ``lookup:<file>``."""
    kind, _, arg = spec.partition(":")
    if kind == "grid":
        try:
            return GridPartition(float(arg))
        except ValueError as exc:
            raise ValueError(f"bad grid partition spec {spec!r}: {exc}") from None
    if kind == "lookup":
        if arg == "provinces":
            return bundled_provinces()
        return LookupPartition.from_jsonl(arg)
    raise ValueError(f"unknown partition spec {spec!r}; expected grid:SIZE or lookup:FILE")


def bundled_provinces() -> LookupPartition:
    """The province-like fixture covering the synthetic territory."""
    p = LookupPartition.from_jsonl(Path(__file__).with_name("data") / "provinces.jsonl")
    p.source = "provinces"
    return p


def points_valid(lat: np.ndarray, lon: np.ndarray) -> np.ndarray:
    return (lat >= -90.0) & (lat <= 90.0) & (lon >= -180.0) & (lon <= 180.0)


def traces_from_events(events: Sequence[Event]) -> list[UserTrace]:
    by_user: dict[str, list[Event]] = {}
    for ev in events:
        by_user.setdefault(ev.user_id, []).append(ev)
    return [UserTrace(u, tuple(evs)) for u, evs in sorted(by_user.items())]
