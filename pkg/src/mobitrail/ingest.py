"""Reading raw event logs and the prune / group / filter pipeline.

Events are held column-wise (:class:`EventTable`, :class:`TraceSet`) so the
whole pipeline runs on numpy arrays; both classes also behave as sequences
of :class:`~mobitrail.model.Event` / :class:`~mobitrail.model.UserTrace`.
"""

from __future__ import annotations

import contextlib
import io
import json
import logging
import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import IO, Iterable, Iterator, Mapping, Sequence

import numpy as np

from mobitrail import _backend
from mobitrail._rows import (
    RowError,
    iter_lines,
    looks_like_unix,
    parse_iso_ts,
    parse_unix_ts,
    split_csv_line,
)
from mobitrail.model import NO_REGION, Event, GeoPoint, GridPartition, RegionPartition, UserTrace

log = logging.getLogger(__name__)

CSV_FIELDS = ["user_id", "timestamp", "lat", "lon"]
CSV_HEADER = "user_id,timestamp,lat,lon,region_id\n"
_ERRORS_LOGGED_AT_WARNING = 20
_WRITE_CHUNK = 1 << 20


class IngestError(Exception):
    """Fatal ingest problem: unreadable stream or missing header."""


@dataclass
class IngestReport:
    total_lines: int = 0
    parsed: int = 0
    parse_errors: int = 0
    pruned_unresolvable: int = 0
    users_in: int = 0
    users_after_filter: int = 0

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class FilterPolicy:
    min_events: int = 0
    above_average: bool = False
    consensus_country: str | None = None

    def __post_init__(self):
        if self.min_events < 0:
            raise ValueError("min_events must be >= 0")


# --------------------------------------------------------------------------
# Columnar containers


class EventTable(Sequence[Event]):
    """Events in arrival order; ``user`` holds indices into ``users``."""

    def __init__(self, users, user, ts, lat, lon, region=None):
        self.users: list[str] = list(users)
        self.user = np.ascontiguousarray(user, dtype=np.int32)
        self.ts = np.ascontiguousarray(ts, dtype=np.int64)
        self.lat = np.ascontiguousarray(lat, dtype=np.float64) + 0.0
        self.lon = np.ascontiguousarray(lon, dtype=np.float64) + 0.0
        if region is None:
            region = np.full(self.ts.shape[0], NO_REGION, dtype=np.int64)
        self.region = np.ascontiguousarray(region, dtype=np.int64)
        n = self.ts.shape[0]
        if not (self.user.shape[0] == self.lat.shape[0] == self.lon.shape[0] == self.region.shape[0] == n):
            raise ValueError("column lengths differ")

    @classmethod
    def empty(cls) -> "EventTable":
        return cls([], [], [], [], [], [])

    @classmethod
    def from_events(cls, events: Iterable[Event]) -> "EventTable":
        if isinstance(events, EventTable):
            return events
        codes: dict[str, int] = {}
        users: list[str] = []
        cols: tuple[list, ...] = ([], [], [], [], [])
        for ev in events:
            code = codes.get(ev.user_id)
            if code is None:
                code = codes[ev.user_id] = len(users)
                users.append(ev.user_id)
            cols[0].append(code)
            cols[1].append(ev.timestamp)
            cols[2].append(ev.point.lat_deg)
            cols[3].append(ev.point.lon_deg)
            cols[4].append(NO_REGION if ev.region_id is None else ev.region_id)
        return cls(users, *cols)

    def __len__(self) -> int:
        return int(self.ts.shape[0])

    def __getitem__(self, i):
        if isinstance(i, slice):
            return [self[k] for k in range(*i.indices(len(self)))]
        region = int(self.region[i])
        return Event(
            self.users[self.user[i]],
            int(self.ts[i]),
            GeoPoint(float(self.lat[i]), float(self.lon[i])),
            None if region == NO_REGION else region,
        )

    def take(self, idx) -> "EventTable":
        return EventTable(self.users, self.user[idx], self.ts[idx], self.lat[idx], self.lon[idx], self.region[idx])

    def with_region(self, region: np.ndarray) -> "EventTable":
        return EventTable(self.users, self.user, self.ts, self.lat, self.lon, region)


class TraceSet(Sequence[UserTrace]):
    """Per-user traces in canonical order, stored as one CSR-style block.

    Users are sorted by ``user_id``; events of user ``k`` occupy rows
    ``offsets[k]:offsets[k + 1]`` sorted by (timestamp, region, lat, lon).
    """

    def __init__(self, user_ids, offsets, ts, lat, lon, region):
        self.user_ids: list[str] = list(user_ids)
        self.offsets = np.ascontiguousarray(offsets, dtype=np.int64)
        self.ts = np.ascontiguousarray(ts, dtype=np.int64)
        self.lat = np.ascontiguousarray(lat, dtype=np.float64)
        self.lon = np.ascontiguousarray(lon, dtype=np.float64)
        self.region = np.ascontiguousarray(region, dtype=np.int64)
        self._index: dict[str, int] | None = None

    @classmethod
    def from_traces(cls, traces: Iterable[UserTrace]) -> "TraceSet":
        return group_traces([ev for t in traces for ev in t.events])

    def __len__(self) -> int:
        return len(self.user_ids)

    def __getitem__(self, k):
        if isinstance(k, slice):
            return [self[i] for i in range(*k.indices(len(self)))]
        if k < 0:
            k += len(self)
        lo, hi = self.offsets[k], self.offsets[k + 1]
        uid = self.user_ids[k]
        events = tuple(
            Event(uid, int(t), GeoPoint(float(a), float(b)), None if r == NO_REGION else int(r))
            for t, a, b, r in zip(self.ts[lo:hi], self.lat[lo:hi], self.lon[lo:hi], self.region[lo:hi])
        )
        return UserTrace(uid, events)

    def __iter__(self) -> Iterator[UserTrace]:
        for k in range(len(self)):
            yield self[k]

    def index_of(self, user_id: str) -> int:
        if self._index is None:
            self._index = {u: i for i, u in enumerate(self.user_ids)}
        return self._index[user_id]

    def get(self, user_id: str) -> UserTrace:
        return self[self.index_of(user_id)]

    @property
    def n_events(self) -> np.ndarray:
        return np.diff(self.offsets)

    @property
    def total_events(self) -> int:
        return int(self.offsets[-1]) if len(self.offsets) else 0

    def subset(self, keep) -> "TraceSet":
        """Traces selected by a boolean mask or ascending index array."""
        keep = np.asarray(keep)
        idx = np.flatnonzero(keep) if keep.dtype == bool else keep.astype(np.int64)
        counts = self.n_events[idx]
        offsets = np.zeros(idx.shape[0] + 1, dtype=np.int64)
        np.cumsum(counts, out=offsets[1:])
        rows = _ranges(self.offsets[idx], counts)
        return TraceSet(
            [self.user_ids[i] for i in idx],
            offsets,
            self.ts[rows],
            self.lat[rows],
            self.lon[rows],
            self.region[rows],
        )

    def user_codes(self) -> np.ndarray:
        return np.repeat(np.arange(len(self), dtype=np.int32), self.n_events)

    def to_event_table(self) -> EventTable:
        return EventTable(self.user_ids, self.user_codes(), self.ts, self.lat, self.lon, self.region)

    def same_as(self, other: "TraceSet") -> bool:
        return (
            self.user_ids == other.user_ids
            and np.array_equal(self.offsets, other.offsets)
            and np.array_equal(self.ts, other.ts)
            and np.array_equal(self.lat, other.lat)
            and np.array_equal(self.lon, other.lon)
            and np.array_equal(self.region, other.region)
        )


def _ranges(starts: np.ndarray, counts: np.ndarray) -> np.ndarray:
    """Concatenate ``arange(s, s + c)`` for each pair, vectorised."""
    total = int(counts.sum())
    if total == 0:
        return np.zeros(0, dtype=np.int64)
    ends = np.cumsum(counts)
    base = np.repeat(starts - (ends - counts), counts)
    return base + np.arange(total, dtype=np.int64)


# --------------------------------------------------------------------------
# Parsing


class _Prefixed(io.RawIOBase):
    """Binary reader that replays already-consumed bytes first."""

    def __init__(self, prefix: bytes, f):
        self._prefix = prefix
        self._f = f

    def readable(self):
        return True

    def read(self, n=-1):
        if self._prefix:
            if n is None or n < 0:
                out, self._prefix = self._prefix + self._f.read(), b""
                return out
            out, self._prefix = self._prefix[:n], self._prefix[n:]
            return out
        return self._f.read(n)


class _TextAsBinary(io.RawIOBase):
    def __init__(self, f):
        self._f = f

    def readable(self):
        return True

    def read(self, n=-1):
        return self._f.read(n).encode("utf-8")


@contextlib.contextmanager
def _open_binary(stream):
    if isinstance(stream, (str, Path)):
        try:
            fh = open(stream, "rb")
        except OSError as exc:
            raise IngestError(f"cannot read {stream}: {exc.strerror or exc}") from exc
        with fh:
            yield fh
        return
    if not hasattr(stream, "read"):
        raise IngestError(f"not a readable stream: {stream!r}")
    if isinstance(stream, io.TextIOBase) or isinstance(stream.read(0), str):
        yield _TextAsBinary(stream)
    else:
        yield stream


def _error_logger(report: IngestReport):
    def on_error(lineno: int, reason: str):
        level = logging.WARNING if report.parse_errors < _ERRORS_LOGGED_AT_WARNING else logging.DEBUG
        report.parse_errors += 1
        log.log(level, "line %d skipped: %s", lineno, reason)

    return on_error


def parse_events(stream, format: str = "csv") -> tuple[EventTable, IngestReport]:
    """Read events from a path or file object.

    Malformed lines are logged with their line number and skipped.  Raises
    :class:`IngestError` only when the stream cannot be read or a CSV
    header is missing.
    """
    if format not in ("csv", "jsonl"):
        raise ValueError(f"unknown format {format!r}")
    try:
        with _open_binary(stream) as f:
            if format == "csv":
                table, report = _parse_csv(f)
            else:
                table, report = _parse_jsonl(f)
    except OSError as exc:
        raise IngestError(f"read failed: {exc}") from exc
    if report.parse_errors > _ERRORS_LOGGED_AT_WARNING:
        log.warning("%d malformed lines skipped in total", report.parse_errors)
    return table, report


def _parse_csv(f) -> tuple[EventTable, IngestReport]:
    head = b""
    while b"\n" not in head:
        block = f.read(1 << 16)
        if not block:
            break
        head += block
    if not head.strip():
        raise IngestError("missing header: stream is empty")
    header, _, rest = head.partition(b"\n")
    names = [c.strip() for c in header.lstrip(b"\xef\xbb\xbf").rstrip(b"\r").decode("utf-8", "replace").split(",")]
    if names == CSV_FIELDS:
        has_region = False
    elif names == CSV_FIELDS + ["region_id"]:
        has_region = True
    else:
        raise IngestError(f"missing or invalid header: expected {','.join(CSV_FIELDS)}[,region_id], got {header[:80]!r}")

    # timestamp format is decided once per file from the first data line
    while True:
        first = next((ln for ln in rest.split(b"\n")[:-1] if ln.strip(b"\r")), None)
        if first is not None:
            break
        block = f.read(1 << 16)
        if not block:
            first = rest.strip(b"\r\n") or None
            break
        rest += block
    ts_parser = parse_unix_ts
    if first is not None:
        try:
            fields = split_csv_line(first.rstrip(b"\r"))
        except RowError:
            fields = []
        if len(fields) > 1 and not looks_like_unix(fields[1]):
            try:
                parse_iso_ts(fields[1])
                ts_parser = parse_iso_ts
            except RowError:
                pass
    log.debug("csv: region column=%s, timestamps=%s", has_region, "unix" if ts_parser is parse_unix_ts else "iso")

    report = IngestReport()
    kernels = _backend.kernels()
    users, codes, ts, lat, lon, region, total, _ = kernels.parse_csv_body(
        _Prefixed(rest, f), has_region, 2, _error_logger(report), ts_parser
    )
    report.total_lines = total
    report.parsed = total - report.parse_errors
    return EventTable(users, codes, ts, lat, lon, region), report


def _json_number(v, lo, hi, what):
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise RowError(f"{what} must be a number")
    v = float(v)
    if not math.isfinite(v) or v < lo or v > hi:
        raise RowError(f"{what} out of range")
    return v + 0.0


def _parse_jsonl(f) -> tuple[EventTable, IngestReport]:
    report = IngestReport()
    on_error = _error_logger(report)
    codes: dict[str, int] = {}
    users: list[str] = []
    cols: tuple[list, ...] = ([], [], [], [], [])
    iso: bool | None = None
    lineno = 0
    for line in iter_lines(f):
        lineno += 1
        if not line.strip():
            continue
        report.total_lines += 1
        try:
            try:
                rec = json.loads(line)
            except (ValueError, UnicodeDecodeError):
                raise RowError("invalid JSON") from None
            if not isinstance(rec, dict):
                raise RowError("record is not an object")
            uid = rec.get("user_id")
            if isinstance(uid, bool) or not isinstance(uid, (str, int)) or uid == "":
                raise RowError("missing user_id")
            uid = str(uid)
            if "\n" in uid or "\r" in uid:
                raise RowError("user_id contains a line break")
            raw_ts = rec.get("timestamp")
            if iso is None:
                iso = isinstance(raw_ts, str) and not raw_ts.isdigit()
            if isinstance(raw_ts, bool):
                raise RowError("bad timestamp")
            if isinstance(raw_ts, int) and not iso:
                if raw_ts < 0:
                    raise RowError("negative timestamp")
                ts = raw_ts
            elif isinstance(raw_ts, str):
                ts = (parse_iso_ts if iso else parse_unix_ts)(raw_ts.encode("utf-8"))
            else:
                raise RowError("bad timestamp")
            lat = _json_number(rec.get("lat"), -90.0, 90.0, "lat")
            lon = _json_number(rec.get("lon"), -180.0, 180.0, "lon")
            reg = rec.get("region_id")
            if reg is None:
                reg = NO_REGION
            elif isinstance(reg, bool) or not isinstance(reg, int) or reg < 0:
                raise RowError("bad region_id")
        except RowError as exc:
            on_error(lineno, str(exc))
            continue
        code = codes.get(uid)
        if code is None:
            code = codes[uid] = len(users)
            users.append(uid)
        for col, v in zip(cols, (code, ts, lat, lon, reg)):
            col.append(v)
    report.parsed = report.total_lines - report.parse_errors
    return EventTable(users, *cols), report


# --------------------------------------------------------------------------
# Pipeline steps


def prune(events, p: RegionPartition, threads: int = 1) -> tuple[EventTable, int]:
    """Attach region ids and drop events the partition cannot resolve.

    Events that already carry a region id keep it when the partition knows
    that id; otherwise the id is computed from the coordinates.
    """
    table = EventTable.from_events(events)
    region = table.region.copy()
    have = region != NO_REGION
    if have.any():
        region[have & ~valid_region_mask(p, region)] = NO_REGION - 1
    todo = np.flatnonzero(region == NO_REGION)
    if todo.size:
        region[todo] = p.assign(table.lat[todo], table.lon[todo], threads=threads)
    keep = region >= 0
    dropped = int(keep.size - np.count_nonzero(keep))
    if dropped == 0:
        return table.with_region(region), 0
    idx = np.flatnonzero(keep)
    return EventTable(table.users, table.user[idx], table.ts[idx], table.lat[idx], table.lon[idx], region[idx]), dropped


def valid_region_mask(p: RegionPartition, region: np.ndarray) -> np.ndarray:
    if isinstance(p, GridPartition):
        return (region >= 0) & (region < p.n_rows * p.n_cols)
    return np.isin(region, p.index.region_ids)


def group_traces(events) -> TraceSet:
    """Split events into per-user traces in canonical order."""
    if isinstance(events, TraceSet):
        return events
    table = EventTable.from_events(events)
    n = len(table)
    present = np.bincount(table.user, minlength=len(table.users)) > 0 if n else np.zeros(len(table.users), bool)
    present_codes = np.flatnonzero(present)
    names = [table.users[c] for c in present_codes]
    by_name = sorted(range(len(names)), key=names.__getitem__)
    rank = np.full(len(table.users), -1, dtype=np.int64)
    rank[present_codes[by_name]] = np.arange(len(names), dtype=np.int64)
    user_ids = [names[i] for i in by_name]
    if n == 0:
        return TraceSet(user_ids, np.zeros(1, np.int64), [], [], [], [])

    r = rank[table.user]
    ts = table.ts
    t0 = int(ts.min())
    if int(ts.max()) - t0 < (1 << 32) and len(user_ids) < (1 << 30):
        key = (r << 32) | (ts - t0)
        order = np.argsort(key, kind="stable")
        sk = key[order]
        dup = sk[1:] == sk[:-1]
        if dup.any():
            # only rows sharing (user, timestamp) need the remaining keys
            m = np.zeros(n, dtype=bool)
            m[1:] |= dup
            m[:-1] |= dup
            pos = np.flatnonzero(m)
            sub = order[pos]
            sub_order = np.lexsort((table.lon[sub], table.lat[sub], table.region[sub], key[sub]))
            order[pos] = sub[sub_order]
    else:
        order = np.lexsort((table.lon, table.lat, table.region, ts, r))
    counts = np.bincount(r, minlength=len(user_ids))
    offsets = np.zeros(len(user_ids) + 1, dtype=np.int64)
    np.cumsum(counts, out=offsets[1:])
    return TraceSet(user_ids, offsets, ts[order], table.lat[order], table.lon[order], table.region[order])


def apply_filter(traces: TraceSet, policy: FilterPolicy, homes: Mapping[str, str | None] | None = None) -> TraceSet:
    """Keep traces satisfying every clause of ``policy``.

    The above-average clause compares against the mean event count of the
    traces passed in, computed once.  The consensus clause needs ``homes``,
    a map from user id to consensus country (see
    :func:`mobitrail.homedetect.consensus_countries`).
    """
    traces = group_traces(traces)
    if policy.consensus_country is not None and homes is None:
        raise ValueError("consensus_country filter requires per-user consensus homes")
    counts = traces.n_events
    keep = counts >= policy.min_events
    if policy.above_average and len(traces):
        keep &= counts > counts.mean()
    if policy.consensus_country is not None:
        want = policy.consensus_country.upper()
        keep &= np.array([homes.get(u) == want for u in traces.user_ids], dtype=bool)
    if keep.all():
        return traces
    return traces.subset(keep)


# --------------------------------------------------------------------------
# Output


def _csv_user(u: str) -> str:
    if any(c in u for c in ',"\r\n'):
        return '"' + u.replace('"', '""') + '"'
    return u


def write_events_csv(events, out: IO[bytes] | str | Path) -> None:
    """Write events (canonically ordered when given a TraceSet) with region ids."""
    if isinstance(events, TraceSet):
        users, codes = events.user_ids, events.user_codes()
        ts, lat, lon, region = events.ts, events.lat, events.lon, events.region
    else:
        t = EventTable.from_events(events)
        users, codes, ts, lat, lon, region = t.users, t.user, t.ts, t.lat, t.lon, t.region
    encoded = [_csv_user(u).encode("utf-8") for u in users]
    blob = b"".join(encoded)
    uoff = np.zeros(len(encoded) + 1, dtype=np.int64)
    np.cumsum([len(e) for e in encoded], out=uoff[1:])
    kernels = _backend.kernels()
    with _open_out(out) as fh:
        fh.write(CSV_HEADER.encode())
        for lo in range(0, len(ts), _WRITE_CHUNK):
            hi = lo + _WRITE_CHUNK
            fh.write(
                kernels.format_events_csv(
                    blob,
                    uoff,
                    np.ascontiguousarray(codes[lo:hi], dtype=np.int32),
                    np.ascontiguousarray(ts[lo:hi]),
                    np.ascontiguousarray(lat[lo:hi]),
                    np.ascontiguousarray(lon[lo:hi]),
                    np.ascontiguousarray(region[lo:hi]),
                )
            )


@contextlib.contextmanager
def _open_out(out):
    if isinstance(out, (str, Path)):
        with open(out, "wb") as fh:
            yield fh
    elif isinstance(out, io.TextIOBase):
        yield out.buffer
    else:
        yield out


def write_report_json(report: IngestReport, path: str | Path) -> None:
    Path(path).write_text(json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n")
