"""The five home-location rules and the country consensus check.

Per region, each method scores:

1. number of events
2. number of active days (distinct local dates)
3. seconds between first and last event
4. number of night events
5. number of active nights (a night belongs to the date it started on)

The region with the highest score wins; ties go to the region visited
first, then to the smaller region id, and are flagged.
"""

from __future__ import annotations

import csv
import enum
from dataclasses import dataclass
from typing import Iterator, Mapping, Sequence

import numpy as np

from mobitrail import _backend
from mobitrail.ingest import TraceSet, group_traces
from mobitrail.model import RegionPartition, UserTrace

SECONDS_PER_DAY = 86400
HOME_CSV_FIELDS = ["user_id", "method", "region_id", "score", "tied"]


class MethodId(enum.IntEnum):
    EVENTS = 1
    ACTIVE_DAYS = 2
    TIMESPAN = 3
    NIGHT_EVENTS = 4
    NIGHT_DAYS = 5


METHODS = tuple(MethodId)


@dataclass(frozen=True)
class NightWindow:
    start_hour: int = 19
    end_hour: int = 7
    utc_offset_minutes: int = 0

    def __post_init__(self):
        for h in (self.start_hour, self.end_hour):
            if not (0 <= h < 24):
                raise ValueError(f"night hours must be in [0, 24), got {h}")
        if self.start_hour == self.end_hour:
            raise ValueError("night window start and end must differ")

    @classmethod
    def parse(cls, text: str, utc_offset_minutes: int = 0) -> "NightWindow":
        """``"19-7"`` -> NightWindow(19, 7)."""
        try:
            a, b = text.split("-")
            return cls(int(a), int(b), utc_offset_minutes)
        except ValueError as exc:
            raise ValueError(f"bad night window {text!r}: expected START-END hours") from exc

    @property
    def offset_seconds(self) -> int:
        return self.utc_offset_minutes * 60


def is_night(timestamp: int, w: NightWindow) -> bool:
    """Night is ``[start, end)`` in local time, wrapping past midnight when start > end."""
    h = ((timestamp + w.offset_seconds) % SECONDS_PER_DAY) // 3600
    if w.start_hour > w.end_hour:
        return h >= w.start_hour or h < w.end_hour
    return w.start_hour <= h < w.end_hour


@dataclass(frozen=True)
class HomeAssignment:
    user_id: str
    method: MethodId
    region_id: int | None
    score: int
    tied: bool


@dataclass
class HomeTable:
    """Winners for many users: row per user, column per method."""

    user_ids: list[str]
    region: np.ndarray  # (n, 5) int64, -1 = none
    score: np.ndarray  # (n, 5) int64
    tied: np.ndarray  # (n, 5) uint8

    def __len__(self) -> int:
        return len(self.user_ids)

    def assignments(self, k: int) -> tuple[HomeAssignment, ...]:
        uid = self.user_ids[k]
        return tuple(
            HomeAssignment(
                uid,
                m,
                None if self.region[k, j] < 0 else int(self.region[k, j]),
                int(self.score[k, j]),
                bool(self.tied[k, j]),
            )
            for j, m in enumerate(METHODS)
        )

    def __iter__(self) -> Iterator[tuple[HomeAssignment, ...]]:
        for k in range(len(self)):
            yield self.assignments(k)

    def as_dict(self) -> dict[str, tuple[HomeAssignment, ...]]:
        return {u: self.assignments(k) for k, u in enumerate(self.user_ids)}

    def complete(self) -> np.ndarray:
        """Mask of users with a region under every method."""
        return (self.region >= 0).all(axis=1)

    def subset(self, keep) -> "HomeTable":
        keep = np.asarray(keep)
        idx = np.flatnonzero(keep) if keep.dtype == bool else keep.astype(np.int64)
        return HomeTable([self.user_ids[i] for i in idx], self.region[idx], self.score[idx], self.tied[idx])

    def write_csv(self, fh) -> None:
        fh.write(",".join(HOME_CSV_FIELDS) + "\n")
        reg = self.region.tolist()
        sc = self.score.tolist()
        ti = self.tied.tolist()
        for k, u in enumerate(self.user_ids):
            uq = _quote(u)
            for j in range(5):
                r = reg[k][j]
                fh.write(f"{uq},{j + 1},{'' if r < 0 else r},{sc[k][j]},{ti[k][j]}\n")

    @classmethod
    def read_csv(cls, fh) -> "HomeTable":
        """Inverse of :meth:`write_csv`; every user needs exactly five rows."""
        rows = csv.reader(fh)
        header = next(rows, None)
        if header != HOME_CSV_FIELDS:
            raise ValueError(f"bad home assignment header {header!r}")
        got: dict[str, dict[int, HomeAssignment]] = {}
        for lineno, row in enumerate(rows, 2):
            if not row:
                continue
            try:
                u, m, r, sc, ti = row
                m = MethodId(int(m))
                a = HomeAssignment(u, m, int(r) if r else None, int(sc), ti == "1")
            except ValueError as exc:
                raise ValueError(f"line {lineno}: {exc}") from None
            per = got.setdefault(u, {})
            if m in per:
                raise ValueError(f"line {lineno}: duplicate method {int(m)} for user {u!r}")
            per[m] = a
        for u, per in got.items():
            if len(per) != 5:
                raise ValueError(f"user {u!r} has {len(per)} of 5 method rows")
        return cls.from_assignments({u: tuple(per[m] for m in METHODS) for u, per in got.items()})

    @classmethod
    def from_assignments(cls, rows: Mapping[str, Sequence[HomeAssignment]]) -> "HomeTable":
        users = sorted(rows)
        n = len(users)
        region = np.full((n, 5), -1, dtype=np.int64)
        score = np.zeros((n, 5), dtype=np.int64)
        tied = np.zeros((n, 5), dtype=np.uint8)
        for k, u in enumerate(users):
            for a in rows[u]:
                j = int(a.method) - 1
                region[k, j] = -1 if a.region_id is None else a.region_id
                score[k, j] = a.score
                tied[k, j] = a.tied
        return cls(users, region, score, tied)


def _quote(u: str) -> str:
    if any(c in u for c in ',"\r\n'):
        return '"' + u.replace('"', '""') + '"'
    return u


def detect_homes(traces, w: NightWindow = NightWindow(), threads: int = 1) -> HomeTable:
    """All five methods for every trace in one pass."""
    traces = group_traces(traces)
    if traces.total_events and (traces.region < 0).any():
        raise ValueError("home detection needs region ids on every event; prune first")
    region, score, tied = _backend.kernels().home_stats(
        traces.offsets, traces.ts, traces.region, w.offset_seconds, w.start_hour, w.end_hour, threads
    )
    return HomeTable(list(traces.user_ids), region, score, tied)


def _single(t: UserTrace) -> TraceSet:
    ts, lat, lon, region = t.columns()
    return TraceSet([t.user_id], np.array([0, len(ts)], dtype=np.int64), ts, lat, lon, region)


def detect_all(t: UserTrace, w: NightWindow = NightWindow()) -> tuple[HomeAssignment, ...]:
    return detect_homes(_single(t), w).assignments(0)


def detect_home(t: UserTrace, m: MethodId | int, w: NightWindow = NightWindow()) -> HomeAssignment:
    return detect_all(t, w)[MethodId(m) - 1]


def consensus_country(assignments: Sequence[HomeAssignment], p: RegionPartition) -> str | None:
    """Country shared by all five methods, or None if any differs or is missing."""
    if len(assignments) != 5:
        raise ValueError(f"expected five assignments, got {len(assignments)}")
    countries = set()
    for a in assignments:
        if a.region_id is None:
            return None
        cc = p.country_of(a.region_id)
        if cc is None:
            return None
        countries.add(cc)
    return countries.pop() if len(countries) == 1 else None


def consensus_countries(homes: HomeTable, p: RegionPartition) -> dict[str, str | None]:
    cache: dict[int, str | None] = {}

    def country(r: int) -> str | None:
        if r not in cache:
            cache[r] = p.country_of(r) if r >= 0 else None
        return cache[r]

    out = {}
    for k, u in enumerate(homes.user_ids):
        cs = {country(r) for r in homes.region[k].tolist()}
        out[u] = cs.pop() if len(cs) == 1 else None
    return out
