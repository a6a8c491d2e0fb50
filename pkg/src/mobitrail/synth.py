"""Synthetic event streams with planted homes.

Each user gets an independent PCG64 stream seeded with
``SeedSequence(seed, spawn_key=(user_index,))`` (identical to
``SeedSequence(seed).spawn(n)[user_index]``), so users can be generated in
any order or in parallel.  Within a user, draws happen in this order:

1. anchor choice (one uniform), home offset (two normals)
2. event count (one normal, lognormal transform)
3. trip count (one Poisson), then per trip: distance normal, bearing
   uniform, start-day uniform, length Poisson
4. session sizes (n Poissons; events fill sessions in order)
5. per session, each as one vector of length n of which only the first
   n_sessions entries are used: night flag uniform, trip-membership
   uniform, trip index integers, day uniform, second-of-day uniform
6. per event: offset within the session (n uniforms), scatter normals
   (n x 2)

A session is a burst of events at one place on one day (a photo walk, a
shopping run).  With ``burst_mean = 1`` every event is its own session.

Coordinates are rounded to 6 decimals (about 0.1 m).  Timestamps are UTC and
the night hours match the default 19:00-07:00 window at offset 0.
"""

from __future__ import annotations

import logging
import math
import sys
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Mapping

import numpy as np

from mobitrail.ingest import EventTable
from mobitrail.model import EARTH_RADIUS_KM, GeoPoint, RegionPartition

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

log = logging.getLogger(__name__)

KM_PER_DEG = EARTH_RADIUS_KM * math.pi / 180.0
SECONDS_PER_DAY = 86400

DEFAULT_ANCHORS = (
    (40.4, -3.7, 0.22),
    (41.4, 2.2, 0.18),
    (39.5, -0.4, 0.10),
    (37.2, -3.6, 0.08),
    (43.3, -2.9, 0.08),
    (41.6, -0.9, 0.07),
    (38.3, -0.5, 0.07),
    (42.8, -1.6, 0.05),
    (36.7, -4.4, 0.08),
    (43.5, 3.9, 0.07),
)
DEFAULT_TERRITORY = (35.0, -5.0, 45.0, 5.0)


class SynthError(Exception):
    pass


@dataclass(frozen=True)
class ProfileConfig:
    """Behaviour knobs for one synthetic cohort.

    Distances are km; ``trip_distance_mu``/``sigma`` and ``events_mu``/
    ``sigma`` parameterise lognormals (mu is the log of the median).
    """

    name: str = "custom"
    p_travel: float = 0.2
    trip_count_mean: float = 4.0
    trip_distance_mu: float = math.log(150.0)
    trip_distance_sigma: float = 1.0
    trip_days_mean: float = 3.0
    home_sigma_km: float = 3.0
    night_sigma_factor: float = 0.1
    night_home_bias: float = 0.9
    night_fraction: float = 0.35
    events_mu: float = math.log(40.0)
    events_sigma: float = 0.9
    min_events: int = 1
    window_days: int = 365
    start_epoch: int = 1420070400
    night_start_hour: int = 19
    night_end_hour: int = 7
    anchor_spread_km: float = 10.0
    burst_mean: float = 1.0
    burst_span_hours: float = 2.0
    anchors: tuple[tuple[float, float, float], ...] = DEFAULT_ANCHORS
    territory: tuple[float, float, float, float] = DEFAULT_TERRITORY

    def __post_init__(self):
        for name in ("p_travel", "night_home_bias", "night_fraction"):
            v = getattr(self, name)
            if not (0.0 <= v <= 1.0):
                raise ValueError(f"{name} must be in [0, 1], got {v}")
        if self.trip_distance_sigma <= 0 or self.events_sigma < 0:
            raise ValueError("lognormal sigmas must be positive")
        # zero scatter is allowed: it plants every home-area event on the home point
        for name in ("home_sigma_km", "anchor_spread_km", "night_sigma_factor", "trip_count_mean"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if self.burst_mean < 1 or self.burst_span_hours < 0:
            raise ValueError("burst_mean must be >= 1 and burst_span_hours >= 0")
        if self.trip_days_mean < 1:
            raise ValueError("trip_days_mean must be >= 1")
        if self.window_days < 1 or self.min_events < 1:
            raise ValueError("window_days and min_events must be >= 1")
        if not self.anchors or any(a[2] < 0 for a in self.anchors) or sum(a[2] for a in self.anchors) <= 0:
            raise ValueError("anchors need non-negative weights with a positive sum")
        t = self.territory
        if not (t[0] < t[2] and t[1] < t[3]):
            raise ValueError("territory must be [min_lat, min_lon, max_lat, max_lon]")
        if self.night_start_hour == self.night_end_hour:
            raise ValueError("night window start and end must differ")

    @property
    def day_trip_probability(self) -> float:
        """Trip probability for day events so that the overall rate is ``p_travel``."""
        away_at_night = self.night_fraction * (1.0 - self.night_home_bias)
        if self.night_fraction >= 1.0:
            return 0.0
        return min(1.0, max(0.0, (self.p_travel - away_at_night) / (1.0 - self.night_fraction)))

    def to_dict(self) -> dict:
        out = {}
        for f in fields(self):
            v = getattr(self, f.name)
            out[f.name] = [list(a) for a in v] if f.name == "anchors" else list(v) if f.name == "territory" else v
        return out


def _profile_from_mapping(data: Mapping) -> ProfileConfig:
    known = {f.name for f in fields(ProfileConfig)}
    unknown = set(data) - known
    if unknown:
        raise ValueError(f"unknown profile keys: {sorted(unknown)}")
    kw = dict(data)
    if "anchors" in kw:
        kw["anchors"] = tuple(tuple(float(x) for x in a) for a in kw["anchors"])
        if any(len(a) != 3 for a in kw["anchors"]):
            raise ValueError("each anchor is [lat, lon, weight]")
    if "territory" in kw:
        kw["territory"] = tuple(float(x) for x in kw["territory"])
    return ProfileConfig(**kw)


def load_profile(path_or_name: str | Path) -> ProfileConfig:
    """Load a profile from a TOML file, or return a built-in one by name."""
    if str(path_or_name) in PROFILES:
        return PROFILES[str(path_or_name)]
    with open(path_or_name, "rb") as fh:
        data = tomllib.load(fh)
    data.setdefault("name", Path(path_or_name).stem)
    return _profile_from_mapping(data)


TRANSACTION_LIKE = ProfileConfig(
    name="transaction",
    p_travel=0.2,
    trip_count_mean=4.0,
    trip_distance_mu=math.log(150.0),
    home_sigma_km=3.0,
    night_home_bias=0.9,
    events_mu=math.log(40.0),
    events_sigma=0.9,
)
PHOTO_LIKE = ProfileConfig(
    name="photo",
    p_travel=0.6,
    trip_count_mean=6.0,
    trip_distance_mu=math.log(300.0),
    home_sigma_km=3.0,
    night_home_bias=0.6,
    events_mu=math.log(30.0),
    events_sigma=1.1,
    burst_mean=6.0,
)
PROFILES = {"transaction": TRANSACTION_LIKE, "photo": PHOTO_LIKE}


@dataclass
class GroundTruth:
    homes: dict[str, tuple[GeoPoint, int]] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.homes)

    def region_of(self, user_id: str) -> int:
        return self.homes[user_id][1]

    def write_csv(self, fh) -> None:
        fh.write("user_id,home_lat,home_lon,home_region_id\n")
        for u in sorted(self.homes):
            pt, r = self.homes[u]
            fh.write(f"{u},{pt.lat_deg!r},{pt.lon_deg!r},{r}\n")


def user_rng(seed: int, index: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(index,))))


def _displace(lat, lon, dn_km, de_km):
    lat2 = lat + dn_km / KM_PER_DEG
    coslat = np.maximum(np.cos(np.radians(lat)), 1e-6)
    return lat2, lon + de_km / (KM_PER_DEG * coslat)


def _clip(lat, lon, territory):
    t = territory
    return np.clip(lat, t[0], t[2] - 1e-6), np.clip(lon, t[1], t[3] - 1e-6)


def _night_span(start: int, end: int) -> tuple[int, int]:
    """(first second of night, night length in seconds)."""
    length = ((end - start) % 24) * 3600
    return start * 3600, length


def _one_user(profile: ProfileConfig, rng: np.random.Generator, cum_w: np.ndarray):
    p = profile
    t = p.territory
    # 1. home
    a = int(np.searchsorted(cum_w, rng.random() * cum_w[-1], side="right"))
    a = min(a, len(p.anchors) - 1)
    off = rng.normal(size=2) * p.anchor_spread_km
    hlat, hlon = _displace(np.float64(p.anchors[a][0]), np.float64(p.anchors[a][1]), off[0], off[1])
    hlat, hlon = _clip(hlat, hlon, t)
    hlat, hlon = round(float(hlat), 6), round(float(hlon), 6)
    # 2. event count
    n = max(p.min_events, int(round(math.exp(p.events_mu + p.events_sigma * rng.normal()))))
    # 3. trips
    k = int(rng.poisson(p.trip_count_mean))
    # a travelling user has somewhere to go; a non-travelling cohort has no trips at all
    k = max(k, 1) if p.p_travel > 0 else 0
    if k:
        dist = np.exp(p.trip_distance_mu + p.trip_distance_sigma * rng.normal(size=k))
        bearing = rng.random(k) * 2.0 * math.pi
        trip_start = rng.integers(0, p.window_days, size=k)
        trip_len = 1 + rng.poisson(p.trip_days_mean - 1.0, size=k)
        tlat, tlon = _displace(np.full(k, hlat), np.full(k, hlon), dist * np.cos(bearing), dist * np.sin(bearing))
        tlat, tlon = _clip(tlat, tlon, t)
    # 4. sessions
    sizes = 1 + rng.poisson(p.burst_mean - 1.0, size=n)
    session = np.searchsorted(np.cumsum(sizes), np.arange(n), side="right")
    # 5. per-session draws, broadcast to events
    night = (rng.random(n) < p.night_fraction)[session]
    u = rng.random(n)[session]
    trip_idx = rng.integers(0, max(k, 1), size=n)[session]
    r_day = rng.random(n)[session]
    r_sec = rng.random(n)[session]
    # 6. per-event draws
    r_off = rng.random(n)
    scatter = rng.normal(size=(n, 2))
    if k:
        on_trip = np.where(night, u < (1.0 - p.night_home_bias), u < p.day_trip_probability)
    else:
        on_trip = np.zeros(n, dtype=bool)
    day = np.floor(r_day * p.window_days).astype(np.int64)
    if k:
        tday = trip_start[trip_idx] + np.floor(r_day * trip_len[trip_idx]).astype(np.int64)
        day = np.where(on_trip, np.minimum(tday, p.window_days - 1), day)
    n0, nlen = _night_span(p.night_start_hour, p.night_end_hour)
    d0, dlen = p.night_end_hour * 3600, SECONDS_PER_DAY - nlen
    # the burst offset is folded into the session's own day or night slot
    span = p.burst_span_hours * 3600.0
    off = np.floor(r_off * np.minimum(span, np.where(night, nlen, dlen))).astype(np.int64)
    sec = np.where(
        night,
        (n0 + (np.floor(r_sec * nlen).astype(np.int64) + off) % nlen) % SECONDS_PER_DAY,
        (d0 + (np.floor(r_sec * dlen).astype(np.int64) + off) % dlen) % SECONDS_PER_DAY,
    )
    ts = p.start_epoch + day * SECONDS_PER_DAY + sec
    sigma = np.where(night & ~on_trip, p.home_sigma_km * p.night_sigma_factor, p.home_sigma_km)
    base_lat = np.full(n, hlat)
    base_lon = np.full(n, hlon)
    if k:
        base_lat = np.where(on_trip, tlat[trip_idx], base_lat)
        base_lon = np.where(on_trip, tlon[trip_idx], base_lon)
    lat, lon = _displace(base_lat, base_lon, scatter[:, 0] * sigma, scatter[:, 1] * sigma)
    lat, lon = _clip(lat, lon, t)
    return (hlat, hlon), ts, np.round(lat, 6), np.round(lon, 6)


def generate(
    profile: ProfileConfig,
    n_users: int,
    partition: RegionPartition,
    seed: int,
    strict: bool = True,
) -> tuple[EventTable, GroundTruth]:
    """Generate ``n_users`` users; deterministic in (profile, n_users, seed).

    With ``strict`` a point outside ``partition`` raises :class:`SynthError`;
    otherwise such events are dropped (and an uncovered home raises anyway,
    since the ground truth would be undefined).
    """
    if n_users < 1:
        raise ValueError("n_users must be >= 1")
    width = max(6, len(str(n_users - 1)))
    cum_w = np.cumsum([a[2] for a in profile.anchors])
    users = [f"u{k:0{width}d}" for k in range(n_users)]
    homes = np.zeros((n_users, 2))
    parts_ts, parts_lat, parts_lon, counts = [], [], [], []
    for k in range(n_users):
        (hlat, hlon), ts, lat, lon = _one_user(profile, user_rng(seed, k), cum_w)
        homes[k] = hlat, hlon
        parts_ts.append(ts)
        parts_lat.append(lat)
        parts_lon.append(lon)
        counts.append(ts.shape[0])
    ts = np.concatenate(parts_ts)
    lat = np.concatenate(parts_lat)
    lon = np.concatenate(parts_lon)
    codes = np.repeat(np.arange(n_users, dtype=np.int32), counts)

    home_region = partition.assign(homes[:, 0], homes[:, 1])
    if (home_region < 0).any():
        k = int(np.flatnonzero(home_region < 0)[0])
        raise SynthError(f"partition does not cover home of {users[k]} at {tuple(homes[k])}")
    covered = partition.assign(lat, lon) >= 0
    if not covered.all():
        if strict:
            i = int(np.flatnonzero(~covered)[0])
            raise SynthError(f"partition does not cover generated point ({lat[i]}, {lon[i]})")
        log.warning("dropping %d generated events outside the partition", int((~covered).sum()))
        codes, ts, lat, lon = codes[covered], ts[covered], lat[covered], lon[covered]
    truth = GroundTruth(
        {u: (GeoPoint(float(homes[k, 0]), float(homes[k, 1])), int(home_region[k])) for k, u in enumerate(users)}
    )
    return EventTable(users, codes, ts, lat, lon), truth


def with_overrides(profile: ProfileConfig, **kw) -> ProfileConfig:
    return replace(profile, **kw)
