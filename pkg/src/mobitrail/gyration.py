"""Centre of mass, radius of gyration and their distribution summaries."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Iterator, Sequence

import numpy as np

from mobitrail import _backend
from mobitrail.ingest import TraceSet, group_traces
from mobitrail.model import GeoPoint, UserTrace

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class GyrationResult:
    user_id: str
    center_of_mass: GeoPoint
    r_g_km: float
    n_events: int


@dataclass(frozen=True)
class EcdfSeries:
    sorted_values: tuple[float, ...]
    cumulative_fraction: tuple[float, ...]

    def at(self, x: float) -> float:
        """H(x): fraction of observations <= x."""
        k = np.searchsorted(self.sorted_values, x, side="right")
        return 0.0 if k == 0 else self.cumulative_fraction[k - 1]


@dataclass(frozen=True)
class BoxplotStats:
    q1: float
    median: float
    q3: float
    whisker_low: float
    whisker_high: float
    mean: float

    def to_dict(self) -> dict:
        return {
            "q1": self.q1,
            "median": self.median,
            "q3": self.q3,
            "whisker_low": self.whisker_low,
            "whisker_high": self.whisker_high,
            "mean": self.mean,
        }


@dataclass
class GyrationTable:
    """Per-user results for a whole trace set, column-wise."""

    user_ids: list[str]
    com_lat: np.ndarray
    com_lon: np.ndarray
    r_g_km: np.ndarray
    n_events: np.ndarray

    def __len__(self) -> int:
        return len(self.user_ids)

    def __iter__(self) -> Iterator[GyrationResult]:
        for i, u in enumerate(self.user_ids):
            yield GyrationResult(
                u, GeoPoint(float(self.com_lat[i]), float(self.com_lon[i])), float(self.r_g_km[i]), int(self.n_events[i])
            )

    def write_csv(self, fh) -> None:
        fh.write("user_id,com_lat,com_lon,r_g_km,n_events\n")
        for u, la, lo, rg, n in zip(
            self.user_ids, self.com_lat.tolist(), self.com_lon.tolist(), self.r_g_km.tolist(), self.n_events.tolist()
        ):
            fh.write(f"{_quote(u)},{la!r},{lo!r},{rg!r},{n}\n")


def _quote(u: str) -> str:
    if any(c in u for c in ',"\r\n'):
        return '"' + u.replace('"', '""') + '"'
    return u


def gyration_table(traces, threads: int = 1) -> GyrationTable:
    traces = group_traces(traces)
    com_lat, com_lon, rg, degenerate = _backend.kernels().gyration(traces.offsets, traces.lat, traces.lon, threads)
    if degenerate.any():
        for k in np.flatnonzero(degenerate)[:20]:
            log.warning("user %s: antipodal mass, centre of mass falls back to first event", traces.user_ids[k])
    return GyrationTable(list(traces.user_ids), com_lat, com_lon, rg, traces.n_events.copy())


def _single(trace: UserTrace) -> TraceSet:
    ts, lat, lon, region = trace.columns()
    return TraceSet([trace.user_id], np.array([0, len(ts)], dtype=np.int64), ts, lat, lon, region)


def center_of_mass(t: UserTrace) -> GeoPoint:
    """Spherical centroid: mean of per-event unit vectors, projected back.

    Each event counts once.  A trace whose events all share one point
    returns that point exactly.
    """
    tab = gyration_table(_single(t))
    return GeoPoint(float(tab.com_lat[0]), float(tab.com_lon[0]))


def radius_of_gyration(t: UserTrace) -> float:
    """RMS haversine distance (km) of the events from their centre of mass."""
    return float(gyration_table(_single(t)).r_g_km[0])


def ecdf(values: Sequence[float]) -> EcdfSeries:
    v = np.asarray(values, dtype=np.float64)
    if v.size == 0:
        raise ValueError("ecdf of empty data")
    uniq, counts = np.unique(v, return_counts=True)
    frac = np.cumsum(counts) / v.size
    frac[-1] = 1.0
    return EcdfSeries(tuple(uniq.tolist()), tuple(frac.tolist()))


def boxplot_stats(values: Sequence[float]) -> BoxplotStats:
    """Quartiles by linear interpolation (type 7), Tukey whiskers at 1.5 IQR."""
    v = np.sort(np.asarray(values, dtype=np.float64))
    if v.size == 0:
        raise ValueError("boxplot of empty data")
    q1, med, q3 = np.quantile(v, [0.25, 0.5, 0.75], method="linear")
    iqr = q3 - q1
    lo_fence, hi_fence = q1 - 1.5 * iqr, q3 + 1.5 * iqr
    inside_lo = v[v >= lo_fence]
    inside_hi = v[v <= hi_fence]
    wlo = float(inside_lo[0]) if inside_lo.size else float(q1)
    whi = float(inside_hi[-1]) if inside_hi.size else float(q3)
    return BoxplotStats(
        q1=float(q1),
        median=float(med),
        q3=float(q3),
        whisker_low=min(wlo, float(q1)),
        whisker_high=max(whi, float(q3)),
        mean=float(v.mean()),
    )


def distribution_summary(values: Sequence[float], log_transform: bool = False) -> dict:
    """JSON-ready ECDF + boxplot block; optional natural-log boxplot."""
    v = np.asarray(values, dtype=np.float64)
    e = ecdf(v)
    out = {
        "n": int(v.size),
        "mean": float(v.mean()),
        "median": float(np.median(v)),
        "boxplot": boxplot_stats(v).to_dict(),
        "ecdf": {"values": list(e.sorted_values), "fractions": list(e.cumulative_fraction)},
    }
    if log_transform:
        pos = v[v > 0]
        out["log_boxplot"] = boxplot_stats(np.log(pos)).to_dict() if pos.size else None
        out["log_excluded_zeros"] = int(v.size - pos.size)
    return out


def distribution_json(tab: GyrationTable) -> dict:
    """Payload behind the activity and r_g ECDF / boxplot figures."""
    if len(tab) == 0:
        raise ValueError("no users")
    return {
        "n_users": len(tab),
        "r_g_km": distribution_summary(tab.r_g_km, log_transform=True),
        "activity": distribution_summary(tab.n_events.astype(np.float64)),
    }
