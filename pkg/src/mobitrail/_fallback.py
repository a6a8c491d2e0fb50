"""Pure numpy implementations of the hot kernels.

Same signatures and results as ``mobitrail._kernels``.  The algorithms are
deliberately different (vectorised group-bys instead of per-user loops) so
that each backend can be used to check the other.  ``threads`` is accepted
and ignored.
"""

from __future__ import annotations

from array import array

import numpy as np

from mobitrail._rows import RowError, iter_lines, parse_csv_line, parse_unix_ts
from mobitrail.model import DEG2RAD, haversine_array

BACKEND = "python"
SECONDS_PER_DAY = 86400


def parse_csv_body(f, has_region, first_lineno, on_error, ts_parser=parse_unix_ts, chunk_size=1 << 22):
    """Parse data lines of an event CSV from binary reader ``f``.

    Returns ``(users, codes, ts, lat, lon, region, total_lines, n_errors)``
    where ``codes`` indexes ``users`` in first-appearance order.
    """
    codes: dict[str, int] = {}
    users: list[str] = []
    c_arr, t_arr, la_arr, lo_arr, r_arr = array("i"), array("q"), array("d"), array("d"), array("q")
    total = errors = 0
    lineno = first_lineno - 1
    for line in iter_lines(f, chunk_size):
        lineno += 1
        if not line:
            continue
        total += 1
        try:
            user, ts, lat, lon, region = parse_csv_line(line, has_region, ts_parser)
        except RowError as exc:
            errors += 1
            on_error(lineno, str(exc))
            continue
        code = codes.get(user)
        if code is None:
            code = codes[user] = len(users)
            users.append(user)
        c_arr.append(code)
        t_arr.append(ts)
        la_arr.append(lat)
        lo_arr.append(lon)
        r_arr.append(region)
    return (
        users,
        np.frombuffer(c_arr, dtype=np.int32).copy(),
        np.frombuffer(t_arr, dtype=np.int64).copy(),
        np.frombuffer(la_arr, dtype=np.float64).copy(),
        np.frombuffer(lo_arr, dtype=np.float64).copy(),
        np.frombuffer(r_arr, dtype=np.int64).copy(),
        total,
        errors,
    )


def format_events_csv(user_blob, user_offsets, codes, ts, lat, lon, region) -> bytes:
    users = [
        user_blob[user_offsets[i] : user_offsets[i + 1]].decode("utf-8")
        for i in range(len(user_offsets) - 1)
    ]
    out = []
    for c, t, la, lo, r in zip(codes.tolist(), ts.tolist(), lat.tolist(), lon.tolist(), region.tolist()):
        out.append(f"{users[c]},{t},{la!r},{lo!r},{'' if r < 0 else r}\n")
    return "".join(out).encode("utf-8")


def lookup_assign(lat, lon, index, threads=1):
    n = lat.shape[0]
    out = np.full(n, -1, dtype=np.int64)
    pending = np.ones(n, dtype=bool)
    for k in range(index.region_ids.shape[0]):
        b0, b1, b2, b3 = index.bbox[k]
        rid = index.region_ids[k]
        if index.is_rect[k]:
            m = pending & (lat >= b0) & (lat < b2) & (lon >= b1) & (lon < b3)
            out[m] = rid
            pending &= ~m
            continue
        cand = np.flatnonzero(pending & (lat >= b0) & (lat <= b2) & (lon >= b1) & (lon <= b3))
        if cand.size == 0:
            continue
        y = lat[cand]
        x = lon[cand]
        o0, o1 = index.ring_offsets[k], index.ring_offsets[k + 1]
        ry = index.ring_lat[o0:o1]
        rx = index.ring_lon[o0:o1]
        inside = np.zeros(cand.size, dtype=bool)
        j = len(ry) - 1
        with np.errstate(divide="ignore", invalid="ignore"):
            for i in range(len(ry)):
                yi, xi, yj, xj = ry[i], rx[i], ry[j], rx[j]
                straddle = (yi > y) != (yj > y)
                xcross = (xj - xi) * (y - yi) / (yj - yi) + xi
                inside ^= straddle & (x < xcross)
                j = i
        hit = cand[inside]
        out[hit] = rid
        pending[hit] = False
    return out


def gyration(offsets, lat, lon, threads=1):
    """Per-user spherical centroid and radius of gyration.

    Returns ``(com_lat, com_lon, r_g_km, degenerate)``.
    """
    counts = np.diff(offsets)
    n_users = counts.shape[0]
    com_lat = np.zeros(n_users)
    com_lon = np.zeros(n_users)
    rg = np.zeros(n_users)
    degenerate = np.zeros(n_users, dtype=np.uint8)
    if lat.shape[0] == 0:
        return com_lat, com_lon, rg, degenerate
    starts = offsets[:-1]
    phi = lat * DEG2RAD
    lam = lon * DEG2RAD
    cphi = np.cos(phi)
    x = cphi * np.cos(lam)
    y = cphi * np.sin(lam)
    z = np.sin(phi)
    mx = np.add.reduceat(x, starts) / counts
    my = np.add.reduceat(y, starts) / counts
    mz = np.add.reduceat(z, starts) / counts
    first_lat = lat[starts]
    first_lon = lon[starts]
    same = (lat == np.repeat(first_lat, counts)) & (lon == np.repeat(first_lon, counts))
    all_same = np.logical_and.reduceat(same, starts)
    norm = np.sqrt(mx * mx + my * my + mz * mz)
    degen = (norm < 1e-12) & ~all_same
    use_first = all_same | degen
    clat = np.arctan2(mz, np.sqrt(mx * mx + my * my)) / DEG2RAD
    clon = np.arctan2(my, mx) / DEG2RAD
    clon = np.where(clon >= 180.0, -180.0, clon)
    com_lat[:] = np.where(use_first, first_lat, clat)
    com_lon[:] = np.where(use_first, first_lon, clon)
    d = haversine_array(lat, lon, np.repeat(com_lat, counts), np.repeat(com_lon, counts))
    rg[:] = np.sqrt(np.add.reduceat(d * d, starts) / counts)
    rg[all_same] = 0.0
    degenerate[degen] = 1
    return com_lat, com_lon, rg, degenerate


def home_stats(offsets, ts, region, utc_offset_s, start_hour, end_hour, threads=1):
    """Winners of the five home methods for every user.

    Returns ``(region[n, 5], score[n, 5], tied[n, 5])``; region is -1 when
    the method's statistic is zero everywhere.
    """
    counts = np.diff(offsets)
    n_users = counts.shape[0]
    out_region = np.full((n_users, 5), -1, dtype=np.int64)
    out_score = np.zeros((n_users, 5), dtype=np.int64)
    out_tied = np.zeros((n_users, 5), dtype=np.uint8)
    n = ts.shape[0]
    if n == 0:
        return out_region, out_score, out_tied
    user = np.repeat(np.arange(n_users, dtype=np.int64), counts)
    local = ts + np.int64(utc_offset_s)
    day = local // SECONDS_PER_DAY
    hour = (local % SECONDS_PER_DAY) // 3600
    if start_hour > end_hour:
        night = (hour >= start_hour) | (hour < end_hour)
        shift = end_hour * 3600
    else:
        night = (hour >= start_hour) & (hour < end_hour)
        shift = 0
    night_day = (local - shift) // SECONDS_PER_DAY

    # (user, region) groups; lexsort is stable so time order survives inside groups
    order = np.lexsort((region, user))
    u, r, t, d = user[order], region[order], ts[order], day[order]
    nt, nd = night[order], night_day[order]
    start = np.ones(n, dtype=bool)
    start[1:] = (u[1:] != u[:-1]) | (r[1:] != r[:-1])
    gstart = np.flatnonzero(start)
    gid = np.cumsum(start) - 1
    n_groups = gstart.shape[0]
    gend = np.append(gstart[1:], n) - 1

    n_events = np.diff(np.append(gstart, n))
    new_day = start.copy()
    new_day[1:] |= d[1:] != d[:-1]
    active_days = np.add.reduceat(new_day.astype(np.int64), gstart)
    span = t[gend] - t[gstart]
    night_events = np.add.reduceat(nt.astype(np.int64), gstart)
    ni = np.flatnonzero(nt)
    night_days = np.zeros(n_groups, dtype=np.int64)
    if ni.size:
        g_n, d_n = gid[ni], nd[ni]
        new_n = np.ones(ni.size, dtype=bool)
        new_n[1:] = (g_n[1:] != g_n[:-1]) | (d_n[1:] != d_n[:-1])
        night_days = np.bincount(g_n[new_n], minlength=n_groups).astype(np.int64)

    g_user = u[gstart]
    g_region = r[gstart]
    g_first = t[gstart]
    for m, stat in enumerate((n_events, active_days, span, night_events, night_days)):
        o = np.lexsort((g_region, g_first, -stat, g_user))
        lead = np.ones(n_groups, dtype=bool)
        lead[1:] = g_user[o][1:] != g_user[o][:-1]
        winners = o[lead]
        wu = g_user[winners]
        best = np.zeros(n_users, dtype=np.int64)
        best[wu] = stat[winners]
        n_top = np.bincount(g_user[stat == best[g_user]], minlength=n_users)
        has = best > 0
        reg = np.full(n_users, -1, dtype=np.int64)
        reg[wu] = g_region[winners]
        out_region[:, m] = np.where(has, reg, -1)
        out_score[:, m] = best
        out_tied[:, m] = (has & (n_top > 1)).astype(np.uint8)
    return out_region, out_score, out_tied
