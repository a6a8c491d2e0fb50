import io
import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import ev, schema_validator
from mobitrail import _backend
from mobitrail.gyration import (
    boxplot_stats,
    center_of_mass,
    distribution_json,
    ecdf,
    gyration_table,
    radius_of_gyration,
)
from mobitrail.ingest import group_traces
from mobitrail.model import GeoPoint, UserTrace, haversine_km
from oracles import chord_centroid_grid, planar_rg


def trace(points, user="u"):
    return UserTrace(user, tuple(ev(user, i, la, lo) for i, (la, lo) in enumerate(points)))


def test_single_event(backend):
    t = trace([(40, -3)])
    assert center_of_mass(t) == GeoPoint(40, -3)
    assert radius_of_gyration(t) == 0.0


def test_identical_points_exact(backend):
    t = trace([(41.123456, 2.654321)] * 7)
    assert center_of_mass(t) == GeoPoint(41.123456, 2.654321)
    assert radius_of_gyration(t) == 0.0


def test_equator_symmetry(backend):
    c = center_of_mass(trace([(0, 10), (0, -10)]))
    assert c.lat_deg == pytest.approx(0, abs=1e-12) and c.lon_deg == pytest.approx(0, abs=1e-12)


def test_centroid_grid_search_oracle(backend):
    pts = [(41.0, 2.0), (41.2, 2.2), (40.8, 1.8)]
    c = center_of_mass(trace(pts))
    lat, lon = chord_centroid_grid([p[0] for p in pts], [p[1] for p in pts])
    assert abs(c.lat_deg - lat) <= 0.001 and abs(c.lon_deg - lon) <= 0.001


def test_two_events_10km(backend):
    t = trace([(0, 0), (0, 0.0899322)])
    assert haversine_km(*[e.point for e in t.events]) == pytest.approx(10.0, abs=1e-4)
    assert radius_of_gyration(t) == pytest.approx(5.0, abs=0.01)


def test_planar_oracle_small_patch(backend):
    rng = np.random.default_rng(0)
    for _ in range(20):
        la0, lo0 = rng.uniform(-60, 60), rng.uniform(-170, 170)
        lats = la0 + rng.uniform(0, 0.2, 50)
        lons = lo0 + rng.uniform(0, 0.2, 50)
        rg = radius_of_gyration(trace(zip(lats, lons)))
        assert rg == pytest.approx(planar_rg(lats, lons), rel=1e-3)


def test_antipodal_degenerate(backend, caplog):
    t = trace([(0, 0), (0, 180)])
    c = center_of_mass(t)
    assert c == GeoPoint(0, 0)  # falls back to the first event
    assert radius_of_gyration(t) == pytest.approx(math.pi * 6371.0 / math.sqrt(2), rel=1e-9)
    assert "antipodal" in caplog.text


coords = st.tuples(st.floats(35, 45), st.floats(-5, 5))


@given(st.lists(coords, min_size=1, max_size=30), st.randoms())
def test_permutation_invariant(pts, rnd):
    a = radius_of_gyration(trace(pts))
    events = [ev("u", i, la, lo) for i, (la, lo) in enumerate(pts)]
    rnd.shuffle(events)
    assert radius_of_gyration(UserTrace("u", tuple(events))) == a


@given(st.lists(coords, min_size=1, max_size=30))
def test_rg_bounded_by_diameter(pts):
    t = trace(pts)
    rg = radius_of_gyration(t)
    diam = max(haversine_km(GeoPoint(*a), GeoPoint(*b)) for a in pts for b in pts)
    assert 0 <= rg <= diam * (1 + 1e-9) + 1e-9


@given(st.lists(coords, min_size=1, max_size=30))
def test_adding_centroid_never_increases(pts):
    t = trace(pts)
    c = center_of_mass(t)
    more = trace(pts + [(c.lat_deg, c.lon_deg)])
    assert radius_of_gyration(more) <= radius_of_gyration(t) * (1 + 1e-9) + 1e-9


def test_backends_agree():
    if len(_backend.available()) < 2:
        pytest.skip("compiled kernels not built")
    rng = np.random.default_rng(4)
    events = [ev(f"u{rng.integers(0, 300)}", i, rng.uniform(-80, 80), rng.uniform(-180, 180)) for i in range(5000)]
    tr = group_traces(events)
    out = {}
    for b in ("cython", "python"):
        with _backend.use(b):
            out[b] = gyration_table(tr)
    for f in ("com_lat", "com_lon", "r_g_km"):
        np.testing.assert_allclose(getattr(out["cython"], f), getattr(out["python"], f), rtol=1e-12, atol=1e-9)


def test_threads_do_not_change_results():
    rng = np.random.default_rng(8)
    events = [ev(f"u{rng.integers(0, 500)}", i, rng.uniform(35, 45), rng.uniform(-5, 5)) for i in range(20000)]
    tr = group_traces(events)
    for b in _backend.available():
        with _backend.use(b):
            a, c = gyration_table(tr, threads=1), gyration_table(tr, threads=4)
            assert a.r_g_km.tobytes() == c.r_g_km.tobytes()


def test_table_csv():
    tr = group_traces([ev("b", 1, 0, 0), ev("b", 2, 0, 0.0899322), ev("a", 1, 40, -3)])
    buf = io.StringIO()
    gyration_table(tr).write_csv(buf)
    lines = buf.getvalue().splitlines()
    assert lines[0] == "user_id,com_lat,com_lon,r_g_km,n_events"
    assert lines[1] == "a,40.0,-3.0,0.0,1"
    assert lines[2].startswith("b,") and lines[2].endswith(",2")
    assert float(lines[2].split(",")[3]) == pytest.approx(5.0, abs=0.01)


# ---- ECDF and boxplot


def test_ecdf_examples():
    e = ecdf([5])
    assert (e.sorted_values, e.cumulative_fraction) == ((5.0,), (1.0,))
    e = ecdf([1, 2, 2, 4])
    assert (e.sorted_values, e.cumulative_fraction) == ((1.0, 2.0, 4.0), (0.25, 0.75, 1.0))
    assert e.at(0) == 0 and e.at(2) == 0.75 and e.at(3) == 0.75 and e.at(10) == 1.0
    with pytest.raises(ValueError):
        ecdf([])


def test_ecdf_lognormal_median():
    v = np.random.default_rng(1).lognormal(0, 1, 10_000)
    assert ecdf(v).at(np.median(v)) == pytest.approx(0.5, abs=0.01)


@given(st.lists(st.floats(-1e6, 1e6), min_size=1, max_size=200))
def test_ecdf_properties(v):
    e = ecdf(v)
    assert e.cumulative_fraction[-1] == 1.0
    assert all(a < b for a, b in zip(e.cumulative_fraction, e.cumulative_fraction[1:]))
    assert all(a < b for a, b in zip(e.sorted_values, e.sorted_values[1:]))
    # independent count
    for x, f in zip(e.sorted_values, e.cumulative_fraction):
        assert f == pytest.approx(sum(1 for y in v if y <= x) / len(v))


def _type7(v, p):
    v = sorted(v)
    h = (len(v) - 1) * p
    lo = math.floor(h)
    hi = min(lo + 1, len(v) - 1)
    return v[lo] + (h - lo) * (v[hi] - v[lo])


def test_boxplot_examples():
    b = boxplot_stats([1, 2, 3])
    assert (b.q1, b.median, b.q3) == (1.5, 2.0, 2.5)
    b = boxplot_stats([5, 5, 5, 5])
    assert b.to_dict() == dict.fromkeys(b.to_dict(), 5.0)
    v = np.random.default_rng(2).uniform(0, 1, 1000)
    b = boxplot_stats(v)
    assert b.q1 == pytest.approx(0.25, abs=0.03) and b.q3 == pytest.approx(0.75, abs=0.03)
    with pytest.raises(ValueError):
        boxplot_stats([])


def test_boxplot_whiskers():
    b = boxplot_stats([1, 2, 3, 4, 100])
    assert b.q1 == 2 and b.q3 == 4 and b.whisker_high == 4 and b.whisker_low == 1
    assert b.mean == 22


@given(st.lists(st.floats(-1e6, 1e6), min_size=1, max_size=200))
def test_boxplot_properties(v):
    b = boxplot_stats(v)
    assert b.whisker_low <= b.q1 <= b.median <= b.q3 <= b.whisker_high
    for p, got in ((0.25, b.q1), (0.5, b.median), (0.75, b.q3)):
        assert got == pytest.approx(_type7(v, p), rel=1e-9, abs=1e-6)


def test_distribution_json_schema():
    rng = np.random.default_rng(3)
    events = [ev(f"u{k}", i, 40 + rng.normal(0, 0.1), rng.normal(0, 0.1)) for k in range(20) for i in range(k + 1)]
    d = distribution_json(gyration_table(group_traces(events)))
    schema_validator("distribution").validate(json.loads(json.dumps(d)))
    assert d["r_g_km"]["log_excluded_zeros"] == 1  # the single-event user
    assert d["activity"]["mean"] == pytest.approx(10.5)
