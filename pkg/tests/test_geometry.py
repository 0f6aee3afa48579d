import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from quakeinv.geometry import (
    KM_PER_DEG,
    EarthquakeParams,
    FaultGeometry,
    GeometryDomainError,
    InvalidDepthError,
    ScalingLaw,
    build_rupture,
    interp_geometry,
    magnitude_from_moment,
    moment_from_magnitude,
    n_subfaults,
    read_geometry,
    size_from_magnitude,
    write_geometry,
)

LAW = ScalingLaw()


def lattice(strike_fn=lambda lat, lon: 0.0 * lat, dip=15.0, step=0.25):
    lats = np.arange(-9.0, -1.0 + 1e-9, step)
    lons = np.arange(128.0, 131.0 + 1e-9, step)
    lon, lat = np.meshgrid(lons, lats)
    depth = 2.0 + (lon - 128.0) * KM_PER_DEG * math.tan(math.radians(dip))
    return FaultGeometry(lat.ravel(), lon.ravel(), depth.ravel(), strike_fn(lat, lon).ravel(), np.full(lat.size, dip))


def scattered(n=200, seed=0):
    rng = np.random.default_rng(seed)
    lat = rng.uniform(-6, -2, n)
    lon = rng.uniform(128, 131, n)
    depth = 5 + 10 * (lon - 128) + rng.uniform(0, 1, n)
    strike = rng.uniform(0, 40, n)
    dip = rng.uniform(10, 30, n)
    return FaultGeometry(lat, lon, depth, strike, dip)


def test_interp_exact_at_samples():
    for geom in (lattice(lambda la, lo: 10 + 5 * la), scattered()):
        for k in range(0, geom.lat.size, 17):
            d, s, dip = interp_geometry(geom, geom.lat[k], geom.lon[k])
            assert d == pytest.approx(geom.depth[k], abs=1e-12)
            assert s == pytest.approx(geom.strike[k], abs=1e-9)
            assert dip == pytest.approx(geom.dip[k], abs=1e-12)


def test_midpoint_depth_is_linear():
    geom = FaultGeometry([0, 0, 1, 1], [0, 1, 0, 1], [20, 40, 20, 40], [0, 0, 0, 0], [10, 10, 10, 10])
    assert geom.gridded
    assert geom.interp(0.0, 0.5)[0] == pytest.approx(30.0, abs=1e-12)


def test_strike_wraps_through_north():
    geom = FaultGeometry([0, 0, 1, 1], [0, 1, 0, 1], [10] * 4, [359, 1, 359, 1], [10] * 4)
    _, s, _ = geom.interp(0.5, 0.5)
    assert min(s, 360 - s) < 1e-9


def _idw_reference(geom, lat, lon):
    """Brute force: all distances in the same tangent-plane metric, 4 nearest, power 2."""
    c = math.cos(math.radians(np.mean(geom.lat)))
    d = []
    for k in range(geom.lat.size):
        dx = (lon - geom.lon[k]) * c * KM_PER_DEG
        dy = (lat - geom.lat[k]) * KM_PER_DEG
        d.append((math.sqrt(dx * dx + dy * dy), k))
    d.sort()
    near = d[:4]
    w = [1 / r**2 for r, _ in near]
    tot = sum(w)
    depth = sum(wi * geom.depth[k] for wi, (_, k) in zip(w, near)) / tot
    dip = sum(wi * geom.dip[k] for wi, (_, k) in zip(w, near)) / tot
    sx = sum(wi * math.sin(math.radians(geom.strike[k])) for wi, (_, k) in zip(w, near)) / tot
    sy = sum(wi * math.cos(math.radians(geom.strike[k])) for wi, (_, k) in zip(w, near)) / tot
    return depth, math.degrees(math.atan2(sx, sy)) % 360, dip


def test_idw_matches_brute_force():
    geom = scattered()
    assert not geom.gridded
    rng = np.random.default_rng(1)
    la0, la1, lo0, lo1 = geom.bounds
    for _ in range(100):
        lat, lon = rng.uniform(la0, la1), rng.uniform(lo0, lo1)
        got = geom.interp(lat, lon)
        ref = _idw_reference(geom, lat, lon)
        np.testing.assert_allclose(got, ref, rtol=1e-10, atol=1e-10)


def test_out_of_region_raises_with_point():
    geom = lattice()
    with pytest.raises(GeometryDomainError) as ei:
        geom.interp(0.5, 129.0)
    assert ei.value.lat == 0.5 and ei.value.lon == 129.0


def test_geometry_rejects_bad_samples():
    with pytest.raises(ValueError):
        FaultGeometry([0, 1], [0, 1], [10, -1], [0, 0], [10, 10])
    with pytest.raises(ValueError):
        FaultGeometry([0, 1], [0, 1], [10, 10], [0, 0], [10, 0])


def test_geometry_file_roundtrip(tmp_path):
    geom = scattered(30)
    write_geometry(geom, tmp_path / "g.csv")
    back = read_geometry(tmp_path / "g.csv")
    for a in ("lat", "lon", "depth", "strike", "dip"):
        np.testing.assert_array_equal(getattr(back, a), getattr(geom, a))


def test_geometry_file_reports_bad_line(tmp_path):
    p = tmp_path / "g.csv"
    p.write_text("lat,lon,depth_km,strike_deg,dip_deg\n0,0,10,0,10\n0,1,ten,0,10\n")
    with pytest.raises(ValueError, match=":3:"):
        read_geometry(p)


def test_size_zero_offsets():
    L, W, _ = size_from_magnitude(8.0, 0.0, 0.0, LAW)
    assert L == 10 ** (LAW.a_L + LAW.b_L * 8.0)
    assert W == 10 ** (LAW.a_W + LAW.b_W * 8.0)


@given(st.floats(6.0, 9.8), st.floats(-0.5, 0.5), st.floats(-0.5, 0.5))
def test_size_moment_roundtrip(mw, dl, dw):
    L, W, slip = size_from_magnitude(mw, dl, dw, LAW)
    m0 = LAW.rigidity * (L * 1e3) * (W * 1e3) * slip
    assert abs((2.0 / 3.0) * (math.log10(m0) - 9.05) - mw) < 1e-9


def test_unit_magnitude_step_scales_moment():
    assert moment_from_magnitude(8.0) / moment_from_magnitude(7.0) == pytest.approx(10**1.5, rel=1e-12)
    assert magnitude_from_moment(moment_from_magnitude(7.3)) == pytest.approx(7.3, abs=1e-12)


@given(st.floats(6.0, 9.5), st.floats(0.01, 0.5))
def test_size_monotone_in_magnitude(mw, dm):
    a = size_from_magnitude(mw, 0.1, -0.1, LAW)
    b = size_from_magnitude(mw + dm, 0.1, -0.1, LAW)
    assert all(y > x for x, y in zip(a, b))


def test_scaling_law_validation():
    with pytest.raises(ValueError):
        ScalingLaw(b_L=0.0)
    with pytest.raises(ValueError):
        ScalingLaw(rigidity=-1.0)


def test_params_validation():
    with pytest.raises(ValueError):
        EarthquakeParams(95.0, 0, 0, 8, 0, 0)
    with pytest.raises(ValueError):
        EarthquakeParams(0, 0, 0, math.nan, 0, 0)
    p = EarthquakeParams(-5, 129, 1, 8, 0.1, 0.2)
    assert EarthquakeParams.from_array(p.to_array()) == p


def test_single_rectangle_below_threshold():
    geom = lattice()
    p = EarthquakeParams(-5.0, 129.0, 0.0, 7.5, 0.0, 0.0)
    rects = build_rupture(p, geom, LAW)
    assert len(rects) == 1
    assert (rects[0].centroid_lat, rects[0].centroid_lon) == (-5.0, 129.0)
    assert rects[0].rake == 90.0


def test_split_count_and_straight_layout():
    geom = lattice(lambda la, lo: np.full(la.shape, 20.0))
    p = EarthquakeParams(-5.0, 129.5, 0.0, 8.6, 0.0, 0.0)
    rects = build_rupture(p, geom, LAW)
    L, W, slip = size_from_magnitude(8.6, 0, 0, LAW)
    assert len(rects) == n_subfaults(L) == math.ceil(L / 100)
    assert all(r.strike == pytest.approx(20.0, abs=1e-9) for r in rects)
    assert sum(r.length for r in rects) == pytest.approx(L, rel=1e-12)
    assert all(r.width == W and r.slip == slip for r in rects)
    c = math.cos(math.radians(-5.0))
    xy = np.array([((r.centroid_lon - 129.5) * c, r.centroid_lat + 5.0) for r in rects]) * KM_PER_DEG
    d = np.diff(xy, axis=0)
    cross = d[:-1, 0] * d[1:, 1] - d[:-1, 1] * d[1:, 0]
    assert np.max(np.abs(cross)) < 1e-8 * np.max(np.sum(d * d, axis=1))
    # spacing equals segment length, along the strike direction
    assert np.allclose(np.hypot(d[:, 0], d[:, 1]), L / len(rects), rtol=1e-9)
    assert np.allclose(np.degrees(np.arctan2(d[:, 0], d[:, 1])), 20.0, atol=1e-7)


def test_depth_offset_and_invalid_depth():
    geom = lattice()
    p = EarthquakeParams(-5.0, 129.0, 3.0, 7.0, 0.0, 0.0)
    r = build_rupture(p, geom, LAW)[0]
    assert r.depth == pytest.approx(geom.interp(-5.0, 129.0)[0] + 3.0, abs=1e-12)
    with pytest.raises(InvalidDepthError):
        build_rupture(EarthquakeParams(-5.0, 129.0, -40.0, 7.0, 0.0, 0.0), geom, LAW)


def test_subfault_outside_region_is_domain_error():
    geom = lattice()
    with pytest.raises(GeometryDomainError):
        build_rupture(EarthquakeParams(-1.5, 129.0, 0.0, 8.8, 0.0, 0.0), geom, LAW)


@settings(max_examples=40, deadline=None)
@given(
    st.floats(-6.0, -4.0),
    st.floats(128.6, 129.4),
    st.floats(-3.0, 3.0),
    st.floats(7.0, 8.9),
    st.floats(-0.3, 0.3),
    st.floats(-0.3, 0.3),
)
def test_moment_conserved_on_curved_geometry(lat, lon, off, mw, dl, dw):
    geom = lattice(lambda la, lo: 15.0 * (la + 5.0) % 360)
    rects = build_rupture(EarthquakeParams(lat, lon, off, mw, dl, dw), geom, LAW)
    total = math.fsum(LAW.rigidity * r.length * 1e3 * r.width * 1e3 * r.slip for r in rects)
    assert abs(total / moment_from_magnitude(mw) - 1.0) < 1e-6
    assert len({r.strike for r in rects}) == len(rects) or len(rects) == 1


def test_build_rupture_deterministic():
    geom = lattice(lambda la, lo: 10.0 * (la + 5.0) % 360)
    p = EarthquakeParams(-5.0, 129.2, 0.5, 8.7, 0.1, -0.05)
    assert build_rupture(p, geom, LAW) == build_rupture(p, geom, LAW)
