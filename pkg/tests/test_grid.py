import itertools
import math
from datetime import datetime
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cvlattice import grid as G
from cvlattice.errors import ComponentOutOfRange, IndexOverflow, InvalidGrid, OutOfBounds
from cvlattice.grid import CellIndex, GridSpec

MO = GridSpec(36.0, 40.6, -93.0, -89.1, 0.01, 0.01)


def exact_floor(x: str, origin: str, step: str) -> int:
    return math.floor((Fraction(x) - Fraction(origin)) / Fraction(step))


def test_derived_dimensions():
    g = GridSpec(0.0, 1.0, 0.0, 2.0, 0.1, 0.1)
    assert g.shape == (288, 4, 10, 20)
    assert g.n_cells == 288 * 4 * 10 * 20
    assert GridSpec(0.0, 1.0, 0.0, 1.0, 0.3, 0.3).rows == 4  # ceil(3.33)


@pytest.mark.parametrize("kwargs", [
    dict(lat_min=1.0, lat_max=1.0),
    dict(lon_min=2.0, lon_max=1.0),
    dict(lat_step=0.0),
    dict(lon_step=1e-12),
    dict(min_step=7),
    dict(dxn_step=70),
    dict(dxn_offset=360.0),
])
def test_invalid_grid(kwargs):
    base = dict(lat_min=0.0, lat_max=1.0, lon_min=0.0, lon_max=1.0, lat_step=0.1, lon_step=0.1)
    base.update(kwargs)
    with pytest.raises(InvalidGrid):
        GridSpec(**base)


def test_lat_bin_sample_value():
    assert exact_floor("37.664087", "36.0", "0.01") == 166
    assert G.lat_bin(37.664087, MO) == 166


def test_lon_bin_sample_value():
    assert exact_floor("-92.6546", "-93.0", "0.01") == 34
    assert G.lon_bin(-92.6546, MO) == 34


def test_lower_edges_and_bounds():
    assert G.lat_bin(MO.lat_min, MO) == 0
    assert G.lon_bin(MO.lon_min, MO) == 0
    with pytest.raises(OutOfBounds):
        G.lat_bin(MO.lat_min - 0.001, MO)
    with pytest.raises(OutOfBounds):
        G.lon_bin(MO.lon_max + 0.5, MO)


def test_upper_bound_clamps_to_last_bin():
    assert G.lat_bin(MO.lat_max, MO) == MO.rows - 1
    assert G.lon_bin(MO.lon_max, MO) == MO.cols - 1


@pytest.mark.parametrize("stamp,expected", [
    ("2021-05-09 03:48:42", 45),   # (3*60+48)//5
    ("2021-05-09 00:00:00", 0),
    ("2021-05-09 23:59:59", 287),  # 1439//5
])
def test_time_bin(stamp, expected):
    ts = datetime.strptime(stamp, "%Y-%m-%d %H:%M:%S")
    assert (ts.hour * 60 + ts.minute) // 5 == expected
    assert G.time_bin(ts, MO) == expected


@pytest.mark.parametrize("heading,expected", [(33, 0), (90, 1), (359.9, 3), (0, 0), (180, 2), (270, 3)])
def test_dxn_bin(heading, expected):
    assert G.dxn_bin(heading, MO) == expected


def test_dxn_offset_centers_compass_points():
    g = GridSpec(0.0, 1.0, 0.0, 1.0, 0.5, 0.5, dxn_offset=45.0)
    assert [G.dxn_bin(h, g) for h in (0, 44.9, 45, 134.9, 135, 225, 315, 359)] == [0, 0, 1, 1, 2, 3, 0, 0]


def test_global_index_examples():
    g = GridSpec(0.0, 1.0, 0.0, 2.0, 0.1, 0.1)
    assert (g.n_directions, g.rows, g.cols) == (4, 10, 20)
    assert G.global_index((0, 0, 0, 0), g) == 0
    assert ((1 * 4 + 2) * 10 + 3) * 20 + 4 == 1264
    assert G.global_index((1, 2, 3, 4), g) == 1264
    T, D, R, C = g.shape
    assert G.global_index((T - 1, D - 1, R - 1, C - 1), g) == T * D * R * C - 1
    with pytest.raises(ComponentOutOfRange):
        G.global_index((0, 4, 0, 0), g)


def test_decompose_examples():
    g = GridSpec(0.0, 1.0, 0.0, 2.0, 0.1, 0.1)
    assert G.decompose(0, g) == CellIndex(0, 0, 0, 0)
    assert G.decompose(1264, g) == CellIndex(1, 2, 3, 4)
    with pytest.raises(IndexOverflow):
        G.decompose(g.n_cells, g)
    with pytest.raises(IndexOverflow):
        G.decompose(-1, g)


def test_round_trip_exhaustive_small_grid():
    g = GridSpec(0.0, 0.3, 0.0, 0.2, 0.1, 0.1, min_step=240, dxn_step=120)
    T, D, R, C = g.shape
    seen = set()
    for cell in itertools.product(range(T), range(D), range(R), range(C)):
        idx = G.global_index(cell, g)
        assert G.decompose(idx, g) == cell
        seen.add(idx)
    assert seen == set(range(g.n_cells))


@settings(max_examples=200)
@given(st.data())
def test_round_trip_random_large_grid(data):
    g = MO
    T, D, R, C = g.shape
    cell = tuple(data.draw(st.integers(0, n - 1)) for n in (T, D, R, C))
    assert G.decompose(G.global_index(cell, g), g) == cell


@given(st.floats(36.0, 40.6), st.floats(36.0, 40.6))
def test_lat_bin_monotonic(a, b):
    lo, hi = sorted((a, b))
    assert G.lat_bin(lo, MO) <= G.lat_bin(hi, MO)


@pytest.mark.parametrize("step", [0.1, 0.01, 0.25, 0.3])
def test_bin_edge_law_brute_force(step):
    g = GridSpec(36.0, 37.0, -93.0, -92.0, step, step)
    for k in range(g.rows):
        lo = g.lat_min + k * step
        hi = g.lat_min + (k + 1) * step
        probes = [lo, np.nextafter(lo, math.inf), (lo + hi) / 2, np.nextafter(hi, -math.inf)]
        for x in probes:
            if x <= g.lat_max:
                assert G.lat_bin(float(x), g) == k, (k, x)


@settings(max_examples=100)
@given(st.lists(st.tuples(st.floats(36.0, 40.6), st.floats(-93.0, -89.1), st.floats(0, 359.999),
                          st.integers(0, 1439)), min_size=1, max_size=50))
def test_vectorized_matches_scalar(rows):
    lat, lon, hd, minute = map(np.array, zip(*rows))
    for spec in (MO, GridSpec(36.0, 40.6, -93.0, -89.1, 0.3, 0.7, min_step=15, dxn_step=45, dxn_offset=22.5)):
        r = G.lat_bins(lat, spec)
        c = G.lon_bins(lon, spec)
        d = G.dxn_bins(hd, spec)
        t = G.time_bins(minute, spec)
        assert r.tolist() == [G.lat_bin(x, spec) for x in lat]
        assert c.tolist() == [G.lon_bin(x, spec) for x in lon]
        assert d.tolist() == [G.dxn_bin(x, spec) for x in hd]
        assert t.tolist() == [m // spec.min_step for m in minute]
        gi = G.global_indices(t, d, r, c, spec)
        assert gi.tolist() == [G.global_index(cell, spec) for cell in zip(t, d, r, c)]
        back = G.decompose_array(gi, spec)
        assert all(np.array_equal(a, b) for a, b in zip(back, (t, d, r, c)))
