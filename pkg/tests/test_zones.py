import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import brute_segment_distance
from zonedid.geom import GeoPoint, NodeSet, Polyline
from zonedid.zones import (
    Assignment,
    GridSpec,
    Referent,
    Status,
    ZoneSpec,
    classify,
    compare_classifications,
    grid_cell,
)

T, C, X = Status.TREATED, Status.CONTROL, Status.EXCLUDED


@pytest.fixture
def vertical_line():
    return [Polyline.from_coords([(0, -1), (0, 1)])]


def test_zone_spec_validation():
    with pytest.raises(ValueError):
        ZoneSpec(0.1, 0.1)
    with pytest.raises(ValueError):
        ZoneSpec(0, 0.1)
    assert ZoneSpec(0.005, 0.1).name == "lines_0.005_0.1"


def test_classify_examples(vertical_line):
    near = [GeoPoint(0.003, 0)]
    assert classify(near, vertical_line, ZoneSpec(0.005, 0.1))[0].status is T
    mid = [GeoPoint(0.05, 0)]
    assert classify(mid, vertical_line, ZoneSpec(0.005, 0.1))[0].status is C
    assert classify(mid, vertical_line, ZoneSpec(0.1, 0.2))[0].status is T
    far = [GeoPoint(0.5, 0)]
    assert classify(far, vertical_line, ZoneSpec(0.1, 0.2))[0].status is X


def test_boundaries_half_open(vertical_line):
    z = ZoneSpec(0.25, 0.5)
    got = [a.status for a in classify([GeoPoint(0.25, 0), GeoPoint(0.5, 0)], vertical_line, z)]
    assert got == [C, X]


def test_classify_matches_brute_force(rng):
    line = [Polyline.from_coords([(0, 0), (0.3, 0.2), (0.5, -0.1)])]
    pts = rng.uniform(-0.3, 0.8, (300, 2))
    z = ZoneSpec(0.05, 0.2)
    got = classify([GeoPoint(*p) for p in pts], line, z)
    segs = list(zip(line[0].vertices, line[0].vertices[1:]))
    for p, a in zip(pts, got):
        d = min(brute_segment_distance(p, (s.lon, s.lat), (e.lon, e.lat)) for s, e in segs)
        expect = T if d < 0.05 else C if d < 0.2 else X
        if abs(d - 0.05) > 1e-9 and abs(d - 0.2) > 1e-9:
            assert a.status is expect


def test_referent_mismatch_rejected(vertical_line):
    with pytest.raises(ValueError):
        classify([GeoPoint(0, 0)], NodeSet((GeoPoint(0, 0),)), ZoneSpec(0.1, 0.2))
    with pytest.raises(ValueError):
        classify([GeoPoint(0, 0)], vertical_line, ZoneSpec(0.1, 0.2, referent=Referent.NODES))


def test_empty_infrastructure_rejected():
    with pytest.raises(ValueError):
        classify([GeoPoint(0, 0)], [], ZoneSpec(0.1, 0.2))


def test_nodes_equal_tiny_stub_lines(rng):
    xy = rng.uniform(-1, 1, (20, 2))
    nodes = NodeSet(tuple(GeoPoint(*c) for c in xy))
    stubs = [Polyline((GeoPoint(x, y), GeoPoint(x + 1e-13, y))) for x, y in xy]
    pts = [GeoPoint(*p) for p in rng.uniform(-1.2, 1.2, (500, 2))]
    a = classify(pts, nodes, ZoneSpec(0.05, 0.2, referent="nodes"))
    b = classify(pts, stubs, ZoneSpec(0.05, 0.2))
    for x, y in zip(a, b):
        assert abs(x.distance - y.distance) < 1e-12
        if abs(x.distance - 0.05) > 1e-12 and abs(x.distance - 0.2) > 1e-12:
            assert x.status is y.status


@given(st.floats(0.001, 0.1), st.floats(0.0, 0.1), st.floats(0.0, 0.3))
def test_monotone_in_radii(r_t, extra_t, extra_c):
    rng = np.random.default_rng(1)
    line = [Polyline.from_coords([(0, 0), (1, 1)])]
    pts = [GeoPoint(*p) for p in rng.uniform(-0.5, 1.5, (200, 2))]
    base = classify(pts, line, ZoneSpec(r_t, 0.5))
    wider_t = classify(pts, line, ZoneSpec(min(r_t + extra_t, 0.49), 0.5))
    wider_c = classify(pts, line, ZoneSpec(r_t, 0.5 + extra_c))
    for b, wt, wc in zip(base, wider_t, wider_c):
        if b.status is T:
            assert wt.status is T
        if b.status is not X:
            assert wc.status is not X


@pytest.mark.parametrize(
    "p,size,cell",
    [((0.05, 0.05), 0.1, (0, 0)), ((-0.05, 0.05), 0.1, (-1, 0)), ((0.15, 0.25), 0.2, (0, 1))],
)
def test_grid_cell(p, size, cell):
    assert grid_cell(GeoPoint(*p), GridSpec(size)) == cell
    assert grid_cell(GeoPoint(*p), GridSpec(size)) == grid_cell(GeoPoint(*p), GridSpec(size))


def test_grid_spec_positive():
    with pytest.raises(ValueError):
        GridSpec(0)


def _assign(statuses):
    return [Assignment(s, 0.0) for s in statuses]


def test_compare_identical():
    a = _assign([T, C, X, T])
    rep = compare_classifications(a, a)
    assert rep.rate == 1.0
    assert rep.matrix.sum() == 4
    assert (rep.matrix - np.diag(np.diag(rep.matrix))).sum() == 0


def test_compare_three_disagreements():
    a = _assign([T] * 5 + [C] * 5)
    b = _assign([C, C, X] + [T] * 2 + [C] * 5)
    rep = compare_classifications(a, b)
    assert rep.rate == pytest.approx(0.7)
    assert rep.matrix[0, 1] == 2 and rep.matrix[0, 2] == 1


def test_compare_permutation_invariant(rng):
    choices = [T, C, X]
    a = _assign([choices[i] for i in rng.integers(0, 3, 50)])
    b = _assign([choices[i] for i in rng.integers(0, 3, 50)])
    perm = rng.permutation(50)
    r1 = compare_classifications(a, b)
    r2 = compare_classifications([a[i] for i in perm], [b[i] for i in perm])
    assert r1.rate == r2.rate
    assert (r1.matrix == r2.matrix).all()


def test_compare_length_mismatch():
    with pytest.raises(ValueError):
        compare_classifications(_assign([T]), _assign([T, C]))
