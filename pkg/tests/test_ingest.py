import json

import pytest

from zonedid.geom import GeoPoint, NodeSet
from zonedid.ingest import IngestError, PointRecord, ingest_infrastructure, ingest_points, write_points


def write(path, text):
    path.write_text(text, encoding="utf-8")
    return path


def geojson(path, features):
    return write(path, json.dumps({"type": "FeatureCollection", "features": features}))


def feature(gtype, coords, **props):
    return {"type": "Feature", "properties": props, "geometry": {"type": gtype, "coordinates": coords}}


def test_three_rows(tmp_path):
    p = write(tmp_path / "p.csv", "id,lon,lat,covered,locality\na,1.0,2.0,1,x\nb,3,4,0,x\nc,-5.5,6.25,1,y\n")
    recs = ingest_points(p)
    assert [r.id for r in recs] == ["a", "b", "c"]
    assert recs[2].point == GeoPoint(-5.5, 6.25)
    assert recs[0].covered == 1 and recs[2].locality == "y"
    assert recs[0].outcome is None


def test_lat_out_of_range_names_row(tmp_path):
    p = write(tmp_path / "p.csv", "id,lon,lat\na,1,2\nb,0,91\n")
    with pytest.raises(IngestError, match=r"line 3.*'b'"):
        ingest_points(p)


def test_missing_column_named(tmp_path):
    p = write(tmp_path / "p.csv", "id,lon\na,1\n")
    with pytest.raises(IngestError, match="'lat'"):
        ingest_points(p)


def test_unparseable_coordinate_line(tmp_path):
    p = write(tmp_path / "p.csv", "id,lon,lat\na,1,2\nb,east,4\n")
    with pytest.raises(IngestError, match="line 3"):
        ingest_points(p)


def test_bad_optional_value(tmp_path):
    p = write(tmp_path / "p.csv", "id,lon,lat,covered\na,1,2,yes\n")
    with pytest.raises(IngestError, match="covered"):
        ingest_points(p)


def test_round_trip_byte_identical(tmp_path):
    recs = [
        PointRecord("a", GeoPoint(0.1 + 0.2, -1 / 3), covered=1, locality="L1", outcome=2.5, country="KE", year=2009),
        PointRecord("b", GeoPoint(36.8219, -1.2921), covered=0, locality="L2", outcome=None, country="TZ", year=2012),
    ]
    first = tmp_path / "a.csv"
    write_points(recs, first)
    back = ingest_points(first)
    assert back == recs
    second = tmp_path / "b.csv"
    write_points(back, second)
    assert first.read_bytes() == second.read_bytes()


def test_linestring(tmp_path):
    p = geojson(tmp_path / "l.geojson", [feature("LineString", [[0, 0], [1, 0], [1, 1], [2, 1]])])
    lines = ingest_infrastructure(p)
    assert len(lines) == 1 and len(lines[0].vertices) == 4


def test_multilinestring(tmp_path):
    p = geojson(tmp_path / "l.geojson", [feature("MultiLineString", [[[0, 0], [1, 0]], [[2, 2], [3, 3], [4, 3]]])])
    assert len(ingest_infrastructure(p)) == 2


def test_points_become_nodeset(tmp_path):
    p = geojson(tmp_path / "n.geojson", [feature("Point", [1, 2]), feature("Point", [3, 4])])
    ns = ingest_infrastructure(p)
    assert isinstance(ns, NodeSet) and ns.nodes == (GeoPoint(1, 2), GeoPoint(3, 4))


def test_mixed_rejected(tmp_path):
    p = geojson(tmp_path / "m.geojson", [feature("Point", [1, 2]), feature("LineString", [[0, 0], [1, 1]])])
    with pytest.raises(IngestError, match="mixes"):
        ingest_infrastructure(p)


def test_malformed_and_empty(tmp_path):
    with pytest.raises(IngestError, match="malformed"):
        ingest_infrastructure(write(tmp_path / "bad.geojson", "{not json"))
    with pytest.raises(IngestError, match="empty"):
        ingest_infrastructure(geojson(tmp_path / "e.geojson", []))
    with pytest.raises(IngestError):
        ingest_infrastructure(write(tmp_path / "x.geojson", json.dumps({"type": "Feature"})))


def test_year_filter(tmp_path):
    p = geojson(
        tmp_path / "y.geojson",
        [feature("LineString", [[0, 0], [1, 0]], year=2009), feature("LineString", [[0, 1], [1, 1]], year=2012)],
    )
    assert len(ingest_infrastructure(p)) == 2
    assert len(ingest_infrastructure(p, max_year=2010)) == 1


def test_repeated_vertex_collapsed(tmp_path):
    p = geojson(tmp_path / "d.geojson", [feature("LineString", [[0, 0], [0, 0], [1, 1]])])
    assert len(ingest_infrastructure(p)[0].vertices) == 2
