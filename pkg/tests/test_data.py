import math

import numpy as np
import pytest

from geoharm import data, geom, train
from geoharm.data import GridField, PolygonSet
from geoharm.dfs import EmbeddingSpec
from geoharm.geom import PointSet, SpherePoint
from geoharm.net import NetworkSpec
from geoharm.train import TrainConfig

SPACING_100 = 19.21000315901059  # golden: mean nearest-center distance, 100 lattice centers


# ---------------------------------------------------------------- checkerboard

@pytest.fixture(scope="module")
def board():
    return data.build_checkerboard(seed=0)


def test_checkerboard_sizes_and_labels(board):
    assert (len(board.train), len(board.val), len(board.test)) == (10_000, 10_000, 10_000)
    for s in board.splits().values():
        assert s.targets.min() >= 0 and s.targets.max() < 16
        assert np.all(np.abs(s.points.lat) <= math.pi / 2)


def test_checkerboard_one_center_per_class():
    _, labels = data.checkerboard_centers(16, 16)
    assert sorted(labels) == list(range(16))


def test_checkerboard_centers_keep_labels():
    centers, labels = data.checkerboard_centers(100)
    np.testing.assert_array_equal(geom.nearest_center_labels(centers, centers, labels), labels)


def test_checkerboard_class_histogram(board):
    frac = np.bincount(board.test.targets, minlength=16) / len(board.test)
    assert frac.min() >= 0.04 and frac.max() <= 0.09


def test_checkerboard_label_symmetry():
    centers, labels = data.checkerboard_centers(100)
    perm = np.random.default_rng(0).permutation(16)
    pts = geom.uniform_sphere_sample(2000, 1)
    a = geom.nearest_center_labels(pts, centers, labels)
    b = geom.nearest_center_labels(pts, centers, perm[labels])
    np.testing.assert_array_equal(perm[a], b)


def test_checkerboard_deterministic_and_train_val_independent():
    a = data.build_checkerboard(n_train=100, n_val=100, n_test=100, seed=5)
    b = data.build_checkerboard(n_train=100, n_val=100, n_test=100, seed=5)
    np.testing.assert_array_equal(a.train.points.lon, b.train.points.lon)
    assert not np.array_equal(a.train.points.lon, a.val.points.lon)


def test_checkerboard_errors():
    with pytest.raises(ValueError):
        data.build_checkerboard(num_centers=10, num_classes=16)


def test_center_spacing():
    assert data.mean_center_spacing(100) == pytest.approx(SPACING_100, rel=1e-12)
    two = geom.fibonacci_points(2)
    assert data.mean_center_spacing(2) == pytest.approx(math.degrees(geom.haversine(two.lon[0], two.lat[0], two.lon[1], two.lat[1])))
    ratio = data.mean_center_spacing(100) / data.mean_center_spacing(200)
    assert abs(ratio / math.sqrt(2) - 1) < 0.15


# ---------------------------------------------------------------- polygons

def doc(*rings):
    return {"format": "geoharm-polygons", "version": 1, "rings": [list(r) for r in rings]}


SQUARE = [[10, 10], [20, 10], [20, 20], [10, 20], [10, 10]]


def test_parse_square_and_centroid():
    polys = data.parse_polygons(doc(SQUARE))
    assert len(polys.rings) == 1
    assert data.point_in_land(SpherePoint(math.radians(15), math.radians(15)), polys)
    assert not data.point_in_land(SpherePoint(math.radians(25), math.radians(15)), polys)


def test_hole_is_even_odd():
    polys = data.parse_polygons(doc(SQUARE, [[12, 12], [18, 12], [18, 18], [12, 18], [12, 12]]))
    assert not data.point_in_land(SpherePoint(math.radians(15), math.radians(15)), polys)
    assert data.point_in_land(SpherePoint(math.radians(11), math.radians(15)), polys)


def test_dateline_ring():
    polys = data.parse_polygons(doc([[170, -10], [-170, -10], [-170, 10], [170, 10], [170, -10]]))
    inside = PointSet.from_degrees([175, -175, 180], [0, 5, 0])
    outside = PointSet.from_degrees([160, -160, 0], [0, 0, 0])
    assert data.points_in_land(inside, polys).all()
    assert not data.points_in_land(outside, polys).any()


def test_empty_polygons():
    polys = data.parse_polygons(doc())
    assert len(polys.rings) == 0
    b = data.build_landocean(polys, n_train=20, n_val=20, n_test=20)
    assert all(s.targets.sum() == 0 for s in b.splits().values())


@pytest.mark.parametrize(
    "ring",
    [
        [[10, 10], [20, 10], [20, 20], [10, 20]],  # not closed
        [[10, 10], [20, 10], [10, 10]],  # too short
        [[10, 10], [200, 10], [20, 20], [10, 10]],  # lon out of range
    ],
)
def test_bad_ring_rejected(ring):
    with pytest.raises(ValueError, match="ring"):
        data.parse_polygons(doc(ring))


def test_bad_document_rejected(tmp_path):
    p = tmp_path / "x.json"
    p.write_text("{not json")
    with pytest.raises(ValueError):
        data.load_polygons(p)
    with pytest.raises(ValueError):
        data.parse_polygons({"format": "other", "version": 1, "rings": []})
    with pytest.raises(ValueError):
        data.parse_polygons({"format": "geoharm-polygons", "version": 2, "rings": []})


def test_bundled_land_asset():
    land = data.bundled_land()
    assert len(land.rings) > 100
    lon = np.concatenate([r[:, 0] for r in land.rings])
    assert np.all(np.abs(lon) <= math.pi)


def test_mid_pacific_is_ocean():
    assert not data.point_in_land(SpherePoint(math.radians(-150), 0.0), data.bundled_land())


@pytest.mark.parametrize("lon, lat", [(20, 10), (-100, 40), (135, -25), (0, -85), (100, 60), (-45, 75)])
def test_known_land_points(lon, lat):
    # central Africa, US plains, Australia, Antarctic plateau, Siberia, Greenland
    assert data.point_in_land(SpherePoint(math.radians(lon), math.radians(lat)), data.bundled_land())


def test_land_fraction():
    frac = data.land_labels(geom.fibonacci_points(5000), data.bundled_land()).mean()
    assert 0.25 <= frac <= 0.35


def _unit(lon, lat):
    return np.stack([np.cos(lat) * np.cos(lon), np.cos(lat) * np.sin(lon), np.sin(lat)], -1)


def spherical_parity_oracle(lon, lat, polys):
    """Crossings of the meridian arc from the point to the north pole with great-circle edges, mod 2."""
    a = np.concatenate([_unit(r[:-1, 0], r[:-1, 1]) for r in polys.rings])
    b = np.concatenate([_unit(r[1:, 0], r[1:, 1]) for r in polys.rings])
    out = np.zeros(len(lon), dtype=bool)
    for i, (lo, la) in enumerate(zip(lon, lat)):
        normal = np.array([-math.sin(lo), math.cos(lo), 0.0])
        east = np.array([math.cos(lo), math.sin(lo), 0.0])
        da, db = a @ normal, b @ normal
        hit = np.sign(da) != np.sign(db)
        t = da[hit] / (da[hit] - db[hit])
        x = a[hit] + t[:, None] * (b[hit] - a[hit])
        x /= np.linalg.norm(x, axis=1)[:, None]
        out[i] = np.sum((x @ east > 0) & (x[:, 2] > math.sin(la))) % 2 == 1
    return out


def boundary_distance_deg(lon, lat, polys, step=0.02):
    best = math.inf
    for ring in polys.rings:
        d = np.degrees(ring)
        for (x0, y0), (x1, y1) in zip(d[:-1], d[1:]):
            if abs(x1 - x0) > 180:
                continue
            s = np.linspace(0, 1, max(2, int(math.hypot(x1 - x0, y1 - y0) / step) + 2))
            dist = geom.haversine(lon, lat, np.radians(x0 + s * (x1 - x0)), np.radians(y0 + s * (y1 - y0)))
            best = min(best, float(dist.min()))
    return math.degrees(best)


def test_land_test_agrees_with_spherical_oracle():
    land = data.bundled_land()
    pts = geom.uniform_sphere_sample(1000, 123)
    fast = data.points_in_land(pts, land)
    slow = spherical_parity_oracle(pts.lon, pts.lat, land)
    assert np.mean(fast == slow) > 0.995
    for i in np.flatnonzero(fast != slow):
        assert boundary_distance_deg(pts.lon[i], pts.lat[i], land) < 0.1


def test_landocean_bundle():
    land = data.bundled_land()
    a = data.build_landocean(land, seed=2)
    b = data.build_landocean(land, seed=2)
    assert len(a.test) == 5000 and len(a.train) == 5000 and len(a.val) == 5000
    np.testing.assert_array_equal(a.train.targets, b.train.targets)
    np.testing.assert_array_equal(a.test.points.lat, b.test.points.lat)
    assert a.task.kind == "binary"


# ---------------------------------------------------------------- grids

def _field(rows=10, cols=20, channels=("t2m", "précip")):
    rng = np.random.default_rng(0)
    return GridField(-171.0, 18.0, -81.0, 18.0, rng.normal(size=(len(channels), rows, cols)), channels)


def test_grid_roundtrip(tmp_path):
    f = _field()
    data.save_grid_field(f, tmp_path / "g.grdf")
    g = data.load_grid_field(tmp_path / "g.grdf")
    assert g.channel_names == f.channel_names
    assert (g.lon0, g.dlon, g.lat0, g.dlat) == (f.lon0, f.dlon, f.lat0, f.dlat)
    assert g.values.tobytes() == f.values.tobytes()


def test_grid_layout_is_exact(tmp_path):
    f = GridField(0.5, 1.0, -0.5, 1.0, np.arange(6.0).reshape(1, 2, 3), ("a",))
    data.save_grid_field(f, tmp_path / "g.grdf")
    raw = (tmp_path / "g.grdf").read_bytes()
    assert raw[:5] == b"GRDF1"
    import struct

    assert struct.unpack_from("<3I4d", raw, 5) == (1, 2, 3, 0.5, 1.0, -0.5, 1.0)
    assert raw[49:52] == b"\x01\x00a"
    assert np.frombuffer(raw[52:], "<f8").tolist() == [0, 1, 2, 3, 4, 5]


@pytest.mark.parametrize("cut", [3, 30, -1])
def test_grid_malformed(tmp_path, cut):
    data.save_grid_field(_field(), tmp_path / "g.grdf")
    raw = (tmp_path / "g.grdf").read_bytes()
    (tmp_path / "b.grdf").write_bytes(raw[:cut])
    with pytest.raises(ValueError):
        data.load_grid_field(tmp_path / "b.grdf")


def test_grid_bad_magic(tmp_path):
    data.save_grid_field(_field(), tmp_path / "g.grdf")
    raw = (tmp_path / "g.grdf").read_bytes()
    (tmp_path / "b.grdf").write_bytes(b"GRDF2" + raw[5:])
    with pytest.raises(ValueError, match="magic"):
        data.load_grid_field(tmp_path / "b.grdf")


def test_grid_to_bundle_counts_and_disjoint():
    f = _field()
    b = data.grid_to_bundle(f, train_frac=0.01, val_frac=0.05, seed=1)
    assert len(b.train) == 2 and len(b.val) == 10 and len(b.test) == 188
    idx = b.meta["indices"]
    all_idx = np.concatenate([idx["train"], idx["val"], idx["test"]])
    assert len(np.unique(all_idx)) == len(all_idx) <= 200
    assert b.task.kind == "regression" and b.task.size == 2


def test_grid_to_bundle_unstandardized_values():
    f = _field()
    b = data.grid_to_bundle(f, train_frac=0.1, val_frac=0.1, seed=0, standardize=False)
    flat = f.flat_values()
    np.testing.assert_array_equal(b.test.targets, flat[b.meta["indices"]["test"]])


def test_grid_to_bundle_errors():
    with pytest.raises(ValueError):
        data.grid_to_bundle(_field(), train_frac=0.5, val_frac=0.6)
    with pytest.raises(ValueError):
        data.grid_to_bundle(_field(rows=2, cols=3), train_frac=0.01, val_frac=0.05)


def test_regular_grid_shape():
    g = GridField.regular(1.0)
    assert g.values.shape == (1, 180, 360)
    pts = g.cell_points()
    assert math.degrees(pts.lat.min()) == pytest.approx(-89.5)


def test_era5_style_grid_end_to_end(tmp_path):
    # a user-converted 5 degree, 3 channel grid through ingestion and a short fit
    coeffs = data.synth_coefficients(3, 3, seed=2)
    f = GridField.regular(5.0, lambda p: data.synth_field_values(coeffs, p), ("t2m", "u10", "sp"))
    data.save_grid_field(f, tmp_path / "era5.grdf")
    b = data.grid_to_bundle(data.load_grid_field(tmp_path / "era5.grdf"), train_frac=0.05, val_frac=0.05, seed=0)
    pe = EmbeddingSpec("sh", L=4)
    cfg = TrainConfig(learning_rate=0.02, max_epochs=200, patience=50, batch_size=16, loss_kind="mse")
    res = train.fit(b, pe, NetworkSpec("linear", 1, 1), cfg)
    assert train.evaluate(res.model, pe, b.test, b.task, "mse") < 0.05


# ---------------------------------------------------------------- synthetic field

def test_synth_constant_field():
    b, coeffs = data.synth_field_bundle(C=4, L_truth=1, n_train=50, n_val=20, n_test=30, seed=0)
    assert coeffs.shape == (4, 1)
    for s in b.splits().values():
        np.testing.assert_allclose(s.targets, 0, atol=1e-12)


def test_synth_standardized_on_train():
    b, _ = data.synth_field_bundle(seed=3)
    np.testing.assert_allclose(b.train.targets.mean(0), 0, atol=1e-12)
    np.testing.assert_allclose(b.train.targets.std(0), 1, atol=1e-12)
    assert b.test.targets.shape == (5000, 8)


def test_synth_linear_sh_in_span_and_constant_baseline():
    b, _ = data.synth_field_bundle(C=8, L_truth=5, n_train=1000, n_val=300, n_test=1000, seed=1)
    cfg = TrainConfig(learning_rate=0.02, max_epochs=300, patience=30, batch_size=64, loss_kind="mse")
    pe = EmbeddingSpec("sh", L=5)
    res = train.fit(b, pe, NetworkSpec("linear", 1, 1), cfg)
    assert train.evaluate(res.model, pe, b.test, b.task, "mse") < 1e-3
    pe1 = EmbeddingSpec("sh", L=1)
    res1 = train.fit(b, pe1, NetworkSpec("linear", 1, 1), TrainConfig(learning_rate=0.02, max_epochs=50, patience=10, loss_kind="mse"))
    assert train.evaluate(res1.model, pe1, b.test, b.task, "mse") == pytest.approx(1.0, abs=0.15)


def test_split_csv_roundtrip(tmp_path):
    b, _ = data.synth_field_bundle(C=2, n_train=20, n_val=10, n_test=10, seed=0)
    b.to_csv_dir(tmp_path, channel_names=["a", "b"])
    back = data.read_split_csv(tmp_path / "train.csv", b.task)
    np.testing.assert_array_equal(back.targets, b.train.targets)
    np.testing.assert_allclose(back.points.lat, b.train.points.lat, rtol=1e-8)
    assert (tmp_path / "train.csv").read_text().splitlines()[0] == "lon_deg,lat_deg,target_a,target_b"
    c = data.build_checkerboard(n_train=5, n_val=5, n_test=5)
    c.to_csv_dir(tmp_path / "cb")
    np.testing.assert_array_equal(data.read_split_csv(tmp_path / "cb" / "test.csv", c.task).targets, c.test.targets)
