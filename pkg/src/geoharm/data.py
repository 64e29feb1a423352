"""Benchmark datasets: checkerboard, land-ocean, and gridded multi-channel regression."""
from __future__ import annotations

import csv
import json
import struct
from dataclasses import dataclass, field
from importlib import resources

import numpy as np

from . import geom
from .geom import PointSet

GRID_MAGIC = b"GRDF1"
POLYGON_FORMAT = "geoharm-polygons"
_GRID_HEADER = struct.Struct("<5s3I4d")


@dataclass(frozen=True)
class Task:
    kind: str  # multiclass | binary | regression
    size: int = 1  # classes for multiclass, channels for regression

    def __post_init__(self):
        if self.kind not in ("multiclass", "binary", "regression"):
            raise ValueError(f"unknown task kind {self.kind!r}")
        if self.size < 1:
            raise ValueError("task size must be positive")

    @property
    def num_outputs(self):
        return 1 if self.kind == "binary" else self.size

    @property
    def is_classification(self):
        return self.kind != "regression"


@dataclass(frozen=True)
class Split:
    points: PointSet
    targets: np.ndarray

    def __post_init__(self):
        if len(self.targets) != len(self.points):
            raise ValueError("one target per point required")

    def __len__(self):
        return len(self.points)


@dataclass(frozen=True)
class DatasetBundle:
    task: Task
    train: Split
    val: Split
    test: Split
    meta: dict = field(default_factory=dict)

    def splits(self):
        return {"train": self.train, "val": self.val, "test": self.test}

    def to_csv_dir(self, directory, channel_names=None):
        import os

        os.makedirs(directory, exist_ok=True)
        for name, split in self.splits().items():
            write_split_csv(os.path.join(directory, f"{name}.csv"), split, self.task, channel_names)


def _target_columns(task, channel_names=None):
    if task.kind != "regression":
        return ["target"]
    names = channel_names or [str(c) for c in range(task.size)]
    return [f"target_{n}" for n in names]


def write_split_csv(path, split: Split, task: Task, channel_names=None):
    cols = _target_columns(task, channel_names)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["lon_deg", "lat_deg"] + cols)
        t = split.targets.reshape(len(split), -1)
        for lo, la, row in zip(np.degrees(split.points.lon), np.degrees(split.points.lat), t):
            vals = [str(int(v)) for v in row] if task.kind != "regression" else [repr(float(v)) for v in row]
            w.writerow([f"{lo:.9g}", f"{la:.9g}"] + vals)


def read_split_csv(path, task: Task) -> Split:
    with open(path, newline="") as fh:
        r = csv.reader(fh)
        header = next(r)
        if header[:2] != ["lon_deg", "lat_deg"]:
            raise ValueError(f"{path}: header must start with lon_deg,lat_deg")
        rows = list(r)
    lon = np.array([float(row[0]) for row in rows])
    lat = np.array([float(row[1]) for row in rows])
    if task.kind == "regression":
        targets = np.array([[float(v) for v in row[2:]] for row in rows]).reshape(len(rows), -1)
    else:
        targets = np.array([int(row[2]) for row in rows], dtype=np.int64)
    return Split(PointSet.from_degrees(lon, lat), targets)


# ---------------------------------------------------------------- checkerboard

def checkerboard_centers(num_centers: int, num_classes: int = 16):
    centers = geom.fibonacci_points(num_centers)
    return centers, np.arange(num_centers) % num_classes


def build_checkerboard(num_centers=100, num_classes=16, n_train=10_000, n_val=10_000, n_test=10_000, seed=0):
    if num_centers < 1 or num_classes < 1 or min(n_train, n_val, n_test) < 1:
        raise ValueError("sizes must be positive")
    if num_classes > num_centers:
        raise ValueError("num_classes cannot exceed num_centers")
    centers, labels = checkerboard_centers(num_centers, num_classes)
    ss = np.random.SeedSequence(seed)
    s_train, s_val = ss.spawn(2)
    splits = {}
    for name, pts in (
        ("train", geom.uniform_sphere_sample(n_train, s_train)),
        ("val", geom.uniform_sphere_sample(n_val, s_val)),
        ("test", geom.fibonacci_points(n_test)),
    ):
        splits[name] = Split(pts, geom.nearest_center_labels(pts, centers, labels).astype(np.int64))
    meta = {"dataset": "checkerboard", "num_centers": num_centers, "num_classes": num_classes, "seed": seed}
    return DatasetBundle(Task("multiclass", num_classes), meta=meta, **splits)


def mean_center_spacing(num_centers: int) -> float:
    """Mean nearest-neighbour distance between checkerboard centers, in degrees."""
    if num_centers < 2:
        raise ValueError("need at least two centers")
    return float(np.degrees(geom.nearest_neighbor_distances(geom.fibonacci_points(num_centers)).mean()))


def centers_for_spacing(spacing_deg: float, lo=2, hi=100_000) -> int:
    """Smallest center count whose mean spacing is at most ``spacing_deg``."""
    if spacing_deg <= 0:
        raise ValueError("spacing must be positive")
    if mean_center_spacing(lo) <= spacing_deg:
        return lo
    if mean_center_spacing(hi) > spacing_deg:
        raise ValueError(f"spacing {spacing_deg} deg needs more than {hi} centers")
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if mean_center_spacing(mid) <= spacing_deg:
            hi = mid
        else:
            lo = mid
    return hi


# ---------------------------------------------------------------- land / ocean

@dataclass(frozen=True)
class PolygonSet:
    """Rings as (k, 2) arrays of (lon, lat) radians; first vertex repeated last."""

    rings: tuple

    def __len__(self):
        return len(self.rings)


def _validate_ring(ring, where):
    if ring.ndim != 2 or ring.shape[1] != 2:
        raise ValueError(f"{where}: ring must be a list of [lon, lat] pairs")
    if len(ring) < 4:
        raise ValueError(f"{where}: ring needs at least 4 points, got {len(ring)}")
    if not np.array_equal(ring[0], ring[-1]):
        raise ValueError(f"{where}: ring is not closed (first != last)")
    if np.any(np.abs(ring[:, 0]) > 180) or np.any(np.abs(ring[:, 1]) > 90):
        raise ValueError(f"{where}: coordinates out of range")


def parse_polygons(doc, source="<polygons>") -> PolygonSet:
    if not isinstance(doc, dict) or "rings" not in doc:
        raise ValueError(f"{source}: expected an object with a 'rings' list")
    if doc.get("format") != POLYGON_FORMAT or doc.get("version") != 1:
        raise ValueError(f"{source}: expected format {POLYGON_FORMAT!r} version 1")
    rings = []
    for i, raw in enumerate(doc["rings"]):
        try:
            ring = np.asarray(raw, dtype=float)
        except (TypeError, ValueError):
            raise ValueError(f"{source}: ring {i}: non-numeric coordinates") from None
        _validate_ring(ring, f"{source}: ring {i}")
        rings.append(np.radians(ring))
    return PolygonSet(tuple(rings))


def load_polygons(path) -> PolygonSet:
    with open(path) as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ValueError(f"{path}: line {exc.lineno}: {exc.msg}") from None
    return parse_polygons(doc, str(path))


def bundled_land() -> PolygonSet:
    """Natural Earth 1:110m land, dissolved from country outlines."""
    text = resources.files("geoharm").joinpath("assets/land_110m.json").read_text()
    return parse_polygons(json.loads(text), "land_110m.json")


def bundled_land_path():
    return resources.files("geoharm").joinpath("assets/land_110m.json")


@dataclass(frozen=True)
class _Edges:
    lon0: np.ndarray
    lat0: np.ndarray
    lon1: np.ndarray
    lat1: np.ndarray
    ring_id: np.ndarray
    north_cap: np.ndarray  # per ring: ring wraps around and encloses the north pole


def _split_ring(ring):
    """Edges of one ring in degrees, with dateline-crossing edges cut at +-180."""
    lon, lat = np.degrees(ring[:, 0]), np.degrees(ring[:, 1])
    edges = []
    winding = 0.0
    for i in range(len(ring) - 1):
        a, b = (lon[i], lat[i]), (lon[i + 1], lat[i + 1])
        d = b[0] - a[0]
        if abs(d) <= 180:
            edges.append((a, b))
            winding += d
            continue
        if abs(a[0]) == 180 and abs(b[0]) == 180:
            continue  # seam or pole segment; carries no crossing for meridian rays
        # shortest way round crosses the dateline
        d_wrapped = d - 360 * np.sign(d)
        winding += d_wrapped
        edge_a = 180.0 * np.sign(d_wrapped)
        t = (edge_a - a[0]) / d_wrapped
        lat_c = a[1] + t * (b[1] - a[1])
        edges.append((a, (edge_a, lat_c)))
        edges.append(((-edge_a, lat_c), b))
    touches_pole = np.any(np.abs(lat) >= 90.0)
    # a ring wrapping once round a pole without explicit polar vertices; interior on the
    # left means eastward travel (+360) encloses the north pole
    north_cap = (not touches_pole) and winding > 180
    return edges, north_cap


def _polygon_edges(polygons: PolygonSet) -> _Edges:
    cache = getattr(polygons, "_edges", None)
    if cache is not None:
        return cache
    lon0, lat0, lon1, lat1, rid, caps = [], [], [], [], [], []
    for k, ring in enumerate(polygons.rings):
        edges, north_cap = _split_ring(ring)
        caps.append(north_cap)
        for (x0, y0), (x1, y1) in edges:
            lon0.append(x0), lat0.append(y0), lon1.append(x1), lat1.append(y1), rid.append(k)
    arr = lambda v: np.asarray(v, dtype=float)  # noqa: E731
    out = _Edges(arr(lon0), arr(lat0), arr(lon1), arr(lat1), np.asarray(rid, dtype=np.int64),
                 np.asarray(caps, dtype=bool))
    object.__setattr__(polygons, "_edges", out)
    return out


def points_in_land(points: PointSet, polygons: PolygonSet, chunk=512) -> np.ndarray:
    """Even-odd test with rays running due north along each point's meridian."""
    n = len(points)
    if len(polygons) == 0:
        return np.zeros(n, dtype=bool)
    e = _polygon_edges(polygons)
    px = np.degrees(points.lon)
    px = np.where(px >= 180.0, px - 360.0, px)  # +180 is the -180 meridian; straddle tests are half-open
    py = np.degrees(points.lat)
    inside = np.zeros(n, dtype=bool)
    if e.north_cap.any():
        inside ^= (np.count_nonzero(e.north_cap) % 2 == 1)
    for start in range(0, n, chunk):
        x = px[start:start + chunk, None]
        y = py[start:start + chunk, None]
        straddle = (e.lon0 > x) != (e.lon1 > x)
        with np.errstate(divide="ignore", invalid="ignore"):
            t = (x - e.lon0) / (e.lon1 - e.lon0)
            y_cross = e.lat0 + t * (e.lat1 - e.lat0)
        hits = straddle & (y_cross > y)
        inside[start:start + chunk] ^= (hits.sum(axis=1) % 2).astype(bool)
    return inside


def point_in_land(p, polygons: PolygonSet) -> bool:
    return bool(points_in_land(PointSet([p.lon], [p.lat]), polygons)[0])


def land_labels(points, polygons):
    return points_in_land(points, polygons).astype(np.int64)


def build_landocean(polygons: PolygonSet, n_train=5000, n_val=5000, n_test=5000, seed=0):
    if min(n_train, n_val, n_test) < 1:
        raise ValueError("sizes must be positive")
    ss = np.random.SeedSequence(seed)
    s_train, s_val = ss.spawn(2)
    splits = {}
    for name, pts in (
        ("train", geom.uniform_sphere_sample(n_train, s_train)),
        ("val", geom.uniform_sphere_sample(n_val, s_val)),
        ("test", geom.fibonacci_points(n_test)),
    ):
        splits[name] = Split(pts, land_labels(pts, polygons))
    return DatasetBundle(Task("binary"), meta={"dataset": "landocean", "seed": seed}, **splits)


# ---------------------------------------------------------------- gridded fields

@dataclass(frozen=True)
class GridField:
    """Regular lon/lat grid of C channels; axes give the first cell center and spacing (degrees)."""

    lon0: float
    dlon: float
    lat0: float
    dlat: float
    values: np.ndarray  # (C, rows, cols); rows follow latitude
    channel_names: tuple

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 3:
            raise ValueError("values must be (channels, rows, cols)")
        if self.dlon <= 0 or self.dlat <= 0:
            raise ValueError("grid spacing must be positive")
        if len(self.channel_names) != v.shape[0]:
            raise ValueError("one name per channel required")
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "channel_names", tuple(self.channel_names))

    @property
    def shape(self):
        return self.values.shape

    def axes(self):
        _, rows, cols = self.values.shape
        return self.lon0 + self.dlon * np.arange(cols), self.lat0 + self.dlat * np.arange(rows)

    def cell_points(self) -> PointSet:
        lon, lat = self.axes()
        glon, glat = np.meshgrid(lon, lat)
        return PointSet.from_degrees(glon.ravel(), glat.ravel())

    def flat_values(self):
        c = self.values.shape[0]
        return self.values.reshape(c, -1).T

    @classmethod
    def regular(cls, resolution_deg, values_fn=None, channel_names=("value",)):
        """Global grid with cell centers at half-resolution offsets from the corners."""
        cols = int(round(360.0 / resolution_deg))
        rows = int(round(180.0 / resolution_deg))
        lon0 = -180.0 + resolution_deg / 2
        lat0 = -90.0 + resolution_deg / 2
        vals = np.zeros((len(channel_names), rows, cols))
        g = cls(lon0, resolution_deg, lat0, resolution_deg, vals, channel_names)
        if values_fn is not None:
            flat = np.asarray(values_fn(g.cell_points())).reshape(rows * cols, -1)
            g = cls(lon0, resolution_deg, lat0, resolution_deg, flat.T.reshape(-1, rows, cols), channel_names)
        return g


def save_grid_field(field: GridField, path):
    c, rows, cols = field.values.shape
    with open(path, "wb") as fh:
        fh.write(_GRID_HEADER.pack(GRID_MAGIC, c, rows, cols, field.lon0, field.dlon, field.lat0, field.dlat))
        for name in field.channel_names:
            raw = name.encode("utf-8")
            fh.write(struct.pack("<H", len(raw)))
            fh.write(raw)
        fh.write(field.values.astype("<f8").tobytes(order="C"))


def load_grid_field(path) -> GridField:
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < _GRID_HEADER.size:
        raise ValueError(f"{path}: truncated grid header")
    magic, c, rows, cols, lon0, dlon, lat0, dlat = _GRID_HEADER.unpack_from(raw)
    if magic != GRID_MAGIC:
        raise ValueError(f"{path}: bad magic {magic!r}, expected {GRID_MAGIC!r}")
    pos = _GRID_HEADER.size
    names = []
    for i in range(c):
        if pos + 2 > len(raw):
            raise ValueError(f"{path}: truncated name of channel {i}")
        (k,) = struct.unpack_from("<H", raw, pos)
        pos += 2
        names.append(raw[pos:pos + k].decode("utf-8"))
        pos += k
    expected = c * rows * cols * 8
    if len(raw) - pos != expected:
        raise ValueError(f"{path}: payload has {len(raw) - pos} bytes, expected {expected}")
    values = np.frombuffer(raw, dtype="<f8", offset=pos).reshape(c, rows, cols).astype(float)
    return GridField(lon0, dlon, lat0, dlat, values, tuple(names))


def _standardize(splits, train_key="train"):
    t = splits[train_key].targets
    mean = t.mean(axis=0)
    std = t.std(axis=0)
    # constant channels (std at rounding level) are centered but not scaled
    std = np.where(std > 1e-12 * np.maximum(1.0, np.abs(mean)), std, 1.0)
    out = {k: Split(s.points, (s.targets - mean) / std) for k, s in splits.items()}
    return out, mean, std


def grid_to_bundle(field: GridField, train_frac=0.01, val_frac=0.05, seed=0, standardize=True):
    """Random disjoint train/val cells; everything else is test."""
    if not (0 < train_frac < 1 and 0 < val_frac < 1 and train_frac + val_frac < 1):
        raise ValueError("fractions must lie in (0, 1) and sum to less than 1")
    pts = field.cell_points()
    vals = field.flat_values()
    n = len(pts)
    n_train = int(np.floor(n * train_frac))
    n_val = int(np.floor(n * val_frac))
    if n_train < 1 or n_val < 1:
        raise ValueError(f"grid of {n} cells too small for the requested fractions")
    order = np.random.default_rng(seed).permutation(n)
    idx = {"train": order[:n_train], "val": order[n_train:n_train + n_val], "test": order[n_train + n_val:]}
    splits = {k: Split(pts[np.sort(v)], vals[np.sort(v)]) for k, v in idx.items()}
    meta = {"dataset": "grid", "channels": list(field.channel_names), "seed": seed,
            "indices": {k: np.sort(v) for k, v in idx.items()}}
    if standardize:
        splits, mean, std = _standardize(splits)
        meta.update(mean=mean, std=std)
    return DatasetBundle(Task("regression", vals.shape[1]), meta=meta, **splits)


def synth_coefficients(C=8, L_truth=5, seed=0):
    """Random harmonic weights (C, L_truth**2), scaled by 1/(1+l)."""
    rng = np.random.default_rng(seed)
    l_of = np.repeat(np.arange(L_truth), 2 * np.arange(L_truth) + 1)
    return rng.normal(size=(C, L_truth * L_truth)) / (1.0 + l_of)[None, :]


def synth_field_values(coeffs, points):
    from . import sphharm

    L = int(round(np.sqrt(coeffs.shape[1])))
    return sphharm.sh_embed(sphharm.compile_basis(L), points) @ coeffs.T


def synth_field_bundle(C=8, L_truth=5, n_train=2000, n_val=1000, n_test=5000, seed=0):
    """Smooth C-channel sphere field built from known harmonics, standardized on train."""
    if C < 1 or L_truth < 1:
        raise ValueError("C and L_truth must be positive")
    ss = np.random.SeedSequence(seed)
    s_coef, s_train, s_val = ss.spawn(3)
    coeffs = synth_coefficients(C, L_truth, s_coef)
    splits = {}
    for name, pts in (
        ("train", geom.uniform_sphere_sample(n_train, s_train)),
        ("val", geom.uniform_sphere_sample(n_val, s_val)),
        ("test", geom.fibonacci_points(n_test)),
    ):
        splits[name] = Split(pts, synth_field_values(coeffs, pts))
    splits, mean, std = _standardize(splits)
    meta = {"dataset": "synthfield", "L_truth": L_truth, "seed": seed, "coeffs": coeffs, "mean": mean, "std": std}
    return DatasetBundle(Task("regression", C), meta=meta, **splits), coeffs
