"""Spherical geometry primitives.

All angles are radians. Points are carried as parallel ``lon``/``lat`` arrays
(a :class:`PointSet`); scalar helpers accept plain floats.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

GOLDEN_RATIO = (1.0 + np.sqrt(5.0)) / 2.0


def wrap_lon(lon):
    """Map longitudes into [-pi, pi]; +pi is kept as +pi rather than folded to -pi."""
    lon = np.asarray(lon, dtype=float)
    out = np.mod(lon + np.pi, 2.0 * np.pi) - np.pi
    # keep the closed upper end so that an input of exactly pi round-trips
    return np.where((out == -np.pi) & (lon > 0), np.pi, out)


@dataclass(frozen=True)
class SpherePoint:
    lon: float
    lat: float

    def __post_init__(self):
        if not (np.isfinite(self.lon) and np.isfinite(self.lat)):
            raise ValueError("coordinates must be finite")
        if abs(self.lat) > np.pi / 2:
            raise ValueError(f"latitude {self.lat} outside [-pi/2, pi/2]")
        object.__setattr__(self, "lon", float(wrap_lon(self.lon)))
        object.__setattr__(self, "lat", float(self.lat))


@dataclass(frozen=True)
class PointSet:
    """Ordered set of sphere points stored as two float arrays."""

    lon: np.ndarray
    lat: np.ndarray

    def __post_init__(self):
        lon = np.atleast_1d(np.asarray(self.lon, dtype=float))
        lat = np.atleast_1d(np.asarray(self.lat, dtype=float))
        if lon.shape != lat.shape or lon.ndim != 1:
            raise ValueError("lon and lat must be 1-d arrays of equal length")
        if not (np.all(np.isfinite(lon)) and np.all(np.isfinite(lat))):
            raise ValueError("coordinates must be finite")
        if np.any(np.abs(lat) > np.pi / 2):
            raise ValueError("latitude outside [-pi/2, pi/2]")
        lon = wrap_lon(lon)
        lon.setflags(write=False)
        lat.setflags(write=False)
        object.__setattr__(self, "lon", lon)
        object.__setattr__(self, "lat", lat)

    def __len__(self):
        return len(self.lon)

    def __getitem__(self, idx):
        if isinstance(idx, (int, np.integer)):
            return SpherePoint(self.lon[idx], self.lat[idx])
        return PointSet(self.lon[idx], self.lat[idx])

    @classmethod
    def from_degrees(cls, lon_deg, lat_deg):
        return cls(np.radians(lon_deg), np.radians(lat_deg))

    @classmethod
    def concat(cls, *sets):
        return cls(np.concatenate([s.lon for s in sets]), np.concatenate([s.lat for s in sets]))

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["lon_deg", "lat_deg"])
            for lo, la in zip(np.degrees(self.lon), np.degrees(self.lat)):
                w.writerow([f"{lo:.9g}", f"{la:.9g}"])

    @classmethod
    def from_csv(cls, path):
        with open(path, newline="") as fh:
            r = csv.reader(fh)
            header = next(r)
            if header != ["lon_deg", "lat_deg"]:
                raise ValueError(f"{path}: expected header lon_deg,lat_deg, got {header}")
            rows = [(float(a), float(b)) for a, b in r]
        arr = np.array(rows, dtype=float).reshape(-1, 2)
        return cls.from_degrees(arr[:, 0], arr[:, 1])


def fibonacci_lattice(n: int) -> PointSet:
    """Golden-ratio spiral with indices i = -n..n (2n+1 points)."""
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    i = np.arange(-n, n + 1, dtype=float)
    lat = np.arcsin(2.0 * i / (2 * n + 1))
    lon = wrap_lon(2.0 * np.pi * i * GOLDEN_RATIO)
    return PointSet(lon, lat)


def fibonacci_points(count: int) -> PointSet:
    """Exactly ``count`` lattice points.

    Odd counts are the full lattice of ``(count-1)/2``; even counts drop the
    southernmost point of the next lattice up.
    """
    if count < 1:
        raise ValueError(f"count must be >= 1, got {count}")
    if count == 1:
        return PointSet([0.0], [0.0])
    pts = fibonacci_lattice(count // 2)
    if count % 2 == 0:
        pts = pts[1:]
    return pts


def uniform_sphere_sample(count: int, seed) -> PointSet:
    if count < 1:
        raise ValueError(f"count must be >= 1, got {count}")
    rng = np.random.default_rng(seed)
    lon = rng.uniform(-np.pi, np.pi, count)
    lat = np.arcsin(rng.uniform(-1.0, 1.0, count))
    return PointSet(lon, lat)


def haversine(lon1, lat1, lon2, lat2):
    """Great-circle central angle; broadcasts over array arguments."""
    dlat = lat2 - lat1
    dlon = lon2 - lon1
    a = np.sin(dlat / 2) ** 2 + np.cos(lat1) * np.cos(lat2) * np.sin(dlon / 2) ** 2
    return 2.0 * np.arcsin(np.sqrt(np.clip(a, 0.0, 1.0)))


def point_distance(p: SpherePoint, q: SpherePoint) -> float:
    return float(haversine(p.lon, p.lat, q.lon, q.lat))


def unit_vectors(points: PointSet) -> np.ndarray:
    cl = np.cos(points.lat)
    return np.stack([cl * np.cos(points.lon), cl * np.sin(points.lon), np.sin(points.lat)], axis=1)


def nearest_center_index(queries: PointSet, centers: PointSet, chunk=4096) -> np.ndarray:
    """Index of the haversine-nearest center; ties go to the lowest index."""
    if len(centers) == 0:
        raise ValueError("centers must be non-empty")
    out = np.empty(len(queries), dtype=np.int64)
    for start in range(0, len(queries), chunk):
        sl = slice(start, start + chunk)
        d = haversine(queries.lon[sl, None], queries.lat[sl, None], centers.lon[None, :], centers.lat[None, :])
        out[sl] = np.argmin(d, axis=1)  # argmin returns the first minimum
    return out


def nearest_center_labels(queries: PointSet, centers: PointSet, center_labels) -> np.ndarray:
    center_labels = np.asarray(center_labels)
    if len(centers) == 0:
        raise ValueError("centers must be non-empty")
    if len(center_labels) != len(centers):
        raise ValueError("need exactly one label per center")
    return center_labels[nearest_center_index(queries, centers)]


def nearest_neighbor_distances(points: PointSet) -> np.ndarray:
    """Haversine distance from each point to its nearest other point."""
    n = len(points)
    if n < 2:
        raise ValueError("need at least two points")
    # chord length is monotone in central angle, so a 3-d tree finds the same neighbour
    _, idx = cKDTree(unit_vectors(points)).query(unit_vectors(points), k=2)
    other = idx[:, 1]
    return haversine(points.lon, points.lat, points.lon[other], points.lat[other])
