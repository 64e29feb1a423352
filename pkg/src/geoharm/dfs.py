"""Positional embeddings: the sine/cosine family plus dispatch to spherical harmonics.

Multi-scale kinds divide the radian coordinates by ``alpha_s`` converted from
degrees to radians, so ``lon / alpha_s == lon_deg / alpha_s_deg`` and a radius
of ``r`` degrees gives a finest period of ``2 * pi * r`` degrees.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .geom import PointSet, SpherePoint
from . import sphharm

KINDS = (
    "direct",
    "cartesian3d",
    "wrap",
    "grid",
    "theory",
    "spherec",
    "spherecplus",
    "spherem",
    "spheremplus",
    "sh",
)
MULTISCALE = ("grid", "theory", "spherec", "spherecplus", "spherem", "spheremplus")
_ALIASES = {"spherec+": "spherecplus", "spherem+": "spheremplus", "cartesian": "cartesian3d"}
_PER_SCALE = {"grid": 4, "theory": 6, "spherec": 3, "spherecplus": 7, "spherem": 5, "spheremplus": 9}
_FIXED = {"direct": 2, "cartesian3d": 3, "wrap": 4}

THEORY_AXES = np.array([[1.0, 0.0], [-0.5, math.sqrt(3) / 2], [-0.5, -math.sqrt(3) / 2]])


@dataclass(frozen=True)
class EmbeddingSpec:
    kind: str
    S: int = 16
    r_min: float = 10.0
    r_max: float = 360.0
    L: int = 10

    def __post_init__(self):
        kind = _ALIASES.get(self.kind.lower(), self.kind.lower())
        if kind not in KINDS:
            raise ValueError(f"unknown embedding kind {self.kind!r}; expected one of {', '.join(KINDS)}")
        object.__setattr__(self, "kind", kind)
        if self.S < 1:
            raise ValueError(f"S must be >= 1, got {self.S}")
        if not 0 < self.r_min <= self.r_max:
            raise ValueError(f"need 0 < r_min <= r_max, got {self.r_min}, {self.r_max}")
        if self.L < 1:
            raise ValueError(f"L must be >= 1, got {self.L}")

    def __str__(self):
        if self.kind in MULTISCALE:
            return f"{self.kind}:S={self.S},rmin={self.r_min:g},rmax={self.r_max:g}"
        if self.kind == "sh":
            return f"sh:L={self.L}"
        return self.kind

    @classmethod
    def parse(cls, text: str) -> "EmbeddingSpec":
        """Parse ``kind[:k=v,...]``; keys are S, rmin, rmax (multi-scale) or L (sh)."""
        kind, _, rest = text.strip().partition(":")
        kind = _ALIASES.get(kind.lower(), kind.lower())
        if kind not in KINDS:
            raise ValueError(f"unknown embedding kind {kind!r}")
        allowed = {"S": ("S", int), "rmin": ("r_min", float), "rmax": ("r_max", float)} if kind in MULTISCALE else {}
        if kind == "sh":
            allowed = {"L": ("L", int)}
        kwargs = {}
        for key, val in parse_kv(rest).items():
            if key not in allowed:
                raise ValueError(f"embedding {kind!r} does not accept key {key!r}")
            name, typ = allowed[key]
            try:
                kwargs[name] = typ(val)
            except ValueError:
                raise ValueError(f"bad value {val!r} for {key}") from None
        return cls(kind, **kwargs)


def parse_kv(text: str) -> dict:
    out = {}
    if not text.strip():
        return out
    for item in text.split(","):
        key, eq, val = item.partition("=")
        if not eq or not key.strip():
            raise ValueError(f"expected key=value, got {item!r}")
        key = key.strip()
        if key in out:
            raise ValueError(f"duplicate key {key!r}")
        out[key] = val.strip()
    return out


def scale_factor(s: int, spec: EmbeddingSpec) -> float:
    """Geometric radius schedule in degrees, r_min at s=0 up to r_max at s=S-1."""
    if not 0 <= s < spec.S:
        raise ValueError(f"scale index {s} outside [0, {spec.S - 1}]")
    if spec.S == 1:
        return float(spec.r_min)
    return float(spec.r_min * (spec.r_max / spec.r_min) ** (s / (spec.S - 1)))


def scale_factors_rad(spec: EmbeddingSpec) -> np.ndarray:
    return np.radians([scale_factor(s, spec) for s in range(spec.S)])


def embed_dim(spec: EmbeddingSpec) -> int:
    if spec.kind == "sh":
        return spec.L * spec.L
    if spec.kind in _FIXED:
        return _FIXED[spec.kind]
    return _PER_SCALE[spec.kind] * spec.S


@lru_cache(maxsize=8)
def _basis(L):
    return sphharm.compile_basis(L)


def _coords(points):
    if isinstance(points, SpherePoint):
        return np.array([points.lon]), np.array([points.lat]), True
    if isinstance(points, PointSet):
        return points.lon, points.lat, False
    lon, lat = points
    return np.atleast_1d(np.asarray(lon, float)), np.atleast_1d(np.asarray(lat, float)), False


def _interleave(blocks):
    """Stack per-scale blocks [(n, S), ...] as s-major columns: b0[s], b1[s], ..."""
    arr = np.stack(blocks, axis=2)  # (n, S, k)
    return arr.reshape(arr.shape[0], -1)


def _grid(lam, phi):
    return _interleave([np.cos(lam), np.sin(lam), np.cos(phi), np.sin(phi)])


def _spherec(lam, phi):
    return _interleave([np.sin(phi), np.cos(phi) * np.cos(lam), np.cos(phi) * np.sin(lam)])


def _spherem(lam, phi, lon, lat):
    cl, sl = np.cos(lon)[:, None], np.sin(lon)[:, None]
    cp = np.cos(lat)[:, None]
    return _interleave([np.sin(phi), np.cos(phi) * cl, cp * np.cos(lam), np.cos(phi) * sl, cp * np.sin(lam)])


def embed(spec: EmbeddingSpec, points) -> np.ndarray:
    """Embedding matrix (n, embed_dim) for a point set, or a vector for one point."""
    lon, lat, single = _coords(points)
    kind = spec.kind
    if kind == "sh":
        out = sphharm.sh_embed(_basis(spec.L), (lon, lat))
    elif kind == "direct":
        out = np.stack([lon, lat], axis=1)
    elif kind == "cartesian3d":
        out = np.stack([np.cos(lat) * np.cos(lon), np.cos(lat) * np.sin(lon), np.sin(lat)], axis=1)
    elif kind == "wrap":
        out = np.stack([np.cos(lon), np.sin(lon), np.cos(lat), np.sin(lat)], axis=1)
    else:
        alpha = scale_factors_rad(spec)
        lam = lon[:, None] / alpha[None, :]
        phi = lat[:, None] / alpha[None, :]
        if kind == "grid":
            out = _grid(lam, phi)
        elif kind == "theory":
            parts = []
            for a in THEORY_AXES:
                proj = (a[0] * lon + a[1] * lat)[:, None] / alpha[None, :]
                parts += [np.cos(proj), np.sin(proj)]
            out = _interleave(parts)
        elif kind == "spherec":
            out = _spherec(lam, phi)
        elif kind == "spherecplus":
            out = np.concatenate([_spherec(lam, phi), _grid(lam, phi)], axis=1)
        elif kind == "spherem":
            out = _spherem(lam, phi, lon, lat)
        else:
            out = np.concatenate([_spherem(lam, phi, lon, lat), _grid(lam, phi)], axis=1)
    return out[0] if single else out
