"""Real spherical-harmonic positional embedding.

Harmonics are evaluated with the polar argument x = cos(colatitude) = sin(lat)
and azimuthal argument m * lon. Features are ordered l-major, then m from -l to
+l, giving L**2 values for degrees 0..L-1.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import legendre
from .geom import PointSet, SpherePoint

MAX_DEGREE = 50


def harmonic_index(l: int, m: int) -> int:
    return l * l + l + m


def index_to_lm(i: int):
    l = int(math.isqrt(i))
    return l, i - l * l - l


@dataclass(frozen=True)
class CompiledBasis:
    """Horner tables for every normalized P-bar_l^|m|, l < L.

    ``table`` rows hold coefficients in t = x**2 (the polynomial part of
    P-bar_l^m has the parity of l - m), highest power padded with zeros.
    """

    L: int
    lm: np.ndarray = field(repr=False)  # (n_lm, 2) of (l, m>=0)
    table: np.ndarray = field(repr=False)  # (n_lm, depth)
    odd: np.ndarray = field(repr=False)  # (n_lm,) bool

    @property
    def size(self):
        return self.L * self.L

    def row(self, l, m):
        return l * (l + 1) // 2 + abs(m)

    def legendre_table(self, x):
        """P-bar_l^m(x) for all l < L, 0 <= m <= l; shape (n_lm, len(x))."""
        x = np.asarray(x, dtype=float)
        t = x * x
        acc = np.zeros((len(self.lm), x.size))
        for k in range(self.table.shape[1] - 1, -1, -1):
            acc *= t
            acc += self.table[:, k, None]
        acc[self.odd] *= x
        s = np.sqrt(np.maximum((1.0 - x) * (1.0 + x), 0.0))
        spow = np.ones((self.L, x.size))
        for m in range(1, self.L):
            spow[m] = spow[m - 1] * s
        acc *= spow[self.lm[:, 1]]
        return acc


def compile_basis(L: int) -> CompiledBasis:
    if not 1 <= L <= MAX_DEGREE:
        raise ValueError(f"L must be in [1, {MAX_DEGREE}], got {L}")
    lm = [(l, m) for l in range(L) for m in range(l + 1)]
    depth = (L - 1) // 2 + 1
    table = np.zeros((len(lm), depth))
    odd = np.zeros(len(lm), dtype=bool)
    for r, (l, m) in enumerate(lm):
        c = legendre.normalized_coeffs(l, m)
        parity = (l - m) % 2
        odd[r] = bool(parity)
        # only powers of matching parity are nonzero
        even_part = c[parity::2]
        table[r, : len(even_part)] = even_part
    for a in (table, odd):
        a.setflags(write=False)
    lm_arr = np.array(lm, dtype=np.int64).reshape(-1, 2)
    lm_arr.setflags(write=False)
    return CompiledBasis(L, lm_arr, table, odd)


def _as_arrays(points):
    if isinstance(points, SpherePoint):
        return np.array([points.lon]), np.array([points.lat])
    if isinstance(points, PointSet):
        return points.lon, points.lat
    lon, lat = points
    return np.atleast_1d(np.asarray(lon, float)), np.atleast_1d(np.asarray(lat, float))


def real_sh(basis: CompiledBasis, l: int, m: int, p) -> float:
    if not (0 <= l < basis.L and abs(m) <= l):
        raise ValueError(f"(l={l}, m={m}) outside basis with L={basis.L}")
    lon, lat = _as_arrays(p)
    x = np.sin(lat)
    r = basis.row(l, m)
    coeffs = np.zeros(2 * basis.table.shape[1])
    parity = 1 if basis.odd[r] else 0
    coeffs[parity::2] = basis.table[r]
    pbar = legendre.horner(coeffs, x) * legendre._sin_power(x, abs(m))
    if m == 0:
        val = pbar
    elif m > 0:
        val = (-1) ** m * math.sqrt(2) * pbar * np.cos(m * lon)
    else:
        val = (-1) ** m * math.sqrt(2) * pbar * np.sin(-m * lon)
    return float(val[0]) if isinstance(p, SpherePoint) else val


def sh_embed(basis: CompiledBasis, points, chunk=1024) -> np.ndarray:
    """Real SH features; shape (n, L**2) for a point set, (L**2,) for one point."""
    lon, lat = _as_arrays(points)
    out = np.empty((basis.size, lon.size))
    # chunking keeps the Horner accumulator cache-resident
    for start in range(0, lon.size, chunk):
        sl = slice(start, start + chunk)
        _embed_block(basis, lon[sl], lat[sl], out[:, sl])
    out = np.ascontiguousarray(out.T)
    return out[0] if isinstance(points, SpherePoint) else out


def _embed_block(basis, lon, lat, out):
    L = basis.L
    pbar = basis.legendre_table(np.sin(lat))
    m_all = np.arange(1, L)
    cos_m = np.cos(m_all[:, None] * lon[None, :])
    sin_m = np.sin(m_all[:, None] * lon[None, :])
    sqrt2 = math.sqrt(2.0)
    for r, (l, m) in enumerate(basis.lm):
        base = l * l + l
        if m == 0:
            out[base] = pbar[r]
            continue
        s = sqrt2 if m % 2 == 0 else -sqrt2  # (-1)^m sqrt(2); same sign for -m
        np.multiply(pbar[r], cos_m[m - 1], out=out[base + m])
        out[base + m] *= s
        np.multiply(pbar[r], sin_m[m - 1], out=out[base - m])
        out[base - m] *= s


def sh_embed_closed_form(L: int, points) -> np.ndarray:
    """Same features as :func:`sh_embed`, evaluated term by term from the closed-form sum.

    Nothing is precompiled; this is the slow reference route used by the runtime benchmark.
    """
    if not 1 <= L <= MAX_DEGREE:
        raise ValueError(f"L must be in [1, {MAX_DEGREE}], got {L}")
    lon, lat = _as_arrays(points)
    x = np.sin(lat)
    out = np.empty((lon.size, L * L))
    for l in range(L):
        base = l * l + l
        for m in range(l + 1):
            pbar = legendre.norm_factor(l, m) * legendre.closed_form_eval(l, m, x)
            if m == 0:
                out[:, base] = pbar
                continue
            s = (-1) ** m * math.sqrt(2.0)
            out[:, base + m] = s * pbar * np.cos(m * lon)
            out[:, base - m] = s * pbar * np.sin(m * lon)
    return out[0] if isinstance(points, SpherePoint) else out
