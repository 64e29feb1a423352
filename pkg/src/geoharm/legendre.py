"""Legendre and associated Legendre polynomials.

Coefficients are built with exact rational arithmetic (Rodrigues' formula and
repeated differentiation) and only converted to floats at the end. Two
evaluation routes exist: Horner on the precomputed coefficients
(:func:`normalized_eval`), and a term-by-term closed-form sum
(:func:`closed_form_eval`) that rebuilds its binomial weights on every call.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache

import numpy as np


@dataclass(frozen=True)
class Polynomial:
    """Power-basis polynomial, ``coeffs[k]`` multiplies ``x**k``."""

    coeffs: tuple

    def __post_init__(self):
        c = list(self.coeffs)
        while len(c) > 1 and c[-1] == 0:
            c.pop()
        object.__setattr__(self, "coeffs", tuple(float(v) for v in c) or (0.0,))

    @property
    def degree(self):
        return len(self.coeffs) - 1

    def __call__(self, x):
        return horner(self.coeffs, x)


def horner(coeffs, x):
    x = np.asarray(x, dtype=float)
    acc = np.zeros_like(x)
    for c in reversed(coeffs):
        acc = acc * x + c
    return acc


@dataclass(frozen=True)
class AssocLegendre:
    """``poly(x) * (1 - x^2)^(half_power / 2)``; ``half_power == |m|``."""

    l: int
    m: int
    poly: Polynomial
    half_power: int

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        if np.any(np.abs(x) > 1):
            raise ValueError("x must lie in [-1, 1]")
        return self.poly(x) * _sin_power(x, self.half_power)


def _sin_power(x, m):
    if m == 0:
        return np.ones_like(x)
    # (1-x)(1+x) keeps relative accuracy near the poles where 1 - x*x cancels
    s = np.sqrt(np.maximum((1.0 - x) * (1.0 + x), 0.0))
    return s**m


def _check_lm(l, m):
    if l < 0:
        raise ValueError(f"degree must be non-negative, got {l}")
    if abs(m) > l:
        raise ValueError(f"order |m|={abs(m)} exceeds degree l={l}")


@lru_cache(maxsize=None)
def legendre_exact(l: int) -> tuple:
    """Exact coefficients of P_l via Rodrigues' formula, as Fractions."""
    if l < 0:
        raise ValueError(f"degree must be non-negative, got {l}")
    # (x^2 - 1)^l = sum_j C(l, j) (-1)^(l-j) x^(2j); differentiate l times
    coeffs = [Fraction(0)] * (l + 1)
    scale = Fraction(1, 2**l * math.factorial(l))
    for j in range(l + 1):
        p = 2 * j
        if p < l:
            continue
        falling = math.factorial(p) // math.factorial(p - l)
        coeffs[p - l] += scale * math.comb(l, j) * (-1) ** (l - j) * falling
    return tuple(coeffs)


@lru_cache(maxsize=None)
def assoc_exact(l: int, m: int) -> tuple:
    """Exact polynomial part of P_l^m for m >= 0, Condon-Shortley phase included."""
    _check_lm(l, m)
    if m < 0:
        raise ValueError("assoc_exact takes m >= 0; use assoc_legendre for negative orders")
    c = list(legendre_exact(l))
    for _ in range(m):
        c = [k * c[k] for k in range(1, len(c))] or [Fraction(0)]
    sign = -1 if m % 2 else 1
    return tuple(sign * v for v in c)


def legendre_poly(l: int) -> Polynomial:
    return Polynomial(legendre_exact(l))


def assoc_legendre(l: int, m: int) -> AssocLegendre:
    _check_lm(l, m)
    base = assoc_exact(l, abs(m))
    if m < 0:
        k = -m
        factor = Fraction((-1) ** k * math.factorial(l - k), math.factorial(l + k))
        base = tuple(factor * v for v in base)
    return AssocLegendre(l, m, Polynomial(base), abs(m))


def norm_ratio(l: int, m: int) -> Fraction:
    """(l - |m|)! / (l + |m|)! as an exact fraction."""
    m = abs(m)
    return Fraction(math.factorial(l - m), math.factorial(l + m))


def normalized_coeffs(l: int, m: int) -> np.ndarray:
    """Float coefficients of the polynomial part of the normalized P_l^|m|.

    The factorial ratio is folded in exactly before taking the square root,
    so no intermediate overflows or loses digits.
    """
    _check_lm(l, m)
    m = abs(m)
    ratio = norm_ratio(l, m)
    pref = math.sqrt((2 * l + 1) / (4 * math.pi))
    out = []
    for c in assoc_exact(l, m):
        if c == 0:
            out.append(0.0)
            continue
        mag = math.sqrt(float(c * c * ratio))
        out.append(math.copysign(mag, c) * pref)
    return np.array(out)


def normalized_eval(l: int, m: int, x):
    """Normalized associated Legendre function P-bar_l^|m|(x)."""
    _check_lm(l, m)
    x = np.asarray(x, dtype=float)
    if np.any(np.abs(x) > 1):
        raise ValueError("x must lie in [-1, 1]")
    return horner(normalized_coeffs(l, m), x) * _sin_power(x, abs(m))


def norm_factor(l: int, m: int) -> float:
    return math.sqrt((2 * l + 1) / (4 * math.pi) * float(norm_ratio(l, m)))


def gen_binom(a: float, k: int) -> float:
    """Binomial coefficient with a real upper argument."""
    out = 1.0
    for i in range(k):
        out *= (a - i) / (i + 1)
    return out


def closed_form_eval(l: int, m: int, x):
    """Unnormalized P_l^m(x) for 0 <= m <= l from the explicit binomial sum.

        P_l^m(x) = (-1)^m 2^l (1-x^2)^(m/2)
                   * sum_{k=m}^{l} k!/(k-m)! x^(k-m) C(l,k) C((l+k-1)/2, l)

    Weights are recomputed on every call; this is the slow reference route.
    """
    if not 0 <= m <= l:
        raise ValueError(f"closed form needs 0 <= m <= l, got l={l}, m={m}")
    x = np.asarray(x, dtype=float)
    if np.any(np.abs(x) > 1):
        raise ValueError("x must lie in [-1, 1]")
    total = np.zeros_like(x)
    for k in range(m, l + 1):
        w = math.factorial(k) / math.factorial(k - m) * math.comb(l, k) * gen_binom((l + k - 1) / 2, l)
        if w == 0.0:
            continue
        total = total + w * x ** (k - m)
    return (-1) ** m * 2.0**l * _sin_power(x, m) * total


def dump_coefficients(path, max_degree: int):
    """Write ``l,m,k,coeff`` rows of the normalized polynomial parts (m >= 0)."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["l", "m", "k", "coeff"])
        for l in range(max_degree):
            for m in range(l + 1):
                for k, c in enumerate(normalized_coeffs(l, m)):
                    if c != 0.0:
                        w.writerow([l, m, k, repr(float(c))])
