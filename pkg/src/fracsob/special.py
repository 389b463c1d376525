"""Gamma-type special functions used by the subordination formulas.

Gamma is evaluated with a Lanczos approximation (g = 7, 9 terms) and the
reflection formula for arguments below 1/2; relative error stays below
1e-13 on the ranges this package uses.
"""
from __future__ import annotations

import math

import numpy as np
from scipy.special import zeta as _zeta

_LANCZOS_G = 7.0
_LANCZOS_COEF = (
    0.99999999999980993,
    676.5203681218851,
    -1259.1392167224028,
    771.32342877765313,
    -176.61502916214059,
    12.507343278686905,
    -0.13857109526572012,
    9.9843695780195716e-6,
    1.5056327351493116e-7,
)


def gamma(x: float) -> float:
    """Gamma function for real ``x`` away from the poles 0, -1, -2, ..."""
    x = float(x)
    if x <= 0.0 and x == math.floor(x):
        raise ValueError(f"gamma has a pole at {x}")
    if x < 0.5:
        return math.pi / (math.sin(math.pi * x) * gamma(1.0 - x))
    x -= 1.0
    acc = _LANCZOS_COEF[0]
    for i, c in enumerate(_LANCZOS_COEF[1:], start=1):
        acc += c / (x + i)
    t = x + _LANCZOS_G + 0.5
    return math.sqrt(2.0 * math.pi) * t ** (x + 0.5) * math.exp(-t) * acc


def lower_gamma(a: float, x: float) -> float:
    """Unregularized lower incomplete gamma ``int_0^x e^{-u} u^{a-1} du`` for a > 0."""
    if a <= 0:
        raise ValueError("lower_gamma needs a > 0")
    if x <= 0.0:
        return 0.0
    if x < a + 1.0:
        term = 1.0 / a
        total = term
        ap = a
        for _ in range(1000):
            ap += 1.0
            term *= x / ap
            total += term
            if abs(term) < abs(total) * 1e-17:
                break
        return total * math.exp(-x + a * math.log(x))
    return gamma(a) - upper_gamma(a, x)


def upper_gamma(a: float, x: float) -> float:
    """Unregularized upper incomplete gamma for x >= a + 1 (modified Lentz)."""
    if x < a + 1.0:
        return gamma(a) - lower_gamma(a, x)
    tiny = 1e-300
    b = x + 1.0 - a
    c = 1.0 / tiny
    d = 1.0 / b
    h = d
    for i in range(1, 1000):
        an = -i * (i - a)
        b += 2.0
        d = an * d + b
        if abs(d) < tiny:
            d = tiny
        c = b + an / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < 1e-16:
            break
    return math.exp(-x + a * math.log(x)) * h


def subordination_constant(sigma: float) -> float:
    """``1/|Gamma(-sigma)|``, the normalization of the subordinated kernels."""
    return 1.0 / abs(gamma(-sigma))


def dtn_constant(s: float) -> float:
    """``c(s) = 2^{2s-1} Gamma(s) / Gamma(1-s)``."""
    return 2.0 ** (2.0 * s - 1.0) * gamma(s) / gamma(1.0 - s)


def euclidean_kernel_coefficient(n: int, sigma: float) -> float:
    """Coefficient ``a`` with ``c_sigma int (4 pi t)^{-n/2} e^{-r^2/4t} t^{-1-sigma} dt = a r^{-(n+2 sigma)}``."""
    return (
        2.0 ** (2.0 * sigma)
        * gamma((n + 2.0 * sigma) / 2.0)
        / (math.pi ** (n / 2.0) * abs(gamma(-sigma)))
    )


def sphere_power_moment(n: int, p: float) -> float:
    """``int_{S^{n-1}} |omega_1|^p d omega``."""
    if n == 1:
        return 2.0
    return 2.0 * math.pi ** ((n - 1) / 2.0) * gamma((p + 1.0) / 2.0) / gamma((n + p) / 2.0)


def riemann_zeta(x: float) -> float:
    """Riemann zeta continued to x < 1 (x != 1)."""
    return float(_zeta(x))


def gauss_legendre(n: int) -> tuple[np.ndarray, np.ndarray]:
    return np.polynomial.legendre.leggauss(n)
