"""Time integrals against ``t^{-1-sigma} dt`` on (0, infinity).

Every subordinated quantity in the package is an integral of the heat kernel
(or of a scalar heat multiplier) against ``t^{-1-sigma}``. The integrand is
smooth in ``log t``, so the substitution ``t = e^tau`` followed by composite
Gauss-Legendre panels (one per decade) is used on a finite window. What lies
outside the window is added in closed form:

* below the window: a power series in ``lam t`` for scalar multipliers, and
  nothing for kernels, whose Gaussian factor ``exp(-d^2/4t)`` is below
  ``e^{-50}`` there;
* above the window: the stationary value ``1/Vol`` of the kernel integrated
  exactly, the remaining ``O(exp(-lam_1 t))`` part being below ``e^{-40}``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .errors import CoincidentPoints, InvalidParameter, QuadratureNotConverged
from .heat_kernel import flat_kernel_offsets, zonal_kernel
from .manifold import SpectralManifold, Sphere2
from .special import gauss_legendre, lower_gamma, subordination_constant

# Gaussian factors below exp(-_CUTOFF) are dropped
_CUTOFF = 50.0
_HORIZON_DECAY = 40.0


@dataclass(frozen=True)
class SubordinationQuad:
    """Discretization of a time integral split at ``t0``.

    ``small_nodes`` and ``large_nodes`` are Gauss-Legendre nodes per decade
    panel (in log time) below and above ``t0``. ``small_representation``
    chooses how flat-model heat kernels are evaluated below ``t0``.
    """

    t0: float = 1.0
    small_nodes: int = 24
    large_nodes: int = 24
    small_representation: str = "auto"
    t_min: float = 1e-6
    t_max: float | None = None

    def __post_init__(self):
        if self.small_nodes < 8 or self.large_nodes < 8:
            raise InvalidParameter("node counts must be >= 8")
        if not self.t0 > 0 or not self.t_min > 0:
            raise InvalidParameter("split and minimal times must be positive")
        if self.small_representation not in ("auto", "image", "spectral"):
            raise InvalidParameter(f"unknown representation {self.small_representation!r}")

    def refined(self, factor: float) -> "SubordinationQuad":
        return replace(
            self,
            small_nodes=max(8, int(round(self.small_nodes * factor))),
            large_nodes=max(8, int(round(self.large_nodes * factor))),
        )

    def horizon(self, lam1: float | None = None) -> float:
        if self.t_max is not None:
            return self.t_max
        if lam1 is None or lam1 <= 0:
            return 60.0
        return max(60.0, _HORIZON_DECAY / lam1)


def log_time_rule(lo: float, hi: float, nodes: int) -> tuple[np.ndarray, np.ndarray]:
    """Composite Gauss-Legendre in ``log t`` on [lo, hi], one panel per decade."""
    if hi <= lo:
        return np.empty(0), np.empty(0)
    a, b = math.log(lo), math.log(hi)
    panels = max(1, int(math.ceil((b - a) / math.log(10.0) - 1e-12)))
    xg, wg = gauss_legendre(nodes)
    edges = np.linspace(a, b, panels + 1)
    taus, ws = [], []
    for left, right in zip(edges[:-1], edges[1:]):
        half = 0.5 * (right - left)
        taus.append(left + half * (xg + 1.0))
        ws.append(half * wg)
    tau = np.concatenate(taus)
    t = np.exp(tau)
    return t, np.concatenate(ws) * t


def time_rule(quad: SubordinationQuad, lo: float, hi: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Nodes, weights and a below-split mask for ``int_lo^hi g(t) dt``."""
    split = min(max(quad.t0, lo), hi)
    t1, w1 = log_time_rule(lo, split, quad.small_nodes)
    t2, w2 = log_time_rule(split, hi, quad.large_nodes)
    small = np.concatenate([np.ones(t1.size, bool), np.zeros(t2.size, bool)])
    return np.concatenate([t1, t2]), np.concatenate([w1, w2]), small


# ---------------------------------------------------------------------------
# scalar multipliers
# ---------------------------------------------------------------------------


def _small_time_series(lam: np.ndarray, a: float, sigma: float) -> np.ndarray:
    # int_0^a (1 - e^{-lam t}) t^{-1-sigma} dt, alternating series in lam*a <= 0.1
    out = np.zeros_like(lam)
    term_pow = np.ones_like(lam)
    fact = 1.0
    for j in range(1, 30):
        term_pow = term_pow * lam
        fact *= j
        term = (-1) ** (j + 1) * term_pow * a ** (j - sigma) / (fact * (j - sigma))
        out += term
        if np.all(np.abs(term) <= 1e-18 * np.abs(out)):
            break
    return out


def power_multiplier(lam, sigma: float, quad: SubordinationQuad) -> np.ndarray:
    """``c_sigma int_0^inf (1 - e^{-lam t}) t^{-1-sigma} dt`` for each lam, 0 < sigma < 1."""
    if not 0.0 < sigma < 1.0:
        raise InvalidParameter("power multiplier needs 0 < sigma < 1")
    lam = np.atleast_1d(np.asarray(lam, dtype=float))
    out = np.zeros_like(lam)
    pos = lam > 0
    if not np.any(pos):
        return out
    lp = lam[pos]
    a = min(quad.t_min, 0.1 / float(lp.max()))
    T = quad.horizon(float(lp.min()))
    t, w, _ = time_rule(quad, a, T)
    g = -np.expm1(-np.outer(lp, t)) * t ** (-1.0 - sigma)
    main = g @ w
    tails = _small_time_series(lp, a, sigma) + T ** (-sigma) / sigma
    out[pos] = subordination_constant(sigma) * (main + tails)
    return out


def scalar_identity_defect(s: float, lam: float, quad: SubordinationQuad | None = None) -> float:
    """``|c_s int (1 - e^{-lam t}) t^{-1-s} dt - lam^s|``."""
    if not lam > 0:
        raise InvalidParameter("scalar identity needs lam > 0")
    quad = quad or SubordinationQuad()
    return abs(float(power_multiplier(lam, s, quad)[0]) - lam**s)


def poisson_multiplier(lam, s: float, y: float, quad: SubordinationQuad) -> np.ndarray:
    """``y^{2s}/(2^{2s} Gamma(s)) int e^{-lam t} e^{-y^2/4t} t^{-1-s} dt``; equals 1 at lam = 0."""
    from .special import gamma

    lam = np.atleast_1d(np.asarray(lam, dtype=float))
    out = np.ones_like(lam)
    pos = lam > 0
    if not np.any(pos):
        return out
    pref = y ** (2.0 * s) / (4.0**s * gamma(s))
    lo = y * y / (4.0 * _CUTOFF)
    for lv in np.unique(lam[pos]):
        hi = max(lo * 10.0, (_CUTOFF + 10.0) / lv)
        t, w, _ = time_rule(quad, lo, hi)
        g = np.exp(-lv * t - y * y / (4.0 * t)) * t ** (-1.0 - s)
        out[lam == lv] = pref * float(g @ w)
    return out


# ---------------------------------------------------------------------------
# subordinated kernels
# ---------------------------------------------------------------------------


def _stationary_tail(volume: float, sigma: float, eps: float, T: float) -> float:
    # (1/V) int_T^inf e^{-eps^2/4t} t^{-1-sigma} dt
    if eps == 0.0:
        return T ** (-sigma) / (sigma * volume)
    z = eps * eps / 4.0
    return z ** (-sigma) * lower_gamma(sigma, z / T) / volume


@dataclass(frozen=True, eq=False)
class PairSet:
    """Geometry of a batch of point pairs: offsets on flat models, angles on the sphere."""

    manifold: SpectralManifold
    offsets: np.ndarray | None
    cos_angle: np.ndarray | None
    distance: np.ndarray

    @classmethod
    def from_points(cls, m: SpectralManifold, x, y) -> "PairSet":
        px, py = np.broadcast_arrays(m.as_points(x), m.as_points(y))
        px = px.reshape(-1, m.chart_dim)
        py = py.reshape(-1, m.chart_dim)
        d = np.asarray(m.distance(px, py)).reshape(-1)
        if isinstance(m, Sphere2):
            ca = np.sum(m.unit_vectors(px) * m.unit_vectors(py), axis=-1)
            return cls(m, None, np.clip(ca, -1.0, 1.0), d)
        off = m.chart_offset(px, py).reshape(-1, m.chart_dim)
        return cls(m, off, None, d)

    @classmethod
    def from_offsets(cls, m: SpectralManifold, offsets) -> "PairSet":
        off = np.asarray(offsets, dtype=float)
        if off.ndim == 1:
            off = off[:, None]
        L = np.asarray(m.periods)
        red = off - L * np.floor(off / L + 0.5)
        return cls(m, off, None, np.sqrt(np.sum(red**2, axis=-1)))

    def kernel(self, t: np.ndarray, representation: str = "auto") -> np.ndarray:
        if self.cos_angle is not None:
            out = np.empty((t.size, self.distance.size))
            chunk = 4096
            for start in range(0, self.distance.size, chunk):
                sl = slice(start, start + chunk)
                out[:, sl] = zonal_kernel(t, self.cos_angle[sl], self.manifold.R)
            return out
        return flat_kernel_offsets(self.manifold, t, self.offsets, representation)


def kernel_time_integral(
    pairs: PairSet,
    sigma: float,
    eps: float,
    quad: SubordinationQuad,
    constant: float | None = None,
) -> np.ndarray:
    """``c int_0^inf K_M(t,x,y) e^{-eps^2/4t} t^{-1-sigma} dt`` for each pair.

    ``constant`` defaults to ``1/|Gamma(-sigma)|``.
    """
    m = pairs.manifold
    if sigma <= 0:
        raise InvalidParameter("subordination exponent must be positive")
    if eps < 0:
        raise InvalidParameter("regularization parameter must be nonnegative")
    d2 = pairs.distance**2
    if eps == 0.0 and np.any(d2 == 0.0):
        raise CoincidentPoints("unregularized kernel is singular at coincident points")
    c = subordination_constant(sigma) if constant is None else constant
    T = quad.horizon(m.lambda1)
    lo = min(float(d2.min()) + eps * eps, T) / (4.0 * _CUTOFF)
    t, w, small = time_rule(quad, lo, T)
    weight = w * t ** (-1.0 - sigma) * np.exp(-eps * eps / (4.0 * t))
    vals = np.zeros(pairs.distance.size)
    if np.any(small):
        vals += weight[small] @ pairs.kernel(t[small], quad.small_representation)
    if np.any(~small):
        vals += weight[~small] @ pairs.kernel(t[~small], "auto")
    vals += _stationary_tail(m.volume, sigma, eps, T)
    return c * vals


def checked_kernel_integral(
    pairs: PairSet, sigma: float, eps: float, quad: SubordinationQuad, rtol: float = 1e-7
) -> tuple[np.ndarray, np.ndarray]:
    """Kernel integral together with the difference to a coarser rule as error estimate."""
    fine = kernel_time_integral(pairs, sigma, eps, quad)
    coarse = kernel_time_integral(pairs, sigma, eps, quad.refined(0.5))
    err = np.abs(fine - coarse)
    if np.any(err > rtol * np.abs(fine) + 1e-300):
        raise QuadratureNotConverged(
            f"time quadrature estimate {float(np.max(err / np.abs(fine))):.2e} above {rtol:g}"
        )
    return fine, err


def euclidean_time_integral(n: int, sigma: float, r: float, quad: SubordinationQuad) -> float:
    """``c_sigma int (4 pi t)^{-n/2} e^{-r^2/4t} t^{-1-sigma} dt`` by quadrature plus closed-form tail."""
    if not r > 0:
        raise InvalidParameter("r must be positive")
    T = max(quad.horizon(), 60.0 * r * r)
    lo = r * r / (4.0 * _CUTOFF)
    t, w, _ = time_rule(quad, lo, T)
    g = (4.0 * math.pi * t) ** (-n / 2.0) * np.exp(-r * r / (4.0 * t)) * t ** (-1.0 - sigma)
    main = float(g @ w)
    z = r * r / 4.0
    a = n / 2.0 + sigma
    tail = (4.0 * math.pi) ** (-n / 2.0) * z ** (-a) * lower_gamma(a, z / T)
    return subordination_constant(sigma) * (main + tail)
