"""Heat kernel and heat semigroup on the supported manifolds.

Two families of evaluators live here:

* the truncated spectral sum ``sum_{k<K} e^{-t lam_k} phi_k(x) phi_k(y)``
  behind :class:`HeatKernelEvaluator`, with a certified tail bound;
* full-spectrum "reference" kernels used by the time integrals elsewhere:
  products of one-dimensional theta functions on flat models (image sum for
  small times, cosine series for large times) and the zonal Legendre series
  on the sphere with a time-adaptive degree cutoff.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidParameter, TailBoundViolation
from .manifold import (
    Circle,
    FlatTorus,
    QuadratureRule,
    SpectralFunction,
    SpectralManifold,
    Sphere2,
)

SPHERE_MIN_TIME = 0.05
IMAGE_SWITCH_TIME = 0.05
# exp(-_DECAY) is below double-precision relevance
_DECAY = 41.4


# ---------------------------------------------------------------------------
# reference kernels (full spectrum)
# ---------------------------------------------------------------------------


def theta_kernel_1d(t, offsets, L: float, representation: str = "auto") -> np.ndarray:
    """Heat kernel of the circle of length L at signed arclength offsets.

    Returns an array of shape (len(t), len(offsets)). ``representation``
    selects the image sum, the cosine series, or (``"auto"``) the faster of
    the two for each t.
    """
    t = np.atleast_1d(np.asarray(t, dtype=float))
    d = np.atleast_1d(np.asarray(offsets, dtype=float))
    d = d - L * np.floor(d / L + 0.5)
    out = np.empty((t.size, d.size))
    tau = t * (2.0 * math.pi / L) ** 2
    if representation == "image":
        use_image = np.ones(t.size, dtype=bool)
    elif representation == "spectral":
        use_image = np.zeros(t.size, dtype=bool)
    else:
        use_image = tau < 1.0

    idx = np.flatnonzero(use_image)
    if idx.size:
        ti = t[idx][:, None]
        J = int(math.ceil(math.sqrt(4.0 * _DECAY * float(t[idx].max())) / L)) + 1
        acc = np.exp(-(d[None, :] ** 2) / (4.0 * ti))
        for j in range(1, J + 1):
            acc += np.exp(-((d[None, :] + j * L) ** 2) / (4.0 * ti))
            acc += np.exp(-((d[None, :] - j * L) ** 2) / (4.0 * ti))
        out[idx] = acc / np.sqrt(4.0 * math.pi * ti)

    idx = np.flatnonzero(~use_image)
    if idx.size:
        ta = tau[idx][:, None]
        kmax = int(math.ceil(math.sqrt(_DECAY / float(tau[idx].min())))) + 1
        acc = np.ones((idx.size, d.size))
        phase = 2.0 * math.pi * d[None, :] / L
        for k in range(1, kmax + 1):
            acc += 2.0 * np.exp(-ta * k * k) * np.cos(k * phase)
        out[idx] = acc / L
    return out


def flat_kernel_offsets(m: SpectralManifold, t, offsets, representation: str = "auto") -> np.ndarray:
    """Flat-model heat kernel at signed offset vectors (shape (P, n)) for times t."""
    offsets = np.asarray(offsets, dtype=float)
    if offsets.ndim == 1:
        offsets = offsets[:, None]
    periods = m.periods
    out = None
    for axis, L in enumerate(periods):
        f = theta_kernel_1d(t, offsets[:, axis], L, representation)
        out = f if out is None else out * f
    return out


def legendre_table(x, lmax: int) -> np.ndarray:
    """Ordinary Legendre polynomials ``P_l(x)`` for l = 0..lmax, shape (lmax+1, len(x))."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    P = np.empty((lmax + 1, x.size))
    P[0] = 1.0
    if lmax >= 1:
        P[1] = x
    for l in range(1, lmax):
        P[l + 1] = ((2 * l + 1) * x * P[l] - l * P[l - 1]) / (l + 1)
    return P


def sphere_degree_cutoff(t_min: float, R: float) -> int:
    return int(math.ceil(R * math.sqrt(_DECAY / t_min))) + 8


def zonal_kernel(t, cos_angle, R: float) -> np.ndarray:
    """Sphere heat kernel as a function of the cosine of the angular separation."""
    t = np.atleast_1d(np.asarray(t, dtype=float))
    lmax = sphere_degree_cutoff(float(t.min()), R)
    P = legendre_table(np.clip(cos_angle, -1.0, 1.0), lmax)
    l = np.arange(lmax + 1)
    E = (2 * l + 1) / (4.0 * math.pi * R * R) * np.exp(-np.outer(t, l * (l + 1.0)) / (R * R))
    return E @ P


def reference_kernel(m: SpectralManifold, t, x, y, representation: str = "auto") -> np.ndarray:
    """Full-spectrum heat kernel, shape (len(t), num_pairs)."""
    if isinstance(m, Sphere2):
        a = m.unit_vectors(x)
        b = m.unit_vectors(y)
        a, b = np.broadcast_arrays(a, b)
        cosg = np.sum(a * b, axis=-1).ravel()
        return zonal_kernel(t, cosg, m.R)
    off = m.chart_offset(x, y)
    off = np.broadcast_to(off, np.broadcast_shapes(off.shape)).reshape(-1, m.chart_dim)
    return flat_kernel_offsets(m, t, off, representation)


# ---------------------------------------------------------------------------
# truncated spectral evaluator
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class HeatKernelEvaluator:
    """Truncated spectral heat kernel with an absolute tail tolerance.

    The tail bound at time t is the full-spectrum value of
    ``sum_k e^{-t lam_k} sup_x |phi_k(x)|^2`` (computed in closed form through
    theta sums or the zonal series) minus the contribution of every
    eigenspace that is completely contained in the first K modes.
    """

    manifold: SpectralManifold
    K: int
    tol: float = 1e-12
    eigenvalues: np.ndarray = field(init=False, repr=False)
    _rule_integrals: dict = field(init=False, repr=False, default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "eigenvalues", self.manifold.eigenvalues(self.K))

    def tail_bound(self, t: float) -> float:
        m = self.manifold
        lam_next = float(m.eigenvalues(self.K + 1)[self.K])
        lam = self.eigenvalues
        w = m.level_sup_weights(self.K)
        complete = lam < lam_next
        kept = float(np.sum(np.exp(-t * lam[complete]) * w[complete]))
        return max(m.heat_trace_density(t) - kept, 0.0)

    def check(self, t: float) -> None:
        if not t > 0:
            raise InvalidParameter("heat kernel needs t > 0")
        if isinstance(self.manifold, Sphere2) and t < SPHERE_MIN_TIME:
            raise InvalidParameter(
                f"sphere heat kernel is validated for t >= {SPHERE_MIN_TIME}"
            )
        bound = self.tail_bound(t)
        if bound > self.tol:
            raise TailBoundViolation(
                f"spectral tail {bound:.3e} exceeds {self.tol:g} at t={t:g} with K={self.K}"
            )

    def uses_images(self, t: float) -> bool:
        return self.manifold.is_flat and t < IMAGE_SWITCH_TIME

    def __call__(self, t: float, x, y) -> np.ndarray:
        return heat_kernel(self, t, x, y)


def default_truncation(m: SpectralManifold, t_min: float = 0.05, tol: float = 1e-12) -> int:
    """Smallest K ending on a complete eigenspace whose tail at t_min is below tol."""
    trace = m.heat_trace_density(t_min)
    cap = 64
    while True:
        lam = m.eigenvalues(cap + 1)
        kept = np.cumsum(np.exp(-t_min * lam) * m.level_sup_weights(cap + 1))
        for K in np.flatnonzero(lam[1:] > lam[:-1]) + 1:
            if trace - kept[K - 1] <= tol:
                return int(K)
        cap *= 2


def make_heat_evaluator(m: SpectralManifold, t_min: float = 0.05, tol: float = 1e-12) -> HeatKernelEvaluator:
    return HeatKernelEvaluator(m, default_truncation(m, t_min, tol), tol)


def heat_kernel(ev: HeatKernelEvaluator, t: float, x, y):
    """``K_M(t, x, y)``; symmetric in (x, y) bit-for-bit.

    On flat models with t below the switch time the image sum is used, which
    needs no truncation.
    """
    m = ev.manifold
    if ev.uses_images(t):
        if not t > 0:
            raise InvalidParameter("heat kernel needs t > 0")
        # offsets y - x and x - y give identical values (even kernel), keep symmetry exact
        px = m.as_points(x)
        py = m.as_points(y)
        lo = np.minimum(px, py)
        hi = np.maximum(px, py)
        vals = reference_kernel(m, np.array([t]), lo, hi, "image")[0]
        return _shape_out(vals, x, y, m)
    ev.check(t)
    fx = m.eigenfunctions(x, ev.K)
    fy = m.eigenfunctions(y, ev.K)
    damp = np.exp(-t * ev.eigenvalues)
    vals = np.sum(damp * (fx * fy), axis=-1)
    return _shape_out(vals, x, y, m)


def _shape_out(vals, x, y, m):
    vals = np.asarray(vals)
    if vals.size == 1 and np.ndim(x) <= (0 if m.chart_dim == 1 else 1) and np.ndim(y) <= (
        0 if m.chart_dim == 1 else 1
    ):
        return float(vals.ravel()[0])
    return vals


def heat_apply(ev: HeatKernelEvaluator, t: float, u: SpectralFunction) -> SpectralFunction:
    """Coefficient-wise damping ``u_k -> e^{-t lam_k} u_k``."""
    if t < 0:
        raise InvalidParameter("heat semigroup needs t >= 0")
    if t == 0:
        return u.with_coeffs(u.coeffs)
    lam = u.manifold.eigenvalues(u.K)
    return u.with_coeffs(np.exp(-t * lam) * u.coeffs)


def eigenfunction_integrals(m: SpectralManifold, K: int, rule: QuadratureRule, chunk: int = 4096) -> np.ndarray:
    """``sum_j w_j phi_k(y_j)`` for k < K, accumulated in fixed node chunks."""
    acc = np.zeros(K)
    for start in range(0, len(rule), chunk):
        sl = slice(start, start + chunk)
        acc += rule.weights[sl] @ m.eigenfunctions(rule.nodes[sl], K)
    return acc


def mass_defect(ev: HeatKernelEvaluator, t: float, x, rule: QuadratureRule | None = None) -> float:
    """``|int_M K_M(t, x, y) dmu(y) - 1|`` under the default rule."""
    m = ev.manifold
    rule = rule or m.quadrature(m.default_order(ev.K))
    if ev.uses_images(t):
        px = np.broadcast_to(m.as_points(x)[0], rule.nodes.shape)
        vals = reference_kernel(m, np.array([t]), px, rule.nodes, "image")[0]
        return abs(float(np.dot(rule.weights, vals)) - 1.0)
    ev.check(t)
    key = (len(rule), float(rule.weights.sum()), rule.nodes.tobytes()[:256])
    b = ev._rule_integrals.get(key)
    if b is None:
        b = ev._rule_integrals.setdefault(key, eigenfunction_integrals(m, ev.K, rule))
    fx = m.eigenfunctions(x, ev.K).reshape(-1)
    total = float(np.sum(np.exp(-t * ev.eigenvalues) * fx * b))
    return abs(total - 1.0)


def chapman_kolmogorov_defect(ev: HeatKernelEvaluator, t: float, s: float, x, y, rule: QuadratureRule | None = None) -> float:
    """``|int K(t,x,z) K(s,z,y) dmu(z) - K(t+s,x,y)|`` under a quadrature rule."""
    m = ev.manifold
    ev.check(min(t, s))
    rule = rule or m.quadrature(m.default_order(ev.K))
    px = np.broadcast_to(m.as_points(x)[0], rule.nodes.shape)
    py = np.broadcast_to(m.as_points(y)[0], rule.nodes.shape)
    a = heat_kernel(ev, t, px, rule.nodes)
    b = heat_kernel(ev, s, rule.nodes, py)
    lhs = float(np.dot(rule.weights, a * b))
    return abs(lhs - float(np.ravel(heat_kernel(ev, t + s, x, y))[0]))


def gaussian_bound_ratio(ev: HeatKernelEvaluator, t: float, x, y, C: float = 4.0) -> float:
    """``K_M(t,x,y) t^{n/2} exp(d(x,y)^2 / (C t))``."""
    m = ev.manifold
    d = float(np.ravel(m.distance(x, y))[0])
    k = float(np.ravel(heat_kernel(ev, t, x, y))[0])
    return k * t ** (m.dim / 2.0) * math.exp(d * d / (C * t))


def stationary_deviation(ev: HeatKernelEvaluator, t: float, points) -> float:
    """``max |K_M(t, x, y) - 1/Vol|`` over all pairs drawn from ``points``."""
    m = ev.manifold
    pts = m.as_points(points)
    ev.check(t)
    F = m.eigenfunctions(pts, ev.K)
    G = (F * np.exp(-t * ev.eigenvalues)) @ F.T
    return float(np.max(np.abs(G - 1.0 / m.volume)))


def fit_decay_rate(times, values) -> float:
    """Least-squares slope of ``-log(values)`` against ``times``."""
    times = np.asarray(times, dtype=float)
    logs = np.log(np.asarray(values, dtype=float))
    slope = np.polyfit(times, logs, 1)[0]
    return float(-slope)
