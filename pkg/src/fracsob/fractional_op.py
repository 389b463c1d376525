"""Three realizations of the fractional Laplacian ``(-Delta)^s``.

* spectral: ``u_k -> lam_k^s u_k``;
* semigroup / singular integral: the subordinated kernel
  ``K^s(x,y) = c_s int K_M(t,x,y) t^{-1-s} dt`` with ``c_s = 1/|Gamma(-s)|``
  and its regularization by ``exp(-eps^2/4t)``, applied as a principal value
  on a fine periodic grid and extrapolated in eps;
* extension: the Poisson-kernel solution ``U(x, y)`` of the degenerate
  extension problem, whose weighted normal derivative at ``y = 0`` is
  extrapolated from a decreasing height schedule.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import (
    CoincidentPoints,
    InvalidParameter,
    NonConvergingSchedule,
    QuadratureNotConverged,
)
from .heat_kernel import theta_kernel_1d
from .manifold import SpectralFunction, SpectralManifold
from .special import (
    dtn_constant,
    euclidean_kernel_coefficient,
    gamma,
    subordination_constant,
)
from .subordination import (
    PairSet,
    SubordinationQuad,
    _stationary_tail,
    checked_kernel_integral,
    euclidean_time_integral,
    kernel_time_integral,
    poisson_multiplier,
    power_multiplier,
    scalar_identity_defect,
    time_rule,
)

__all__ = [
    "FracParams",
    "SubordinationQuad",
    "frac_apply_spectral",
    "scalar_identity_defect",
    "frac_apply_semigroup",
    "frac_kernel",
    "frac_kernel_reg",
    "euclidean_kernel_check",
    "frac_apply_singular",
    "poisson_kernel",
    "poisson_mass",
    "extension_value",
    "dtn_value",
    "limit_defect_s1",
    "limit_defect_s0",
    "richardson_limit",
]

SEMIGROUP_TOL = 1e-7


@dataclass(frozen=True)
class FracParams:
    s: float

    def __post_init__(self):
        if not 0.0 < self.s < 1.0:
            raise InvalidParameter("fractional order must satisfy 0 < s < 1")

    @property
    def c_s(self) -> float:
        return subordination_constant(self.s)

    @property
    def dtn_constant(self) -> float:
        return dtn_constant(self.s)


# ---------------------------------------------------------------------------
# spectral and semigroup forms
# ---------------------------------------------------------------------------


def frac_apply_spectral(p: FracParams, u: SpectralFunction) -> SpectralFunction:
    lam = u.eigenvalues
    return u.with_coeffs(np.power(lam, p.s, where=lam > 0, out=np.zeros_like(lam)) * u.coeffs)


def frac_apply_semigroup(p: FracParams, u: SpectralFunction, quad: SubordinationQuad | None = None) -> SpectralFunction:
    """Per-mode time quadrature of ``c_s int (1 - e^{-lam t}) t^{-1-s} dt``."""
    quad = quad or SubordinationQuad()
    lam = u.eigenvalues
    mult = power_multiplier(lam, p.s, quad)
    exact = np.power(lam, p.s, where=lam > 0, out=np.zeros_like(lam))
    defect = float(np.max(np.abs(mult - exact)))
    if defect > SEMIGROUP_TOL:
        raise QuadratureNotConverged(f"mode defect {defect:.2e} above {SEMIGROUP_TOL:g}")
    return u.with_coeffs(mult * u.coeffs)


# ---------------------------------------------------------------------------
# kernels
# ---------------------------------------------------------------------------


def frac_kernel(m: SpectralManifold, p: FracParams, x, y, quad: SubordinationQuad | None = None):
    """``K^s_M(x, y)`` for x != y; nonnegative and symmetric."""
    return _kernel(m, p.s, 0.0, x, y, quad)


def frac_kernel_reg(m: SpectralManifold, p: FracParams, eps: float, x, y, quad: SubordinationQuad | None = None):
    """``K^s_{M,eps}(x, y)`` with the ``exp(-eps^2/4t)`` damping, eps > 0."""
    if not eps > 0:
        raise InvalidParameter("regularization needs eps > 0")
    return _kernel(m, p.s, eps, x, y, quad)


def _kernel(m, sigma, eps, x, y, quad, constant=None):
    quad = quad or SubordinationQuad()
    pairs = PairSet.from_points(m, x, y)
    if eps == 0.0 and np.any(pairs.distance == 0.0):
        raise CoincidentPoints("x and y coincide")
    if constant is None:
        vals, _ = checked_kernel_integral(pairs, sigma, eps, quad)
    else:
        vals = kernel_time_integral(pairs, sigma, eps, quad, constant)
    return float(vals[0]) if vals.size == 1 else vals


def euclidean_kernel_check(n: int, s: float, r: float, quad: SubordinationQuad | None = None) -> tuple[float, float]:
    """Subordinated Gaussian versus ``alpha_{n,s} r^{-(n+2s)}``."""
    if n not in (1, 2, 3):
        raise InvalidParameter("n must be 1, 2 or 3")
    quad = quad or SubordinationQuad()
    value = euclidean_time_integral(n, s, r, quad)
    closed = euclidean_kernel_coefficient(n, s) * r ** (-(n + 2.0 * s))
    return value, closed


# ---------------------------------------------------------------------------
# principal value on periodic grids
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LimitEstimate:
    value: float
    order: float
    correction: float
    samples: tuple[float, ...]


def richardson_limit(params, values) -> LimitEstimate:
    """Extrapolate ``F(h) = F0 + C h^q`` to h = 0 from a geometric schedule.

    The order q is fitted from the last three samples. Successive differences
    must shrink strictly over a tail of at least three samples; leading
    samples outside that tail are treated as pre-asymptotic and ignored.
    """
    h = np.asarray(params, dtype=float)
    F = np.asarray(values, dtype=float)
    if h.size < 3:
        raise InvalidParameter("schedule needs at least 3 entries")
    if np.any(np.diff(h) >= 0) or np.any(h <= 0):
        raise InvalidParameter("schedule must decrease strictly towards 0")
    ratios = h[:-1] / h[1:]
    if np.max(np.abs(ratios / ratios[0] - 1.0)) > 1e-9:
        raise InvalidParameter("schedule must be geometric")
    rho = float(ratios[0])
    diffs = F[:-1] - F[1:]
    scale = max(np.max(np.abs(F)), 1e-300)
    if np.all(np.abs(diffs) <= 1e-14 * scale):
        return LimitEstimate(float(F[-1]), float("nan"), 0.0, tuple(F))
    mags = np.abs(diffs)
    # drop a pre-asymptotic head: keep the longest tail with contracting differences
    start = len(mags) - 1
    while start > 0 and mags[start] < mags[start - 1]:
        start -= 1
    if len(mags) - start < 2:
        raise NonConvergingSchedule(f"differences do not contract: {mags}")
    q = math.log(mags[-2] / mags[-1]) / math.log(rho)
    corr = float(diffs[-1] / (rho**q - 1.0))
    return LimitEstimate(float(F[-1] - corr), q, abs(corr), tuple(F))


def default_eps_schedule(dim: int) -> np.ndarray:
    jmax = 5 if dim == 1 else 4
    return 0.2 * 2.0 ** (-np.arange(jmax + 1))


def _grid_size(L: float, eps_min: float, cap: int) -> int:
    need = 6.0 * L / eps_min
    return min(cap, 1 << int(math.ceil(math.log2(need))))


def _evaluate_chunked(u: SpectralFunction, pts: np.ndarray, chunk: int = 1 << 16) -> np.ndarray:
    out = np.empty(len(pts))
    for start in range(0, len(pts), chunk):
        out[start : start + chunk] = u.evaluate(pts[start : start + chunk])
    return out


def singular_integral_samples(
    p: FracParams,
    u: SpectralFunction,
    x,
    eps_schedule,
    quad: SubordinationQuad | None = None,
    grid_cap: int | None = None,
) -> np.ndarray:
    """``int (u(x) - u(y)) K^s_{M,eps}(x, y) dmu(y)`` for each eps on a grid through x."""
    m = u.manifold
    if not m.is_flat:
        raise NotImplementedError("singular-integral route is implemented for flat models")
    quad = quad or SubordinationQuad()
    eps = np.asarray(eps_schedule, dtype=float)
    if np.any(eps <= 0):
        raise InvalidParameter("eps schedule must be positive")
    n = m.dim
    cap = grid_cap or (1 << 13 if n == 1 else 1 << 11 if n == 2 else 1 << 7)
    periods = m.periods
    sizes = [_grid_size(L, float(eps.min()), cap) for L in periods]
    x0 = m.as_points(x).reshape(-1)
    steps = [L / N for L, N in zip(periods, sizes)]
    cell = float(np.prod(steps))

    T = quad.horizon(m.lambda1)
    lo = float(eps.min()) ** 2 / 200.0
    t, w, _ = time_rule(quad, lo, T)
    base = w * t ** (-1.0 - p.s)
    damp = np.exp(-np.outer(eps**2, 1.0 / (4.0 * t)))  # (n_eps, Nt)
    tails = np.array([_stationary_tail(m.volume, p.s, e, T) for e in eps])

    # chart scaling: circle points are angles, offsets are arclength
    chart_scale = m.R if hasattr(m, "R") else 1.0
    axes = [x0[i] + np.arange(N) * (L / N) / chart_scale for i, (L, N) in enumerate(zip(periods, sizes))]
    offsets = [np.arange(N) * (L / N) for L, N in zip(periods, sizes)]
    mesh = np.meshgrid(*axes, indexing="ij")
    pts = np.stack([g.ravel() for g in mesh], axis=-1)
    ux = float(u.evaluate(x0[None, :])[0])
    D = (ux - _evaluate_chunked(u, pts)).reshape(sizes)
    thetas = [theta_kernel_1d(t, off, L, quad.small_representation) for off, L in zip(offsets, periods)]

    # contract D with the per-axis theta tables for every time node
    if n == 1:
        S = thetas[0] @ D  # (Nt,)
    elif n == 2:
        A = D @ thetas[1].T  # (N1, Nt)
        S = np.einsum("ti,it->t", thetas[0], A)
    else:
        A = np.tensordot(D, thetas[2], axes=([2], [1]))  # (N1, N2, Nt)
        A = np.einsum("ijt,tj->it", A, thetas[1])
        S = np.einsum("ti,it->t", thetas[0], A)
    total = float(np.sum(D))
    vals = (damp * base) @ S + tails * total
    return subordination_constant(p.s) * vals * cell


def frac_apply_singular(
    p: FracParams,
    u: SpectralFunction,
    x,
    eps_schedule=None,
    quad: SubordinationQuad | None = None,
    grid_cap: int | None = None,
    detailed: bool = False,
):
    """Principal-value singular integral at x, Richardson-extrapolated to eps = 0."""
    eps = np.asarray(
        default_eps_schedule(u.manifold.dim) if eps_schedule is None else eps_schedule, dtype=float
    )
    samples = singular_integral_samples(p, u, x, eps, quad, grid_cap)
    est = richardson_limit(eps, samples)
    return est if detailed else est.value


# ---------------------------------------------------------------------------
# extension and Dirichlet-to-Neumann
# ---------------------------------------------------------------------------


def _poisson_constant(s: float, y: float) -> float:
    return y ** (2.0 * s) / (4.0**s * gamma(s))


def poisson_kernel(m: SpectralManifold, p: FracParams, x, y: float, xi, quad: SubordinationQuad | None = None):
    """``P_s(x, y; xi)`` through the subordinated heat kernel."""
    if not y > 0:
        raise InvalidParameter("height y must be positive")
    return _kernel(m, p.s, y, x, xi, quad, constant=_poisson_constant(p.s, y))


def poisson_mass(m: SpectralManifold, p: FracParams, x, y: float, quad: SubordinationQuad | None = None, order: int | None = None) -> float:
    """``int_M P_s(x, y; xi) dmu(xi)`` on a rule fine enough for the kernel at height y."""
    if not y > 0:
        raise InvalidParameter("height y must be positive")
    quad = quad or SubordinationQuad()
    if order is None:
        # node spacing ~ y/10 resolves the kernel at every time with weight above e^-50
        extent = max(m.periods) if m.is_flat else 2.0 * math.pi * m.R
        order = max(64, 1 << int(math.ceil(math.log2(extent / (0.09 * y)))))
        if not m.is_flat:
            order = min(order, 256)
    rule = m.quadrature(order)
    if m.is_flat:
        # the product kernel factorizes over axes on a product grid
        x0 = m.as_points(x).reshape(-1)
        chart_scale = m.R if hasattr(m, "R") else 1.0
        T = quad.horizon(m.lambda1)
        lo = y * y / 200.0
        t, w, small = time_rule(quad, lo, T)
        weight = w * t ** (-1.0 - p.s) * np.exp(-y * y / (4.0 * t))
        prod = np.ones(t.size)
        for i, L in enumerate(m.periods):
            N = rule.grid_shape[i]
            nodes = np.arange(N) * (L / N)
            off = nodes - x0[i] * chart_scale
            prod = prod * (theta_kernel_1d(t, off, L).sum(axis=1) * (L / N))
        total = float(weight @ prod) + _stationary_tail(1.0, p.s, y, T)
        return _poisson_constant(p.s, y) * total
    pairs = PairSet.from_points(m, np.broadcast_to(m.as_points(x)[0], rule.nodes.shape), rule.nodes)
    vals = kernel_time_integral(pairs, p.s, y, quad, _poisson_constant(p.s, y))
    return float(rule.weights @ vals)


def extension_value(p: FracParams, f: SpectralFunction, x, y: float, quad: SubordinationQuad | None = None):
    """``U(x, y) = sum_k u_k M_k(y) phi_k(x)`` with the Poisson multipliers ``M_k``."""
    if not y > 0:
        raise InvalidParameter("height y must be positive")
    quad = quad or SubordinationQuad()
    mult = poisson_multiplier(f.eigenvalues, p.s, y, quad)
    vals = f.manifold.eigenfunctions(x, f.K) @ (mult * f.coeffs)
    return float(vals.ravel()[0]) if np.size(vals) == 1 else vals


def dtn_samples(p: FracParams, f: SpectralFunction, x, y_schedule, quad: SubordinationQuad | None = None) -> np.ndarray:
    """``-c(s) y^{1-2s} dU/dy`` by 4th-order central differences at step y/8."""
    out = []
    for y in np.asarray(y_schedule, dtype=float):
        h = y / 8.0
        U = [extension_value(p, f, x, y + j * h, quad) for j in (-2, -1, 1, 2)]
        dU = (8.0 * (U[2] - U[1]) - (U[3] - U[0])) / (12.0 * h)
        out.append(-p.dtn_constant * y ** (1.0 - 2.0 * p.s) * np.asarray(dU))
    return np.array(out)


def dtn_value(p: FracParams, f: SpectralFunction, x, y_schedule=None, quad: SubordinationQuad | None = None, detailed: bool = False):
    """Dirichlet-to-Neumann value at x, extrapolated along the height schedule."""
    ys = np.asarray(
        0.2 * 2.0 ** (-np.arange(6)) if y_schedule is None else y_schedule, dtype=float
    )
    samples = dtn_samples(p, f, x, ys, quad)
    est = richardson_limit(ys, samples)
    return est if detailed else est.value


# ---------------------------------------------------------------------------
# limits in s
# ---------------------------------------------------------------------------


def _max_node(u: SpectralFunction, coeffs: np.ndarray) -> float:
    rule = u.default_rule()
    vals = u.manifold.eigenfunctions(rule.nodes, u.K) @ coeffs
    return float(np.max(np.abs(vals)))


def limit_defect_s1(u: SpectralFunction, s_list) -> list[float]:
    """``max |(-Delta)^s u - (-Delta) u|`` over nodes for each s."""
    lam = u.eigenvalues
    return [
        _max_node(u, (frac_apply_spectral(FracParams(s), u).coeffs - lam * u.coeffs))
        for s in s_list
    ]


def limit_defect_s0(u: SpectralFunction, s_list) -> list[float]:
    """``max |(-Delta)^s u - (u - mean(u))|`` over nodes for each s."""
    centered = u.coeffs.copy()
    centered[0] = 0.0
    return [
        _max_node(u, frac_apply_spectral(FracParams(s), u).coeffs - centered) for s in s_list
    ]
