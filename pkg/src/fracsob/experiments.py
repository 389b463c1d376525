"""Registry of named numerical experiments.

Each experiment expands a validated configuration into an ordered list of
tasks; every task returns report rows. Tasks are independent, so the runner
may execute them on a worker pool while keeping the row order fixed.

Row conventions: for inequality instances ``lhs`` and ``rhs`` are the two
sides and ``deficit = rhs - lhs``. For tolerance checks ``lhs`` is the
measured discrepancy, ``rhs`` the tolerance, and the row passes when
``deficit >= 0``. The ``check`` entry in ``extra`` names the row type.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import constants as cst
from .errors import InvalidParameter
from .fractional_op import (
    FracParams,
    dtn_value,
    euclidean_kernel_check,
    extension_value,
    frac_apply_semigroup,
    frac_apply_singular,
    frac_apply_spectral,
    limit_defect_s0,
    limit_defect_s1,
    poisson_mass,
)
from .heat_kernel import (
    chapman_kolmogorov_defect,
    gaussian_bound_ratio,
    heat_apply,
    heat_kernel,
    make_heat_evaluator,
    HeatKernelEvaluator,
    mass_defect,
    reference_kernel,
    stationary_deviation,
    fit_decay_rate,
)
from .manifold import ManifoldSpec, SpectralFunction, SpectralManifold, constant, make_manifold, random_band_limited
from .sobolev import (
    WspParams,
    distance_sample,
    embedding_ratio,
    euclidean_wsp_check,
    gagliardo_seminorm,
    geodesic_seminorm,
    kernel_bound_ratio,
    lp_norm_grid,
    make_pair_quadrature,
    poincare_proof_bound,
    poincare_ratio,
)
from .special import dtn_constant, euclidean_kernel_coefficient
from .subordination import SubordinationQuad, scalar_identity_defect

NAN = float("nan")
GRID_KEYS = ("s", "p", "q", "eps", "t", "lam", "r", "n", "y", "A")


@dataclass
class Row:
    experiment: str
    manifold: str
    s: float
    p: float
    q: float
    extra: dict
    lhs: float
    rhs: float
    deficit: float
    err_est: float
    passed: bool
    failure: bool = False

    def extra_text(self) -> str:
        parts = []
        for k in sorted(self.extra):
            v = self.extra[k]
            parts.append(f"{k}={'%.17g' % v if isinstance(v, float) else v}")
        return ";".join(parts)


@dataclass
class Context:
    name: str
    manifold: SpectralManifold | None
    spec: ManifoldSpec | None
    grid: dict
    truncation: int | None
    order: int | None
    seed: int

    @property
    def label(self) -> str:
        return self.spec.label() if self.spec is not None else "none"

    def rng(self, *salt: int) -> np.random.Generator:
        return np.random.default_rng([self.seed, *salt])

    def row(self, check: str, lhs, rhs, *, s=NAN, p=NAN, q=NAN, err=0.0, passed=None, deficit=None, label=None, **extra) -> Row:
        lhs = float(lhs)
        rhs = float(rhs)
        d = rhs - lhs if deficit is None else float(deficit)
        ok = bool(d >= 0) if passed is None else bool(passed)
        extra = {"check": check, **extra}
        return Row(self.name, label or self.label, float(s), float(p), float(q), extra, lhs, rhs, d, float(err), ok)

    def tolerance_row(self, check: str, measured, tol, **kw) -> Row:
        measured = float(measured)
        return self.row(check, measured, tol, passed=bool(np.isfinite(measured) and measured <= tol), **kw)


Task = Callable[[], list]


@dataclass(frozen=True)
class Experiment:
    name: str
    description: str
    defaults: dict
    manifolds: tuple[str, ...]
    default_manifold: ManifoldSpec | None
    build: Callable[[Context], list]
    validate: Callable[[Context], None] = lambda ctx: None
    finalize: Callable[[Context, list], list] | None = None
    grid_keys: tuple[str, ...] = ()


REGISTRY: dict[str, Experiment] = {}


def register(name, description, *, defaults=None, manifolds=("circle", "flat_torus", "sphere2"), default_manifold=ManifoldSpec.circle(1.0), validate=None, finalize=None):
    defaults = defaults or {}

    def deco(fn):
        REGISTRY[name] = Experiment(
            name,
            description,
            defaults,
            manifolds,
            default_manifold,
            fn,
            validate or (lambda ctx: None),
            finalize,
            tuple(defaults),
        )
        return fn

    return deco


def list_experiments() -> list[tuple[str, str]]:
    return [(name, REGISTRY[name].description) for name in sorted(REGISTRY)]


# ---------------------------------------------------------------------------
# shared helpers
# ---------------------------------------------------------------------------


def _require(cond: bool, message: str) -> None:
    if not cond:
        raise InvalidParameter(message)


def _check_orders(ctx: Context, *keys: str) -> None:
    for k in keys:
        for v in ctx.grid.get(k, []):
            if k == "s":
                _require(0.0 < v < 1.0, f"s = {v} outside (0, 1)")
            elif k == "p":
                _require(v >= 1.0, f"p = {v} below 1")
            elif k == "t":
                _require(v > 0.0, f"t = {v} must be positive")


def _subcritical_pairs(ctx: Context) -> list[tuple[float, float]]:
    n = ctx.manifold.dim
    pairs = [(s, p) for s in ctx.grid["s"] for p in ctx.grid["p"]]
    for s, p in pairs:
        _require(s * p < n, f"(s, p) = ({s}, {p}) is not subcritical on a {n}-dimensional manifold")
    return pairs


def _evaluator(ctx: Context, t_min: float = 0.05) -> HeatKernelEvaluator:
    if ctx.truncation:
        return HeatKernelEvaluator(ctx.manifold, int(ctx.truncation))
    return make_heat_evaluator(ctx.manifold, t_min=max(t_min, 0.05))


def _pair_order(ctx: Context) -> int:
    if ctx.order:
        return int(ctx.order)
    return {1: 256, 2: 32, 3: 16}[ctx.manifold.dim]


def _flat_only(ctx: Context) -> None:
    _require(ctx.manifold.is_flat, f"{ctx.name} needs a circle or flat torus")


def _first_mode(m: SpectralManifold) -> SpectralFunction:
    coeffs = np.zeros(2)
    coeffs[1] = 1.0
    return SpectralFunction(m, coeffs)


def _sup_scale(f: SpectralFunction) -> float:
    rule = f.default_rule()
    return float(np.max(np.abs(f.evaluate(rule.nodes))))


# ---------------------------------------------------------------------------
# heat kernel
# ---------------------------------------------------------------------------


def _validate_heat(ctx: Context) -> None:
    _check_orders(ctx, "t")
    if not ctx.manifold.is_flat:
        _require(min(ctx.grid["t"]) >= 0.05, "the sphere heat kernel is validated for t >= 0.05")


@register(
    "heat-mass",
    "unit mass of the heat kernel, max over sample points of |int K dmu - 1|",
    defaults={"t": [0.05, 0.1, 1.0, 10.0]},
    validate=_validate_heat,
)
def _heat_mass(ctx: Context):
    ev = _evaluator(ctx, min(ctx.grid["t"]))
    points = ctx.manifold.random_points(ctx.rng(1), 4)

    def task(t):
        defect = max(mass_defect(ev, t, x[None, :]) for x in points)
        err = 0.0 if ev.uses_images(t) else ev.tail_bound(t)
        return [ctx.tolerance_row("mass", defect, 1e-8, err=err, t=t, K=ev.K)]

    return [lambda t=t: task(t) for t in ctx.grid["t"]]


def _validate_semigroup(ctx: Context) -> None:
    _check_orders(ctx, "t")
    _require(min(ctx.grid["t"]) >= 0.2, "semigroup kernel checks are validated for t >= 0.2")


@register(
    "semigroup",
    "semigroup law in coefficients and Chapman-Kolmogorov identity under quadrature",
    defaults={"t": [0.2, 0.5, 1.0, 2.0]},
    validate=_validate_semigroup,
)
def _semigroup(ctx: Context):
    m = ctx.manifold
    ev = _evaluator(ctx, min(ctx.grid["t"]))
    u = random_band_limited(m, ctx.rng(1), 12)
    x, y = m.random_points(ctx.rng(2), 2)

    def task(t):
        twice = heat_apply(ev, t, heat_apply(ev, t, u)).coeffs
        once = heat_apply(ev, 2.0 * t, u).coeffs
        scale = float(np.max(np.abs(u.coeffs)))
        coef = float(np.max(np.abs(twice - once))) / scale
        c = constant(m, 1.7)
        kept = float(np.max(np.abs(heat_apply(ev, t, c).coeffs - c.coeffs)))
        ck = chapman_kolmogorov_defect(ev, t, t, x[None, :], y[None, :])
        return [
            ctx.tolerance_row("coefficient-semigroup", coef, 8.0 * np.finfo(float).eps, t=t),
            ctx.tolerance_row("preserves-constants", kept, 0.0, t=t),
            ctx.tolerance_row("chapman-kolmogorov", ck, 1e-8, err=2.0 * ev.tail_bound(t), t=t, K=ev.K),
        ]

    return [lambda t=t: task(t) for t in ctx.grid["t"]]


def _validate_gauss(ctx: Context) -> None:
    _validate_heat(ctx)
    _require(min(ctx.grid["t"]) >= 0.05 and max(ctx.grid["t"]) <= 2.0, "gaussian-bounds uses t in [0.05, 2]")


@register(
    "gaussian-bounds",
    "Gaussian envelope K t^{n/2} exp(d^2/4t) and agreement with the independent reference kernel",
    defaults={"t": [0.05, 0.1, 0.2, 0.5, 1.0, 2.0]},
    validate=_validate_gauss,
)
def _gaussian_bounds(ctx: Context):
    m = ctx.manifold
    ev = _evaluator(ctx, min(ctx.grid["t"]))
    rng = ctx.rng(1)
    xs = m.random_points(rng, 64)
    ys = m.random_points(rng, 64)
    # beyond half the diameter exp(d^2/4t) amplifies truncation error past the kernel value
    near = np.asarray(m.distance(xs, ys)) <= 0.5 * m.diameter
    xs, ys = xs[near][:24], ys[near][:24]
    xs = np.concatenate([xs, xs[:4]])
    ys = np.concatenate([ys, xs[:4]])

    def task(t):
        spectral = np.asarray(heat_kernel(ev, t, xs, ys)).reshape(-1)
        oracle = np.asarray(reference_kernel(m, np.array([t]), xs, ys))[0].reshape(-1)
        diff = float(np.max(np.abs(spectral - oracle)))
        ratios = [gaussian_bound_ratio(ev, t, x[None, :], y[None, :]) for x, y in zip(xs, ys)]
        env = max(ratios)
        low = min(ratios)
        return [
            ctx.tolerance_row("reference-kernel", diff, 1e-10, err=ev.tail_bound(t), t=t, K=ev.K),
            ctx.row("gaussian-envelope", low, env, passed=bool(low > 0 and np.isfinite(env)), t=t, C=4.0),
        ]

    return [lambda t=t: task(t) for t in ctx.grid["t"]]


@register(
    "longtime",
    "exponential approach to 1/Vol; fitted rate against the first eigenvalue",
    defaults={"t": [1.0 + 0.5 * k for k in range(11)]},
    validate=_validate_heat,
)
def _longtime(ctx: Context):
    m = ctx.manifold
    ev = _evaluator(ctx, min(ctx.grid["t"]))
    points = m.random_points(ctx.rng(1), 16)
    times = sorted(ctx.grid["t"])
    _require(len(times) >= 2, "longtime needs at least two times")

    def task():
        devs = [stationary_deviation(ev, t, points) for t in times]
        lam1 = m.lambda1
        rate = fit_decay_rate(times, devs)
        C = max(d * math.exp(lam1 * t) for d, t in zip(devs, times))
        rows = [
            ctx.row("deviation", d, C * math.exp(-lam1 * t), err=ev.tail_bound(t), t=t, passed=bool(d > 0))
            for d, t in zip(devs, times)
        ]
        rel = abs(rate / lam1 - 1.0)
        rows.append(ctx.row("decay-rate", rate, lam1, passed=bool(rel <= 0.05), relative=rel))
        return rows

    return [task]


# ---------------------------------------------------------------------------
# fractional operator
# ---------------------------------------------------------------------------


def _validate_frac(ctx: Context) -> None:
    _flat_only(ctx)
    _check_orders(ctx, "s")


@register(
    "frac-agreement",
    "spectral fractional Laplacian against the extrapolated principal-value integral and the semigroup form",
    defaults={"s": [0.25, 0.5, 0.75]},
    manifolds=("circle", "flat_torus"),
    validate=_validate_frac,
)
def _frac_agreement(ctx: Context):
    m = ctx.manifold
    u = random_band_limited(m, ctx.rng(1), 12)
    points = m.random_points(ctx.rng(2), 8)

    def task(s):
        fp = FracParams(s)
        su = frac_apply_spectral(fp, u)
        scale = _sup_scale(su)
        rows = []
        semi = frac_apply_semigroup(fp, u)
        coef = float(np.max(np.abs(semi.coeffs - su.coeffs))) / max(float(np.max(np.abs(su.coeffs))), 1e-300)
        rows.append(ctx.tolerance_row("semigroup-form", coef, 1e-7, s=s))
        for j, x in enumerate(points):
            est = frac_apply_singular(fp, u, x, detailed=True)
            ref = float(su.evaluate(x[None, :])[0])
            rel = abs(est.value - ref) / scale
            rows.append(
                ctx.row("principal-value", est.value, ref, s=s, err=est.correction, passed=bool(rel <= 5e-3), point=j, relative=rel, order=float(est.order))
            )
        return rows

    return [lambda s=s: task(s) for s in ctx.grid["s"]]


@register(
    "euclid-kernel",
    "subordinated Gaussian against the Gamma closed form; scalar subordination identity",
    defaults={"s": [0.25, 0.5, 0.75], "n": [1, 2, 3], "r": [0.5, 1.0, 2.0], "lam": [1.0, 4.0, 10.0], "p": [2.0]},
    manifolds=(),
    default_manifold=None,
    validate=lambda ctx: _check_orders(ctx, "s", "p"),
)
def _euclid_kernel(ctx: Context):
    quad = SubordinationQuad()

    def kernel_task(n, s, p):
        n = int(n)
        _require(n in (1, 2, 3), "n must be 1, 2 or 3")
        rows = []
        for r in ctx.grid["r"]:
            if p == 2.0:
                value, closed = euclidean_kernel_check(n, s, r, quad)
            else:
                value, closed = euclidean_wsp_check(n, WspParams(s, p, n), r, quad)
            rel = abs(value / closed - 1.0)
            rows.append(ctx.tolerance_row("closed-form", rel, 1e-7, s=s, p=p, label=f"R{n}", r=r, n=n, value=value, closed=closed))
        return rows

    def scalar_task(s):
        return [
            ctx.tolerance_row("scalar-identity", scalar_identity_defect(s, lam, quad), 1e-8, s=s, label="scalar", lam=lam)
            for lam in ctx.grid["lam"]
        ]

    def analytic():
        return [ctx.tolerance_row("alpha-1-half", abs(euclidean_kernel_coefficient(1, 0.5) - 1.0 / math.pi), 1e-14, s=0.5, label="R1")]

    tasks = [analytic]
    tasks += [lambda n=n, s=s, p=p: kernel_task(n, s, p) for n in ctx.grid["n"] for s in ctx.grid["s"] for p in ctx.grid["p"]]
    tasks += [lambda s=s: scalar_task(s) for s in ctx.grid["s"]]
    return tasks


def _validate_dtn(ctx: Context) -> None:
    _check_orders(ctx, "s")
    _require(all(y > 0 for y in ctx.grid["y"]), "heights must be positive")


@register(
    "dtn",
    "Poisson-kernel mass, boundary trace, and Dirichlet-to-Neumann limit against the spectral operator",
    defaults={"s": [0.25, 0.5, 0.75], "y": [0.1, 0.5, 1.0, 2.0]},
    validate=_validate_dtn,
)
def _dtn(ctx: Context):
    m = ctx.manifold
    f = random_band_limited(m, ctx.rng(1), 6)
    points = m.random_points(ctx.rng(2), 4)
    x0 = m.random_points(ctx.rng(3), 1)
    mode = _first_mode(m)

    def constant_task():
        return [ctx.tolerance_row("c-half", abs(dtn_constant(0.5) - 1.0), 0.0, s=0.5)]

    def task(s):
        fp = FracParams(s)
        rows = []
        for y in ctx.grid["y"]:
            rows.append(ctx.tolerance_row("poisson-mass", abs(poisson_mass(m, fp, x0, y) - 1.0), 1e-8, s=s, y=y))
        rule = mode.default_rule()
        target = mode.evaluate(rule.nodes)
        prev = math.inf
        for y in (1e-1, 1e-2, 1e-3, 1e-4):
            trace = np.asarray(extension_value(fp, mode, rule.nodes, y)).reshape(-1)
            gap = float(np.max(np.abs(trace - target)))
            rows.append(ctx.row("boundary-trace", gap, prev, s=s, passed=bool(gap < prev), y=y))
            prev = gap
        su = frac_apply_spectral(fp, f)
        scale = _sup_scale(su)
        for j, x in enumerate(points):
            est = dtn_value(fp, f, x[None, :], detailed=True)
            ref = float(su.evaluate(x[None, :])[0])
            rel = abs(float(est.value) - ref) / scale
            rows.append(ctx.row("dtn", float(est.value), ref, s=s, err=float(est.correction), passed=bool(rel <= 1e-2), point=j, relative=rel))
        return rows

    return [constant_task] + [lambda s=s: task(s) for s in ctx.grid["s"]]


@register(
    "s-limits",
    "defects of (-Delta)^s u against -Delta u as s -> 1 and against u - mean as s -> 0",
    defaults={"s": [0.9, 0.95, 0.99, 0.1, 0.05, 0.01]},
    validate=lambda ctx: _check_orders(ctx, "s"),
)
def _s_limits(ctx: Context):
    m = ctx.manifold
    up = sorted(s for s in ctx.grid["s"] if s >= 0.5)
    down = sorted((s for s in ctx.grid["s"] if s < 0.5), reverse=True)
    u = random_band_limited(m, ctx.rng(1), 12)

    def sequence(label, ss, fn):
        vals = fn(u, ss)
        rows = []
        for i, (s, v) in enumerate(zip(ss, vals)):
            prev = vals[i - 1] if i else math.inf
            rows.append(ctx.row(label, v, prev, s=s, passed=bool(v < prev)))
        return rows

    def modes():
        rows = []
        lam = m.eigenvalues(8)
        for k in range(1, 8):
            c = np.zeros(k + 1)
            c[k] = 1.0
            phi = SpectralFunction(m, c)
            sup = _sup_scale(phi)
            for s in up:
                got = limit_defect_s1(phi, [s])[0]
                rows.append(ctx.tolerance_row("mode-s1", abs(got - abs(lam[k] ** s - lam[k]) * sup), 1e-12 * max(1.0, lam[k] * sup), s=s, mode=k))
            for s in down:
                got = limit_defect_s0(phi, [s])[0]
                rows.append(ctx.tolerance_row("mode-s0", abs(got - abs(lam[k] ** s - 1.0) * sup), 1e-12 * max(1.0, lam[k] * sup), s=s, mode=k))
        return rows

    tasks = []
    if up:
        tasks.append(lambda: sequence("s-to-1", up, limit_defect_s1))
    if down:
        tasks.append(lambda: sequence("s-to-0", down, limit_defect_s0))
    tasks.append(modes)
    return tasks


# ---------------------------------------------------------------------------
# Sobolev spaces
# ---------------------------------------------------------------------------


@register(
    "kernel-bounds",
    "two-sided bound K d^{n+sp} in [min, max] and the induced seminorm equivalence",
    defaults={"s": [0.25, 0.5, 0.75], "p": [1.5, 2.0, 3.0]},
    validate=lambda ctx: _check_orders(ctx, "s", "p"),
)
def _kernel_bounds(ctx: Context):
    m = ctx.manifold
    x, y = distance_sample(m, ctx.rng(1), 64)
    n = m.dim

    def task(s, p):
        wp = WspParams(s, p, n)
        quad = SubordinationQuad()
        lo, hi = kernel_bound_ratio(m, wp, (x, y), quad)
        lo2, hi2 = kernel_bound_ratio(m, wp, (x, y), quad.refined(2.0))
        err = max(abs(lo - lo2), abs(hi - hi2))
        rows = [ctx.row("kernel-ratio", lo, hi, s=s, p=p, err=err, passed=bool(lo > 0 and np.isfinite(hi)))]
        if m.is_flat and s * p < n:
            pq = make_pair_quadrature(m, _pair_order(ctx))
            alpha = euclidean_kernel_coefficient(n, wp.sigma)
            band_lo = min(lo, alpha) ** (1.0 / p)
            band_hi = max(hi, alpha) ** (1.0 / p)
            rng = ctx.rng(3)
            for j in range(3):
                u = random_band_limited(m, rng, 8)
                ratio = gagliardo_seminorm(wp, u, pq) / geodesic_seminorm(wp, u, pq)
                rows.append(
                    ctx.row("seminorm-band", ratio, band_hi, s=s, p=p, passed=bool(band_lo <= ratio <= band_hi), band_low=band_lo, sample=j)
                )
        return rows

    return [lambda s=s, p=p: task(s, p) for s in ctx.grid["s"] for p in ctx.grid["p"]]


def _validate_flat_sobolev(ctx: Context) -> None:
    _flat_only(ctx)
    _check_orders(ctx, "s", "p")
    _subcritical_pairs(ctx)


def _c_low(m: SpectralManifold, wp: WspParams, ctx: Context) -> float:
    x, y = distance_sample(m, ctx.rng(7), 64)
    lo, _ = kernel_bound_ratio(m, wp, (x, y))
    return min(lo, euclidean_kernel_coefficient(m.dim, wp.sigma))


def _validate_poincare(ctx: Context) -> None:
    _flat_only(ctx)
    _check_orders(ctx, "s", "p")


@register(
    "poincare",
    "fractional Poincare ratio: eigenfunction value, invariances, and the explicit proof bound",
    defaults={"s": [0.5], "p": [2.0]},
    manifolds=("circle", "flat_torus"),
    validate=_validate_poincare,
)
def _poincare(ctx: Context):
    m = ctx.manifold

    def task(s, p):
        wp = WspParams(s, p, m.dim)
        pq = make_pair_quadrature(m, _pair_order(ctx))
        rows = []
        phi = _first_mode(m)
        r1 = poincare_ratio(wp, phi, pq)
        if p == 2.0:
            exact = 1.0 / math.sqrt(2.0 * m.lambda1**s)
            rows.append(ctx.row("first-mode", r1, exact, s=s, p=p, passed=bool(abs(r1 / exact - 1.0) <= 2e-3), relative=abs(r1 / exact - 1.0)))
        U = pq.grid_values(phi)
        inv = max(abs(poincare_ratio(wp, U + 3.0, pq) / r1 - 1.0), abs(poincare_ratio(wp, -2.5 * U, pq) / r1 - 1.0))
        rows.append(ctx.tolerance_row("invariance", inv, 1e-12, s=s, p=p))
        rng = ctx.rng(4)
        sup = max(poincare_ratio(wp, random_band_limited(m, rng, 12), pq) for _ in range(50))
        bound = poincare_proof_bound(m, wp, _c_low(m, wp, ctx))
        rows.append(ctx.row("proof-bound", sup, bound, s=s, p=p, family=50))
        return rows

    return [lambda s=s, p=p: task(s, p) for s in ctx.grid["s"] for p in ctx.grid["p"]]


def _embedding_qs(wp: WspParams, grid_q) -> list[float]:
    if grid_q:
        return list(grid_q)
    return [wp.p, 0.5 * (wp.p + wp.p_star), wp.p_star]


@register(
    "embedding",
    "embedding ratio ||u||_q / (||u||_p + [u]) on constants, random families, and concentrating bumps",
    defaults={"s": [0.4], "p": [2.0], "q": []},
    manifolds=("circle", "flat_torus"),
    validate=_validate_flat_sobolev,
)
def _embedding(ctx: Context):
    m = ctx.manifold

    def task(s, p):
        wp = WspParams(s, p, m.dim)
        pq = make_pair_quadrature(m, _pair_order(ctx))
        rows = []
        center = tuple(0.5 * L / (m.R if hasattr(m, "R") else 1.0) for L in m.periods)
        for q in _embedding_qs(wp, ctx.grid["q"]):
            _require(p <= q <= wp.p_star * (1 + 1e-12), f"q = {q} outside [p, p*]")
            one = embedding_ratio(wp, np.ones(pq.shape), q, pq)
            exact = m.volume ** (1.0 / q - 1.0 / p)
            rows.append(ctx.tolerance_row("constant", abs(one / exact - 1.0), 1e-12, s=s, p=p, q=q))
            rng = ctx.rng(5)
            fam = max(embedding_ratio(wp, random_band_limited(m, rng, 12), q, pq) for _ in range(20))
            rows.append(ctx.row("random-family", fam, math.inf, s=s, p=p, q=q, passed=bool(np.isfinite(fam)), family=20))
            if q < wp.p_star:
                h = max(pq.spacing)
                vals = []
                for k in range(6):
                    bp = cst.BubbleParams(center, 8.0 * h * 2.0 ** (-k / 2.0), m.dim, s)
                    vals.append(embedding_ratio(wp, cst.manifold_bubble(m, bp, pq.rule.nodes), q, pq))
                rows.append(ctx.row("bump-family", max(vals), math.inf, s=s, p=p, q=q, passed=bool(np.all(np.isfinite(vals))), last=vals[-1]))
        return rows

    return [lambda s=s, p=p: task(s, p) for s, p in _subcritical_pairs(ctx)]


# ---------------------------------------------------------------------------
# sharp constants
# ---------------------------------------------------------------------------


@register(
    "beta-program",
    "optimal L^p coefficient Vol^{-s/n}: equality at constants, violation below it, finite minimal A for p <= 2",
    defaults={"s": [0.3], "p": [2.0]},
    manifolds=("circle", "flat_torus"),
    validate=_validate_flat_sobolev,
)
def _beta_program(ctx: Context):
    m = ctx.manifold

    def task(s, p):
        wp = WspParams(s, p, m.dim)
        pq = make_pair_quadrature(m, _pair_order(ctx))
        beta = cst.beta_constant(m, s, p)
        rows = [ctx.tolerance_row("beta-arithmetic", abs(beta - m.volume ** (-s / m.dim)), 0.0, s=s, p=p, beta=beta)]
        one = np.ones(pq.shape)
        for form, fn, B in (("linear", cst.linear_deficit, beta), ("power", cst.power_deficit, beta**p)):
            rep = fn(one, 1.0, B, wp, pq, "u=1")
            rows.append(ctx.tolerance_row(f"equality-{form}", abs(rep.deficit), 1e-12 * rep.lhs, s=s, p=p, q=wp.p_star, err=rep.err_est, lhs_value=rep.lhs))
            low = fn(one, 1.0, 0.99 * B, wp, pq, "u=1")
            rows.append(ctx.row(f"violation-{form}", low.lhs, low.rhs, s=s, p=p, q=wp.p_star, err=low.err_est, passed=bool(low.deficit < 0)))
        if p <= 2.0:
            fam = cst.random_family(m, ctx.seed, 200)
            res = cst.minimal_A(fam, m.volume ** (-wp.sp / m.dim), wp, pq)
            rows.append(
                ctx.row("minimal-A", res.required, res.A if res.A is not None else math.inf, s=s, p=p, q=wp.p_star,
                        passed=res.A is not None, family=200, worst=res.worst_index)
            )
        return rows

    return [lambda s=s, p=p: task(s, p) for s, p in _subcritical_pairs(ctx)]


@register(
    "bakry",
    "convexity inequality for p* >= 2 over random band-limited families",
    defaults={"q": [2.5, 3.0, 4.0]},
    validate=lambda ctx: _require(all(q >= 2.0 for q in ctx.grid["q"]), "bakry needs q = p* >= 2"),
)
def _bakry(ctx: Context):
    m = ctx.manifold
    rule = m.quadrature(m.default_order(12))

    def task(ps):
        rng = ctx.rng(int(ps * 1000))
        worst = min(cst.bakry_deficit(random_band_limited(m, rng, 12), ps, rule) for _ in range(200))
        c = constant(m, 1.3)
        const = abs(cst.bakry_deficit(c, ps, rule))
        mz = random_band_limited(m, rng, 12)
        mz = mz.with_coeffs(np.concatenate([[0.0], mz.coeffs[1:]]))
        return [
            ctx.row("random-family", -worst, 1e-9, q=ps, passed=bool(worst >= -1e-9), family=200, min_deficit=worst),
            ctx.tolerance_row("constant", const, 1e-12 * max(1.0, float(np.sum(rule.weights)) * 1.3**2), q=ps),
            ctx.row("mean-zero", -cst.bakry_deficit(mz, ps, rule), 0.0, q=ps),
        ]

    return [lambda q=q: task(q) for q in ctx.grid["q"]]


def _validate_split(ctx: Context) -> None:
    for p in ctx.grid["p"]:
        for q in ctx.grid["q"]:
            _require(1.0 <= p <= q <= 2.0, f"split inequality needs 1 <= p <= q = p* <= 2, got p={p}, q={q}")


@register(
    "subcritical-split",
    "split inequality for p <= p* <= 2 and the one-dimensional sup identity",
    defaults={"p": [1.5], "q": [1.6, 1.8, 2.0]},
    validate=_validate_split,
)
def _subcritical_split(ctx: Context):
    m = ctx.manifold
    rule = m.quadrature(m.default_order(12))

    def task(p, ps):
        rng = ctx.rng(int(p * 1000), int(ps * 1000))
        worst = min(cst.subcritical_split_deficit(random_band_limited(m, rng, 12), p, ps, rule) for _ in range(200))
        const = abs(cst.subcritical_split_deficit(constant(m, 0.8), p, ps, rule))
        rows = [
            ctx.row("random-family", -worst, 1e-9, p=p, q=ps, passed=bool(worst >= -1e-9), family=200, min_deficit=worst),
            ctx.tolerance_row("constant", const, 1e-12 * max(1.0, float(np.sum(rule.weights))), p=p, q=ps),
        ]
        for mass in (0.5, 1.0, 2.0):
            num, closed = cst.sup_identity_check(ps, mass)
            rows.append(ctx.tolerance_row("sup-identity", abs(num / closed - 1.0), 1e-10, p=p, q=ps, mass=mass))
        return rows

    return [lambda p=p, q=q: task(p, q) for p in ctx.grid["p"] for q in ctx.grid["q"]]


def _validate_counter(ctx: Context) -> None:
    _require(ctx.manifold.is_flat and ctx.manifold.dim >= 3, "counterexample runs on a flat 3-torus")
    _check_orders(ctx, "s", "p")
    for s, p in _subcritical_pairs(ctx):
        _require(p > 2.0, "counterexample needs p > 2")
    _require(all(e > 0 for e in ctx.grid["eps"]) and len(ctx.grid["eps"]) >= 3, "eps grid needs >= 3 positive values")


@register(
    "counterexample",
    "failure of the optimal-B inequality for p > 2 along 1 + eps cos x1 on the 3-torus",
    defaults={"s": [0.3], "p": [2.5], "eps": [float(e) for e in np.geomspace(1e-3, 1e-2, 8)], "A": [1.0, 1e2, 1e4, 1e6]},
    manifolds=("flat_torus",),
    default_manifold=ManifoldSpec.flat_torus((2 * math.pi,) * 3),
    validate=_validate_counter,
)
def _counterexample(ctx: Context):
    m = ctx.manifold
    L1 = m.periods[0]

    def u(x):
        return np.cos(2.0 * math.pi * np.atleast_2d(x)[:, 0] / L1)

    def task(s, p):
        wp = WspParams(s, p, m.dim)
        pq = make_pair_quadrature(m, _pair_order(ctx))
        eps = np.array(sorted(ctx.grid["eps"]))
        cur = cst.counterexample_curve(u, wp, eps, pq)
        V = m.volume
        m2 = float(np.dot(pq.rule.weights, u(pq.rule.nodes) ** 2))
        analytic = 0.5 * p * (wp.p_star - p) * V ** (-wp.sp / m.dim) * m2
        rows = [
            ctx.row("curve", D, E, s=s, p=p, q=wp.p_star, passed=bool(D > 0), eps=float(e))
            for e, D, E in zip(eps, cur.D, cur.E)
        ]
        slope_D = cst.loglog_slope(eps, cur.D)
        rows.append(ctx.tolerance_row("slope-D", abs(slope_D - 2.0), 0.02, s=s, p=p, q=wp.p_star, slope=slope_D))
        fit = float(np.polyfit(eps, cur.D / eps**2, 1)[1])
        rows.append(ctx.row("quadratic-coefficient", fit, analytic, s=s, p=p, q=wp.p_star, passed=bool(abs(fit / analytic - 1.0) <= 0.02), relative=abs(fit / analytic - 1.0)))
        slope_E = cst.loglog_slope(eps, cur.E / eps**2)
        rows.append(ctx.tolerance_row("slope-E-over-eps2", abs(slope_E - (p - 2.0)), 0.02, s=s, p=p, q=wp.p_star, slope=slope_E))
        gap = cur.taylor.second_order_gap
        rows.append(ctx.row("taylor-gap", gap, analytic, s=s, p=p, q=wp.p_star, passed=bool(gap > 0 and abs(gap / analytic - 1.0) <= 1e-10)))
        for A in ctx.grid["A"]:
            # crossover where A eps^p [u]^p = c eps^2; below it the inequality fails
            e_star = (fit / (A * cur.seminorm_power)) ** (1.0 / (p - 2.0))
            e = 0.5 * e_star
            rows.append(
                ctx.row("violation", fit * e * e, A * e**p * cur.seminorm_power, s=s, p=p, q=wp.p_star, passed=bool(A * e**p * cur.seminorm_power < fit * e * e), A=float(A), eps_star=e_star)
            )
        return rows

    return [lambda s=s, p=p: task(s, p) for s, p in _subcritical_pairs(ctx)]


def _validate_quotient(ctx: Context) -> None:
    _validate_flat_sobolev(ctx)


def _quotient_order(ctx: Context) -> int:
    if ctx.order:
        return int(ctx.order)
    return 512 if ctx.manifold.dim == 1 else 64


@register(
    "bubbles",
    "fractional bubble identities and the bubble quotient against the minimized quotient",
    defaults={"s": [0.4], "p": [2.0], "eps": []},
    manifolds=("circle", "flat_torus"),
    default_manifold=ManifoldSpec.flat_torus((2 * math.pi, 2 * math.pi)),
    validate=_validate_quotient,
)
def _bubbles(ctx: Context):
    m = ctx.manifold
    n = m.dim

    def task(s, p):
        wp = WspParams(s, p, n)
        pq = make_pair_quadrature(m, _quotient_order(ctx))
        h = max(pq.spacing)
        widths = list(ctx.grid["eps"]) or [h * c for c in (0.25, 0.5, 1.0, 2.0, 4.0, 8.0)]
        center = tuple(0.5 * L / (m.R if hasattr(m, "R") else 1.0) for L in m.periods)
        rng = ctx.rng(6)
        pts = rng.uniform(-1.0, 1.0, size=(16, n))
        rows = []
        for w in widths:
            bp = cst.BubbleParams(tuple([0.0] * n), w, n, s)
            peak = cst.bubble(bp, np.zeros((1, n)))[0]
            rows.append(ctx.tolerance_row("peak", abs(peak / w ** (-(n - 2 * s) / 2) - 1.0), 1e-14, s=s, p=p, eps=w))
            x0 = rng.uniform(-1.0, 1.0, size=n)
            shifted = cst.BubbleParams(tuple(x0), w, n, s)
            unit = cst.BubbleParams(tuple([0.0] * n), 1.0, n, s)
            lhs = cst.bubble(shifted, pts)
            rhs = w ** (-(n - 2 * s) / 2) * cst.bubble(unit, (pts - x0) / w)
            rows.append(ctx.tolerance_row("dilation", float(np.max(np.abs(lhs / rhs - 1.0))), 1e-13, s=s, p=p, eps=w))
            if n >= 2:
                rot = np.array([[0.0, -1.0], [1.0, 0.0]]) if n == 2 else np.array([[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]])
                sym = float(np.max(np.abs(cst.bubble(bp, pts @ rot.T) / cst.bubble(bp, pts) - 1.0)))
            else:
                sym = float(np.max(np.abs(cst.bubble(bp, -pts) / cst.bubble(bp, pts) - 1.0)))
            rows.append(ctx.tolerance_row("radial", sym, 1e-14, s=s, p=p, eps=w))
        quotients = []
        for w in widths:
            b = cst.manifold_bubble(m, cst.BubbleParams(center, w, n, s), pq.rule.nodes)
            quotients.append(cst.rayleigh_quotient(b - b.mean(), wp, pq))
        init = random_band_limited(m, ctx.rng(0), 12)
        best = cst.minimize_quotient(wp, pq, init).value
        for w, qv in zip(widths, quotients):
            rows.append(ctx.row("bubble-quotient", qv, best, s=s, p=p, passed=True, eps=w, deficit=best - qv))
        top = min(quotients)
        rows.append(ctx.row("bubble-vs-minimizer", top, best, s=s, p=p, passed=bool(abs(top / best - 1.0) <= 0.1), relative=abs(top / best - 1.0)))
        return rows

    return [lambda s=s, p=p: task(s, p) for s, p in _subcritical_pairs(ctx)]


def _minimize_finalize(ctx: Context, rows: list) -> list:
    out = []
    keys = sorted({(r.s, r.p) for r in rows if r.extra.get("check") == "quotient"})
    for s, p in keys:
        vals = [r.lhs for r in rows if r.extra.get("check") == "quotient" and (r.s, r.p) == (s, p)]
        spread = (max(vals) - min(vals)) / min(vals)
        out.append(ctx.tolerance_row("multi-start-spread", spread, 0.05, s=s, p=p, starts=len(vals)))
    return out


@register(
    "minimize-quotient",
    "multi-start minimization of the Sobolev quotient with stationarity and invariance checks",
    defaults={"s": [0.4], "p": [2.0]},
    manifolds=("circle", "flat_torus"),
    default_manifold=ManifoldSpec.flat_torus((2 * math.pi, 2 * math.pi)),
    validate=_validate_quotient,
    finalize=_minimize_finalize,
)
def _minimize_quotient(ctx: Context):
    m = ctx.manifold

    def task(s, p, start):
        wp = WspParams(s, p, m.dim)
        pq = make_pair_quadrature(m, _quotient_order(ctx))
        init = random_band_limited(m, ctx.rng(100 + start), 12)
        res = cst.minimize_quotient(wp, pq, init)
        stat = cst.stationarity_defect(res.u, wp, pq, ctx.rng(200 + start))
        q0 = cst.rayleigh_quotient(res.u, wp, pq)
        scale = abs(cst.rayleigh_quotient(3.7 * res.u, wp, pq) / q0 - 1.0)
        shift = tuple(N // 3 + 1 for N in pq.shape)
        moved = np.roll(res.u, shift, axis=tuple(range(res.u.ndim)))
        trans = abs(cst.rayleigh_quotient(moved, wp, pq) / q0 - 1.0)
        return [
            ctx.row("quotient", res.value, res.history[0], s=s, p=p, q=wp.p_star, passed=res.converged, start=start, iterations=res.iterations),
            ctx.tolerance_row("stationarity", stat, 1e-4, s=s, p=p, q=wp.p_star, start=start),
            ctx.tolerance_row("scale-invariance", scale, 1e-10, s=s, p=p, q=wp.p_star, start=start),
            ctx.tolerance_row("shift-invariance", trans, 1e-10, s=s, p=p, q=wp.p_star, start=start),
        ]

    return [lambda s=s, p=p, k=k: task(s, p, k) for s, p in _subcritical_pairs(ctx) for k in range(3)]


@register(
    "orthogonality",
    "signed partitions, orthogonality residuals, the split identity, the product-energy bound, and the improved-constant trend",
    defaults={"s": [0.4], "p": [2.0]},
    manifolds=("circle", "flat_torus"),
    validate=_validate_quotient,
)
def _orthogonality(ctx: Context):
    m = ctx.manifold
    n = m.dim
    kind = "cos_sin_circle" if n == 1 else "torus_axis"

    def symmetric_tests(rule):
        # invariant under the half-period shift of the first axis
        L = m.periods[0] / (m.R if hasattr(m, "R") else 1.0)
        k = 2.0 * math.pi / L
        x = np.atleast_2d(rule.nodes) if n > 1 else rule.nodes.reshape(-1, 1)
        base = np.abs(np.cos(k * x[:, 0])) ** 1.5 + np.cos(2.0 * k * x[:, 0])
        if n > 1:
            base = base + 0.5 * np.sin(2.0 * math.pi * x[:, 1] / m.periods[1])
        rng = ctx.rng(9)
        mix = 1.0 + sum(rng.uniform(-0.3, 0.3) * np.cos(2.0 * j * k * x[:, 0] + rng.uniform(0, 2 * math.pi)) for j in range(1, 4))
        return {"constant": np.ones(len(x)), "even-profile": base, "random-even": mix}

    def task(s, p):
        wp = WspParams(s, p, n)
        pq = make_pair_quadrature(m, _pair_order(ctx))
        rule = pq.rule
        part = cst.make_partition(kind, p, m)
        F = part.values(rule.nodes)
        ident = float(np.max(np.abs(np.sum(np.abs(F) ** p, axis=0) - 1.0)))
        part.verify(rule)
        rows = [ctx.tolerance_row("partition-identity", ident, 1e-10, s=s, p=p, members=len(F))]
        for name, vals in symmetric_tests(rule).items():
            res = cst.orthogonality_residuals(vals, part, wp.p_star, rule)
            rows.append(ctx.tolerance_row("residual", float(np.max(np.abs(res))), 1e-10, s=s, p=p, q=wp.p_star, test=name))
            rows.append(ctx.tolerance_row("split-identity", cst.split_identity_check(vals, part, wp, rule), 1e-8, s=s, p=p, q=wp.p_star, test=name))
            AB = cst.split_masses(vals, part, wp.p_star, rule)
            rel = float(np.max(np.abs(AB[:, 0] - AB[:, 1]) / np.maximum(1.0, AB.max(axis=1))))
            rows.append(ctx.tolerance_row("equal-halves", rel, 1e-10, s=s, p=p, q=wp.p_star, test=name))
        coeffs = np.zeros(2)
        coeffs[1] = math.sqrt(m.volume / 2.0)
        f = SpectralFunction(m, coeffs)
        rng = ctx.rng(10)
        worst = min(cst.leibniz_energy_bound(random_band_limited(m, rng, 12), f, 0.5, wp, pq) for _ in range(100))
        rows.append(ctx.row("leibniz", -worst, 1e-8, s=s, p=p, q=wp.p_star, passed=bool(worst >= -1e-8), trials=100, delta=0.5, min_deficit=worst))
        trend = cst.improved_constant_trend(wp, make_pair_quadrature(m, _quotient_order(ctx)), seeds=(ctx.seed, ctx.seed + 1, ctx.seed + 2))
        rows.append(
            ctx.row("improved-constant", trend.observed_factor, 1.1 * trend.target_factor, s=s, p=p, q=wp.p_star,
                    unconstrained=trend.unconstrained, constrained=trend.constrained, residual=trend.residual)
        )
        return rows

    return [lambda s=s, p=p: task(s, p) for s, p in _subcritical_pairs(ctx)]
