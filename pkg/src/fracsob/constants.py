"""Sharp-constant experiments for fractional Sobolev inequalities on closed manifolds.

Covers the optimal lower-order coefficient ``Vol^{-s/n}``, the convexity
inequalities used to reach it for p <= 2, the second-order obstruction for
p > 2, fractional bubbles and Rayleigh-quotient minimization, and the
orthogonality machinery behind the improved leading constant.

All inequality quantities use the intrinsic seminorm
``[u]^p = iint |u(x)-u(y)|^p K_p^s dmu dmu`` with ``c_{s,p} = 1/|Gamma(-sp/2)|``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.optimize import minimize_scalar

from .errors import (
    AmplitudeTooLarge,
    ConstantInput,
    DescentDiverged,
    ExponentOutOfRange,
    InvalidParameter,
    OrthogonalityViolated,
    PartitionIdentityViolated,
    SupercriticalParameters,
    ZeroInput,
)
from .manifold import QuadratureRule, SpectralFunction, SpectralManifold, random_band_limited
from .sobolev import (
    PairEnergy,
    PairQuadrature,
    WspParams,
    kernel_moment,
    lp_norm_grid,
    seminorm_power,
    spectral_gradient,
)

A_SWEEP = tuple(2.0 ** (k / 2.0) for k in range(-10, 41))


def _values(u, rule: QuadratureRule) -> np.ndarray:
    if isinstance(u, SpectralFunction):
        return u.evaluate(rule.nodes)
    if callable(u):
        return np.asarray(u(rule.nodes), dtype=float)
    arr = np.asarray(u, dtype=float).reshape(-1)
    if arr.size != len(rule):
        raise InvalidParameter("node values do not match the rule")
    return arr


def _integral(rule: QuadratureRule, values) -> float:
    return float(np.dot(rule.weights, values))


# ---------------------------------------------------------------------------
# B-program
# ---------------------------------------------------------------------------


def beta_constant(m: SpectralManifold, s: float, p: float) -> float:
    """Optimal coefficient of the L^p term in the linear inequality: ``Vol^{-s/n}``."""
    if s * p >= m.dim:
        raise SupercriticalParameters(f"sp = {s * p:g} >= n = {m.dim}")
    return m.volume ** (-s / m.dim)


@dataclass(frozen=True)
class InequalityReport:
    manifold: str
    s: float
    p: float
    p_star: float
    A: float
    B: float
    lhs: float
    rhs: float
    deficit: float
    err_est: float
    form: str
    descriptor: str = ""
    normalization: str = "c_sp = 1/|Gamma(-sp/2)|"

    @property
    def holds(self) -> bool:
        return self.deficit >= -self.err_est


def _seminorm_with_error(wp: WspParams, u, pq: PairQuadrature) -> tuple[float, float]:
    """``[u]^p`` and the change against a grid of half the resolution (band-limited input)."""
    fine = seminorm_power(wp, u, pq)
    if not isinstance(u, SpectralFunction):
        return fine, 0.0
    N = pq.shape[0]
    if N < 16:
        return fine, 0.0
    from .sobolev import make_pair_quadrature

    coarse_pq = make_pair_quadrature(pq.manifold, N // 2, pq.delta / max(pq.spacing) if pq.delta else 8.0, pq.correction, pq.time_quad)
    coarse = seminorm_power(wp, u, coarse_pq)
    return fine, abs(fine - coarse)


def _deficit(u, A, B, wp, pq, form, descriptor):
    if not wp.subcritical:
        raise SupercriticalParameters(f"sp = {wp.sp:g} >= n = {wp.n}")
    U = pq.grid_values(u)
    p, ps = wp.p, wp.p_star
    norm_star = lp_norm_grid(U, ps, pq)
    norm_p = lp_norm_grid(U, p, pq)
    semi_p, semi_err = _seminorm_with_error(wp, u, pq)
    if form == "linear":
        semi = semi_p ** (1.0 / p)
        lhs = norm_star
        rhs = A * semi + B * norm_p
        err = A * (semi_err / max(p * semi ** (p - 1.0), 1e-300) if semi > 0 else 0.0)
    else:
        lhs = norm_star**p
        rhs = A * semi_p + B * norm_p**p
        err = A * semi_err
    err += 64.0 * np.finfo(float).eps * max(abs(lhs), abs(rhs))
    return InequalityReport(
        pq.manifold.spec.label(), wp.s, p, ps, A, B, lhs, rhs, rhs - lhs, err, form, descriptor
    )


def linear_deficit(u, A: float, B: float, wp: WspParams, pq: PairQuadrature, descriptor: str = "") -> InequalityReport:
    """``A [u] + B ||u||_p - ||u||_{p*}``."""
    return _deficit(u, A, B, wp, pq, "linear", descriptor)


def power_deficit(u, A: float, B: float, wp: WspParams, pq: PairQuadrature, descriptor: str = "") -> InequalityReport:
    """``A [u]^p + B ||u||_p^p - ||u||_{p*}^p``."""
    return _deficit(u, A, B, wp, pq, "power", descriptor)


def random_family(m: SpectralManifold, seed: int, size: int = 200, K: int = 12) -> list[SpectralFunction]:
    rng = np.random.default_rng(seed)
    return [random_band_limited(m, rng, K) for _ in range(size)]


@dataclass(frozen=True)
class MinimalA:
    A: float | None
    required: float
    worst_index: int


def minimal_A(family: Sequence, B: float, wp: WspParams, pq: PairQuadrature, grid: Sequence[float] = A_SWEEP) -> MinimalA:
    """Smallest grid value of A with ``power_deficit >= 0`` for every member, given B."""
    required = []
    for u in family:
        U = pq.grid_values(u)
        lhs = lp_norm_grid(U, wp.p_star, pq) ** wp.p
        low = B * lp_norm_grid(U, wp.p, pq) ** wp.p
        semi = seminorm_power(wp, U, pq)
        if lhs <= low:
            required.append(0.0)
        elif semi <= 0:
            required.append(math.inf)
        else:
            required.append((lhs - low) / semi)
    need = max(required)
    worst = int(np.argmax(required))
    for A in grid:
        if A >= need:
            return MinimalA(A, need, worst)
    return MinimalA(None, need, worst)


# ---------------------------------------------------------------------------
# convexity inequalities
# ---------------------------------------------------------------------------


def bakry_deficit(u, p_star: float, rule: QuadratureRule) -> float:
    """Right minus left side of the convexity inequality for ``p* >= 2``.

    ``(int |u|^{p*})^{2/p*} <= V^{-2(p*-1)/p*} |int u|^2 + (p*-1) (int |u - u_M|^{p*})^{2/p*}``
    """
    if p_star < 2.0:
        raise ExponentOutOfRange("Bakry inequality needs p* >= 2")
    vals = _values(u, rule)
    V = float(rule.weights.sum())
    total = _integral(rule, vals)
    mean = total / V
    lhs = _integral(rule, np.abs(vals) ** p_star) ** (2.0 / p_star)
    rhs = V ** (-2.0 * (p_star - 1.0) / p_star) * total**2 + (p_star - 1.0) * _integral(
        rule, np.abs(vals - mean) ** p_star
    ) ** (2.0 / p_star)
    return rhs - lhs


def split_constant(p: float, p_star: float) -> float:
    return (1.0 + (p_star - 1.0) ** (p_star - 1.0)) ** (p / p_star)


def subcritical_split_deficit(w, p: float, p_star: float, rule: QuadratureRule) -> float:
    """Right minus left side of the split inequality for ``p <= p* <= 2``.

    ``(int |w|^{p*})^{p/p*} <= V^{p/p* - p} |int w|^p + C (int |w - w_M|^{p*})^{p/p*}``
    """
    if p_star > 2.0:
        raise ExponentOutOfRange("split inequality needs p* <= 2")
    if p > p_star:
        raise ExponentOutOfRange("split inequality needs p <= p*")
    vals = _values(w, rule)
    V = float(rule.weights.sum())
    total = _integral(rule, vals)
    mean = total / V
    r = p / p_star
    lhs = _integral(rule, np.abs(vals) ** p_star) ** r
    rhs = V ** (r - p) * abs(total) ** p + split_constant(p, p_star) * _integral(
        rule, np.abs(vals - mean) ** p_star
    ) ** r
    return rhs - lhs


def sup_identity_check(p_star: float, mass: float) -> tuple[float, float]:
    """Numerical ``sup_{t>=0} (-t + p* m^{1/p*} t^{(p*-1)/p*})`` and ``(p*-1)^{p*-1} m``."""
    def neg(t):
        return t - p_star * mass ** (1.0 / p_star) * t ** ((p_star - 1.0) / p_star)

    t_guess = (p_star - 1.0) ** p_star * mass
    res = minimize_scalar(
        neg, bounds=(0.0, 4.0 * t_guess + 1.0), method="bounded", options={"xatol": 1e-12 * max(t_guess, 1.0)}
    )
    return float(-res.fun), (p_star - 1.0) ** (p_star - 1.0) * mass


# ---------------------------------------------------------------------------
# second-order obstruction for p > 2
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TaylorCoefficients:
    lhs: tuple[float, float, float]
    rhs: tuple[float, float, float]

    @property
    def second_order_gap(self) -> float:
        return self.lhs[2] - self.rhs[2]


def taylor_coeffs(u, p: float, p_star: float, V: float, rule: QuadratureRule) -> TaylorCoefficients:
    """Order 0, 1, 2 coefficients in eps of ``(int |1+eps u|^{p*})^{p/p*}`` and ``V^{p/p*-1} int |1+eps u|^p``."""
    vals = _values(u, rule)
    m1 = _integral(rule, vals)
    m2 = _integral(rule, vals**2)
    r = p / p_star
    lhs = (
        V**r,
        p * V ** (r - 1.0) * m1,
        0.5 * p * (p_star - 1.0) * V ** (r - 1.0) * m2 + 0.5 * p * (p - p_star) * V ** (r - 2.0) * m1**2,
    )
    scale = V ** (r - 1.0)
    rhs = (scale * V, scale * p * m1, scale * 0.5 * p * (p - 1.0) * m2)
    return TaylorCoefficients(lhs, rhs)


@dataclass(frozen=True)
class CounterexampleCurve:
    eps: np.ndarray
    D: np.ndarray
    E: np.ndarray
    seminorm_power: float
    taylor: TaylorCoefficients

    def rows(self):
        return list(zip(self.eps.tolist(), self.D.tolist(), self.E.tolist()))


def loglog_slope(x, y) -> float:
    return float(np.polyfit(np.log(np.asarray(x)), np.log(np.asarray(y)), 1)[0])


def counterexample_curve(u, wp: WspParams, eps_grid, pq: PairQuadrature) -> CounterexampleCurve:
    """``D(eps)`` (critical-norm excess over the optimal L^p term) and ``E(eps) = eps^p [u]^p``."""
    if not wp.p > 2.0:
        raise InvalidParameter("the obstruction concerns p > 2")
    if not wp.subcritical:
        raise SupercriticalParameters(f"sp = {wp.sp:g} >= n = {wp.n}")
    rule = pq.rule
    U = pq.grid_values(u).reshape(-1)
    sup = float(np.max(np.abs(U)))
    if sup == 0 or np.ptp(U) <= 1e-12 * sup:
        raise ConstantInput("counterexample needs a nonconstant direction")
    eps = np.asarray(eps_grid, dtype=float)
    if np.any(eps <= 0) or np.any(eps > 1.0 / (2.0 * sup)):
        raise AmplitudeTooLarge(f"eps must lie in (0, {1.0 / (2.0 * sup):g}]")
    V = float(rule.weights.sum())
    p, ps = wp.p, wp.p_star
    semi = seminorm_power(wp, U, pq)
    D, E = [], []
    for e in eps:
        w = 1.0 + e * U
        lhs = _integral(rule, np.abs(w) ** ps) ** (p / ps)
        rhs = V ** (-wp.sp / wp.n) * _integral(rule, np.abs(w) ** p)
        D.append(lhs - rhs)
        E.append(e**p * semi)
    return CounterexampleCurve(eps, np.array(D), np.array(E), semi, taylor_coeffs(U, p, ps, V, rule))


# ---------------------------------------------------------------------------
# bubbles and Rayleigh quotients
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BubbleParams:
    center: tuple[float, ...]
    width: float
    n: int
    s: float

    def __post_init__(self):
        if not self.width > 0:
            raise InvalidParameter("bubble width must be positive")


def bubble(bp: BubbleParams, x) -> np.ndarray:
    """``(eps / (eps^2 + |x - x0|^2))^{(n-2s)/2}`` with unit normalization, x in chart coordinates."""
    x = np.asarray(x, dtype=float)
    c = np.asarray(bp.center, dtype=float)
    if x.ndim == 0 or (bp.n == 1 and x.shape[-1:] != (1,)):
        x = x[..., None]
    r2 = np.sum((x - c) ** 2, axis=-1)
    return (bp.width / (bp.width**2 + r2)) ** ((bp.n - 2.0 * bp.s) / 2.0)


def manifold_bubble(m: SpectralManifold, bp: BubbleParams, points) -> np.ndarray:
    """Bubble profile in geodesic distance from the center."""
    d = np.asarray(m.distance(points, np.asarray(bp.center, dtype=float)))
    return (bp.width / (bp.width**2 + d**2)) ** ((bp.n - 2.0 * bp.s) / 2.0)


def rayleigh_quotient(u, wp: WspParams, pq: PairQuadrature) -> float:
    """``[u]^p / ||u||_{p*}^p``; invariant under scaling."""
    U = pq.grid_values(u)
    norm = lp_norm_grid(U, wp.p_star, pq)
    if norm == 0:
        raise ZeroInput("Rayleigh quotient of the zero function")
    return seminorm_power(wp, U, pq) / norm**wp.p


@dataclass(frozen=True)
class ArmijoRule:
    initial_step: float = 1.0
    shrink: float = 0.5
    sufficient_decrease: float = 1e-4
    max_backtracks: int = 60
    window: int = 20
    rtol: float = 1e-6


@dataclass
class MinimizerResult:
    u: np.ndarray
    value: float
    history: list = field(default_factory=list)
    iterations: int = 0
    converged: bool = False


class _QuotientObjective:
    """Quotient on mean-zero node values, value and L^2 gradient."""

    def __init__(self, wp: WspParams, pq: PairQuadrature):
        self.wp = wp
        self.pq = pq
        self.energy = PairEnergy(pq, wp)

    def normalize(self, U):
        U = U - U.mean()
        norm = lp_norm_grid(U, self.wp.p_star, self.pq)
        if norm == 0:
            raise ZeroInput("descent reached the zero function")
        return U / norm

    def value(self, U) -> float:
        return self.energy.energy(U) / lp_norm_grid(U, self.wp.p_star, self.pq) ** self.wp.p

    def value_and_grad(self, U):
        p, ps, w = self.wp.p, self.wp.p_star, self.pq.cell
        E = self.energy.energy(U)
        Nq = w * float(np.sum(np.abs(U) ** ps))
        dE = self.energy.gradient(U)
        dN = w * ps * np.abs(U) ** (ps - 1.0) * np.sign(U)
        r = p / ps
        Q = E / Nq**r
        g = dE / Nq**r - Q * r * dN / Nq
        g = g / w
        return Q, g - g.mean()


def _preconditioner(pq: PairQuadrature, wp: WspParams) -> np.ndarray:
    ks = [2.0 * math.pi * np.fft.fftfreq(N, d=h) for N, h in zip(pq.shape, pq.spacing)]
    kk = np.sqrt(sum(k**2 for k in np.meshgrid(*ks, indexing="ij")))
    k1 = min(2.0 * math.pi / L for L in pq.manifold.periods)
    return 1.0 / (1.0 + (kk / k1) ** wp.sp)


def minimize_quotient(
    wp: WspParams,
    pq: PairQuadrature,
    init,
    steps: int = 2000,
    step_rule: ArmijoRule | None = None,
    symmetry: Callable[[np.ndarray], np.ndarray] | None = None,
) -> MinimizerResult:
    """Normalized, preconditioned gradient descent on mean-zero node values.

    Each iterate is projected to mean zero and rescaled to unit ``L^{p*}``
    norm. Steps use Armijo backtracking; the run stops when the quotient
    decreased by less than ``rtol`` (relative) over the last ``window``
    accepted steps, or when no step passes the line search.

    ``symmetry`` is an optional linear orthogonal projection (for example
    averaging over a torus shift); iterates and directions stay in its range.
    """
    rule = step_rule or ArmijoRule()
    sym = symmetry or (lambda V: V)
    obj = _QuotientObjective(wp, pq)
    U = obj.normalize(sym(pq.grid_values(init)))
    prec = _preconditioner(pq, wp)
    Q, g = obj.value_and_grad(U)
    history = [Q]
    step = rule.initial_step
    rises = 0
    converged = False
    it = 0
    for it in range(1, steps + 1):
        g = sym(g)
        d = sym(-np.real(np.fft.ifftn(prec * np.fft.fftn(g))))
        d -= d.mean()
        slope = float(np.sum(g * d)) * pq.cell
        if slope >= 0:
            converged = True
            break
        accepted = False
        for _ in range(rule.max_backtracks):
            trial = obj.normalize(U + step * d)
            Qt = obj.value(trial)
            if Qt <= Q + rule.sufficient_decrease * step * slope:
                accepted = True
                break
            step *= rule.shrink
        if not accepted:
            converged = True
            break
        rises = rises + 1 if Qt > Q else 0
        if rises >= 5:
            raise DescentDiverged("quotient increased over 5 consecutive accepted steps")
        U = trial
        Q, g = obj.value_and_grad(U)
        history.append(Q)
        step = min(step / rule.shrink, 1e6)
        if len(history) > rule.window and history[-rule.window - 1] - Q < rule.rtol * abs(Q):
            converged = True
            break
    return MinimizerResult(U, Q, history, it, converged)


def stationarity_defect(U, wp: WspParams, pq: PairQuadrature, rng: np.random.Generator, directions: int = 8, h: float = 1e-5) -> float:
    """Max over random mean-zero unit directions of ``|dQ(u)[v]| / Q(u)`` by central differences."""
    obj = _QuotientObjective(wp, pq)
    U = pq.grid_values(U)
    Q = obj.value(U)
    worst = 0.0
    for _ in range(directions):
        v = rng.normal(size=U.shape)
        v -= v.mean()
        v /= lp_norm_grid(v, wp.p_star, pq)
        d = (obj.value(U + h * v) - obj.value(U - h * v)) / (2.0 * h)
        worst = max(worst, abs(d) / Q)
    return worst


# ---------------------------------------------------------------------------
# orthogonality machinery
# ---------------------------------------------------------------------------


def _signed_power(c: np.ndarray, e: float) -> np.ndarray:
    return np.sign(c) * np.abs(c) ** e


@dataclass(frozen=True, eq=False)
class SignedPartition:
    """Sign-changing family with ``sum_i |f_i|^p = 1``.

    Each member is given by an evaluator on chart points and a gradient
    evaluator (orthonormal frame components).
    """

    kind: str
    p: float
    functions: tuple[Callable, ...]
    gradients: tuple[Callable, ...]

    def values(self, points) -> np.ndarray:
        return np.stack([f(points) for f in self.functions])

    def verify(self, rule: QuadratureRule, tol: float = 1e-10) -> None:
        F = self.values(rule.nodes)
        dev = float(np.max(np.abs(np.sum(np.abs(F) ** self.p, axis=0) - 1.0)))
        if dev > tol:
            raise PartitionIdentityViolated(f"sum |f_i|^p deviates from 1 by {dev:.2e}")
        for i, row in enumerate(F):
            if not (np.any(row > 0) and np.any(row < 0)):
                raise PartitionIdentityViolated(f"member {i} does not change sign on the nodes")


def make_partition(kind: str, p: float, manifold: SpectralManifold | None = None) -> SignedPartition:
    """``cos_sin_circle``: ``sgn(c)|c|^{2/p}`` for c = cos, sin of the angle.

    ``torus_axis``: the same construction applied to every product of
    single-axis cosines and sines on a flat torus. Members are C^1 for p <= 2.
    """
    if not p >= 1:
        raise InvalidParameter("p must be >= 1")
    e = 2.0 / p
    if kind == "cos_sin_circle":
        R = getattr(manifold, "R", 1.0) if manifold is not None else 1.0

        def make(trig, dtrig):
            def f(points):
                th = np.asarray(points, dtype=float).reshape(-1)
                return _signed_power(trig(th), e)

            def df(points):
                th = np.asarray(points, dtype=float).reshape(-1)
                c = trig(th)
                return (e * np.abs(c) ** (e - 1.0) * dtrig(th) / R)[:, None]

            return f, df

        f1, d1 = make(np.cos, lambda t: -np.sin(t))
        f2, d2 = make(np.sin, np.cos)
        return SignedPartition(kind, p, (f1, f2), (d1, d2))
    if kind == "torus_axis":
        if manifold is None or not manifold.is_flat:
            raise InvalidParameter("torus_axis needs a flat torus")
        L = np.asarray(manifold.periods)
        n = len(L)
        fns, grads = [], []
        for choice in np.ndindex(*([2] * n)):
            def f(points, choice=choice):
                x = np.atleast_2d(np.asarray(points, dtype=float))
                prod = np.ones(len(x))
                for i, c in enumerate(choice):
                    a = 2.0 * math.pi * x[:, i] / L[i]
                    prod = prod * (np.cos(a) if c == 0 else np.sin(a))
                return _signed_power(prod, e)

            def df(points, choice=choice):
                x = np.atleast_2d(np.asarray(points, dtype=float))
                facs = []
                ders = []
                for i, c in enumerate(choice):
                    k = 2.0 * math.pi / L[i]
                    a = k * x[:, i]
                    facs.append(np.cos(a) if c == 0 else np.sin(a))
                    ders.append(-k * np.sin(a) if c == 0 else k * np.cos(a))
                prod = np.prod(facs, axis=0)
                out = np.empty((len(x), n))
                for i in range(n):
                    dprod = ders[i] * np.prod([facs[j] for j in range(n) if j != i], axis=0)
                    out[:, i] = e * np.abs(prod) ** (e - 1.0) * dprod
                return out

            fns.append(f)
            grads.append(df)
        return SignedPartition(kind, p, tuple(fns), tuple(grads))
    raise InvalidParameter(f"unknown partition kind {kind!r}")


def orthogonality_residuals(u, part: SignedPartition, p_star: float, rule: QuadratureRule) -> np.ndarray:
    """``r_i = int f_i |f_i|^{p*-1} |u|^{p*}``."""
    U = np.abs(_values(u, rule)) ** p_star
    F = part.values(rule.nodes)
    return np.array([_integral(rule, f * np.abs(f) ** (p_star - 1.0) * U) for f in F])


def split_masses(u, part: SignedPartition, p_star: float, rule: QuadratureRule) -> np.ndarray:
    """Rows ``(A_i, B_i)`` with ``A_i = int (f_i+)^{p*}|u|^{p*}`` and ``B_i`` for the negative part."""
    U = np.abs(_values(u, rule)) ** p_star
    F = part.values(rule.nodes)
    return np.array(
        [[_integral(rule, np.maximum(f, 0.0) ** p_star * U), _integral(rule, np.maximum(-f, 0.0) ** p_star * U)] for f in F]
    )


def split_identity_check(u, part: SignedPartition, wp: WspParams, rule: QuadratureRule, residual_tol: float = 1e-8) -> float:
    """``max_i | ||f_i u||^p - 2^{-sp/n} (||f_i+ u||^p + ||f_i- u||^p) |`` in ``L^{p*}``."""
    ps, p = wp.p_star, wp.p
    res = orthogonality_residuals(u, part, ps, rule)
    if np.any(np.abs(res) >= residual_tol):
        raise OrthogonalityViolated(f"orthogonality residuals {res} not below {residual_tol:g}")
    vals = _values(u, rule)
    F = part.values(rule.nodes)
    worst = 0.0
    for f in F:
        whole = _integral(rule, np.abs(f * vals) ** ps) ** (p / ps)
        plus = _integral(rule, np.abs(np.maximum(f, 0.0) * vals) ** ps) ** (p / ps)
        minus = _integral(rule, np.abs(np.maximum(-f, 0.0) * vals) ** ps) ** (p / ps)
        worst = max(worst, abs(whole - 2.0 ** (-wp.sp / wp.n) * (plus + minus)))
    return worst


def _weighted_energy(energy: PairEnergy, U: np.ndarray, a: np.ndarray) -> float:
    """``iint a(x) |u(x)-u(y)|^p K`` on the grid with the diagonal correction weighted by a."""
    from .sobolev import _half_offsets

    p = energy.wp.p
    K = energy.table
    w = energy.pq.cell
    axes = tuple(range(U.ndim))
    total = 0.0
    for idx, mult in _half_offsets(U.shape):
        kv = K[idx]
        if kv == 0.0:
            continue
        shift = [-i for i in idx]
        diff = np.abs(U - np.roll(U, shift=shift, axis=axes)) ** p
        weight = a + np.roll(a, shift=shift, axis=axes) if mult == 2.0 else a
        total += kv * float(np.sum(weight * diff))
    total *= w * w
    dm = energy.diag
    if dm is not None:
        G = spectral_gradient(U, energy.pq.spacing).reshape(-1, U.ndim)
        total += w * float(np.sum(a.reshape(-1) * dm.value(G)))
    return total


def lipschitz_constant(f, m: SpectralManifold, order: int = 4096) -> float:
    """``max |grad f|`` over a dense grid (f a SpectralFunction or a (values, gradient) pair)."""
    rule = m.quadrature(order if m.dim == 1 else max(64, int(order ** (1.0 / m.dim))))
    if isinstance(f, SpectralFunction):
        G = f.gradient(rule.nodes)
    else:
        G = f[1](rule.nodes)
    return float(np.max(np.sqrt(np.sum(np.atleast_2d(G) ** 2, axis=-1))))


def leibniz_energy_bound(u, f, delta: float, wp: WspParams, pq: PairQuadrature) -> float:
    """Right minus left side of the product-energy bound.

    ``[f u]^p <= (1+delta)^{p-1} iint |f(x)|^p |u(x)-u(y)|^p K + C(f, delta) ||u||_p^p``
    with ``C(f, delta) = (1 + 1/delta)^{p-1} L_f^p sup_y int d^p K``.
    """
    if not 0.0 < delta < 1.0:
        raise InvalidParameter("delta must lie in (0, 1)")
    p = wp.p
    U = pq.grid_values(u)
    if isinstance(f, SpectralFunction):
        Fv = pq.grid_values(f)
    else:
        Fv = np.asarray(f[0](pq.rule.nodes), dtype=float).reshape(pq.shape)
    energy = PairEnergy(pq, wp)
    lhs = energy.energy(Fv * U)
    weighted = _weighted_energy(energy, U, np.abs(Fv) ** p)
    Lf = lipschitz_constant(f, pq.manifold)
    C = (1.0 + 1.0 / delta) ** (p - 1.0) * Lf**p * kernel_moment(pq, wp)
    rhs = (1.0 + delta) ** (p - 1.0) * weighted + C * lp_norm_grid(U, p, pq) ** p
    return rhs - lhs


# ---------------------------------------------------------------------------
# improved-constant trend
# ---------------------------------------------------------------------------


def half_shift_symmetry(shape: tuple[int, ...], axis: int = 0) -> Callable[[np.ndarray], np.ndarray]:
    """Projection onto grid functions invariant under a half-period shift along ``axis``."""
    N = shape[axis]
    if N % 2:
        raise InvalidParameter("half-period symmetry needs an even grid")
    return lambda V: 0.5 * (V + np.roll(V, N // 2, axis=axis))


@dataclass(frozen=True)
class ImprovedConstantTrend:
    unconstrained: float
    constrained: float
    target_factor: float
    residual: float

    @property
    def observed_factor(self) -> float:
        """Ratio of the two suprema of ``||u||_{p*}^p / [u]^p``."""
        return self.unconstrained / self.constrained

    @property
    def holds(self) -> bool:
        return self.observed_factor <= self.target_factor * 1.1


def improved_constant_trend(
    wp: WspParams,
    pq: PairQuadrature,
    seeds: Sequence[int] = (0, 1, 2),
    part: SignedPartition | None = None,
    K: int = 12,
) -> ImprovedConstantTrend:
    """Compare minimized quotients without and with the orthogonality conditions.

    The constrained class is the half-period-symmetric functions: for the
    cos/sin partition (and its torus analogue) each ``f_i |f_i|^{p*-1}`` is odd
    under the shift while ``|u|^{p*}`` is even, so every residual vanishes.
    The sup of ``||u||^p / [u]^p`` is the reciprocal of the minimized quotient.
    """
    m = pq.manifold
    sym = half_shift_symmetry(pq.shape)
    best_free = math.inf
    best_sym = math.inf
    best_u = None
    for seed in seeds:
        init = random_band_limited(m, np.random.default_rng(seed), K)
        best_free = min(best_free, minimize_quotient(wp, pq, init).value)
        res = minimize_quotient(wp, pq, init, symmetry=sym)
        if res.value < best_sym:
            best_sym, best_u = res.value, res.u
    if part is None:
        part = make_partition("cos_sin_circle" if m.dim == 1 else "torus_axis", wp.p, m)
    r = orthogonality_residuals(best_u.reshape(-1), part, wp.p_star, pq.rule)
    scale = float(np.sum(pq.rule.weights * np.abs(best_u.reshape(-1)) ** wp.p_star))
    return ImprovedConstantTrend(best_free, best_sym, 2.0 ** (-wp.sp / wp.n), float(np.max(np.abs(r)) / scale))
