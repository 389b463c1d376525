"""Intrinsic fractional Sobolev seminorms.

The kernel ``K_p^s`` is the heat kernel subordinated with exponent
``sigma = sp/2`` and normalization ``c_{s,p} = 1/|Gamma(-sp/2)|``; at p = 2 it
is the fractional-Laplacian kernel itself.

Seminorms are computed on uniform periodic grids (circle and flat tori). The
kernel is translation invariant there, so one table of values over all grid
offsets serves every node pair. The pair sum skips the diagonal, and the
near-diagonal singularity ``|u(x)-u(y)|^p K ~ alpha |grad u . y|^p |y|^{-n-sp}``
is handled by a lattice correction per node:

* n = 1: the correction is exact in closed form,
  ``-2 zeta(-a) h^{1+a} alpha |u'|^p`` with ``a = p - 1 - sp``;
* n >= 2: the Taylor model is split by a smooth radial cutoff of radius
  ``delta``; its integral is analytic and its lattice sum is subtracted, so
  only the smooth remainder is left to the trapezoid rule.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .errors import (
    ConstantInput,
    DiagonalCorrectionFailure,
    ExponentOutOfRange,
    InvalidParameter,
    SupercriticalParameters,
)
from .manifold import QuadratureRule, SpectralFunction, SpectralManifold
from .special import (
    euclidean_kernel_coefficient,
    gauss_legendre,
    riemann_zeta,
    sphere_power_moment,
    subordination_constant,
)
from .subordination import (
    PairSet,
    SubordinationQuad,
    checked_kernel_integral,
    euclidean_time_integral,
    kernel_time_integral,
)


@dataclass(frozen=True)
class WspParams:
    """Parameters of ``W^{s,p}(M)`` on an n-dimensional manifold."""

    s: float
    p: float
    n: int = 1

    def __post_init__(self):
        if not 0.0 < self.s < 1.0:
            raise InvalidParameter("s must lie in (0, 1)")
        if not self.p >= 1.0:
            raise InvalidParameter("p must be >= 1")
        sigma = self.sigma
        if abs(sigma - round(sigma)) < 1e-12 and round(sigma) >= 0:
            raise InvalidParameter("sp/2 must not be a nonnegative integer")

    @property
    def sigma(self) -> float:
        return 0.5 * self.s * self.p

    @property
    def sp(self) -> float:
        return self.s * self.p

    @property
    def c_sp(self) -> float:
        return subordination_constant(self.sigma)

    @property
    def subcritical(self) -> bool:
        return self.sp < self.n

    @property
    def p_star(self) -> float:
        if not self.subcritical:
            raise SupercriticalParameters(f"sp = {self.sp:g} >= n = {self.n}")
        return self.n * self.p / (self.n - self.sp)

    @property
    def near_diagonal_coefficient(self) -> float:
        """``alpha`` in ``K_p^s(x, y) ~ alpha d(x, y)^{-(n+sp)}``."""
        return euclidean_kernel_coefficient(self.n, self.sigma)

    @classmethod
    def for_manifold(cls, m: SpectralManifold, s: float, p: float) -> "WspParams":
        return cls(s, p, m.dim)


# ---------------------------------------------------------------------------
# pointwise kernels
# ---------------------------------------------------------------------------


def wsp_kernel(m: SpectralManifold, wp: WspParams, x, y, quad: SubordinationQuad | None = None):
    """``K_p^s(x, y)`` for x != y."""
    from .fractional_op import _kernel

    return _kernel(m, wp.sigma, 0.0, x, y, quad)


def wsp_kernel_reg(m: SpectralManifold, wp: WspParams, eps: float, x, y, quad: SubordinationQuad | None = None):
    from .fractional_op import _kernel

    if not eps > 0:
        raise InvalidParameter("regularization needs eps > 0")
    return _kernel(m, wp.sigma, eps, x, y, quad)


def euclidean_wsp_check(n: int, wp: WspParams, r: float, quad: SubordinationQuad | None = None) -> tuple[float, float]:
    """Subordinated Gaussian at exponent sp/2 versus its Gamma closed form."""
    quad = quad or SubordinationQuad()
    value = euclidean_time_integral(n, wp.sigma, r, quad)
    return value, euclidean_kernel_coefficient(n, wp.sigma) * r ** (-(n + wp.sp))


def distance_sample(m: SpectralManifold, rng: np.random.Generator, count: int, d_min: float = 0.05):
    """Random point pairs with geodesic distance at least d_min."""
    xs, ys = [], []
    while len(xs) < count:
        x = m.random_points(rng, count)
        y = m.random_points(rng, count)
        keep = np.asarray(m.distance(x, y)) >= d_min
        xs.extend(x[keep])
        ys.extend(y[keep])
    return np.array(xs[:count]), np.array(ys[:count])


def kernel_bound_ratio(m: SpectralManifold, wp: WspParams, sample, quad: SubordinationQuad | None = None) -> tuple[float, float]:
    """Extremes of ``K_p^s(x, y) d(x, y)^{n+sp}`` over a sample of pairs."""
    quad = quad or SubordinationQuad()
    x, y = sample
    pairs = PairSet.from_points(m, x, y)
    vals = kernel_time_integral(pairs, wp.sigma, 0.0, quad)
    r = vals * pairs.distance ** (m.dim + wp.sp)
    return float(r.min()), float(r.max())


# ---------------------------------------------------------------------------
# pair quadrature on periodic grids
# ---------------------------------------------------------------------------


def _smooth_cutoff(r):
    """C-infinity radial cutoff: 1 on [0, 1], 0 on [2, inf)."""
    r = np.asarray(r, dtype=float)
    a = np.clip(2.0 - r, 0.0, None)
    b = np.clip(r - 1.0, 0.0, None)
    fa = np.where(a > 0, np.exp(-1.0 / np.where(a > 0, a, 1.0)), 0.0)
    fb = np.where(b > 0, np.exp(-1.0 / np.where(b > 0, b, 1.0)), 0.0)
    return fa / (fa + fb)


def _cutoff_moment(b: float) -> float:
    """``int_0^2 r^{b-1} phi(r) dr`` for b > 0."""
    x, w = gauss_legendre(64)
    r = 1.5 + 0.5 * x
    return 1.0 / b + 0.5 * float(np.sum(w * r ** (b - 1.0) * _smooth_cutoff(r)))


@dataclass(frozen=True, eq=False)
class PairQuadrature:
    """Pair rule on a uniform periodic grid.

    ``delta`` is the inner radius of the smooth near-field cutoff used by the
    lattice correction in dimension >= 2; ``correction`` is ``"lattice"`` or
    ``"none"``.
    """

    manifold: SpectralManifold
    rule: QuadratureRule
    delta: float
    correction: str = "lattice"
    time_quad: SubordinationQuad = field(default_factory=SubordinationQuad)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.rule.grid_shape

    @property
    def spacing(self) -> tuple[float, ...]:
        return self.rule.spacing

    @property
    def cell(self) -> float:
        return float(self.rule.weights[0])

    def grid_values(self, u) -> np.ndarray:
        if isinstance(u, SpectralFunction):
            return u.evaluate(self.rule.nodes).reshape(self.shape)
        if callable(u):
            return np.asarray(u(self.rule.nodes), dtype=float).reshape(self.shape)
        arr = np.asarray(u, dtype=float)
        if arr.size != len(self.rule):
            raise InvalidParameter("node values do not match the pair quadrature grid")
        return arr.reshape(self.shape)


def make_pair_quadrature(
    m: SpectralManifold,
    order: int,
    delta_cells: float = 8.0,
    correction: str = "lattice",
    time_quad: SubordinationQuad | None = None,
) -> PairQuadrature:
    if not m.is_flat:
        raise NotImplementedError("pair quadrature is implemented for the circle and flat tori")
    if correction not in ("lattice", "none"):
        raise InvalidParameter(f"unknown correction {correction!r}")
    rule = m.quadrature(order)
    delta = delta_cells * max(rule.spacing)
    return PairQuadrature(m, rule, delta, correction, time_quad or SubordinationQuad())


def _offset_grid(pq: PairQuadrature) -> np.ndarray:
    """Signed offsets of every grid displacement, reduced to the central cell, grid-shaped."""
    axes = []
    for N, h in zip(pq.shape, pq.spacing):
        j = np.arange(N)
        j = np.where(j < (N + 1) // 2, j, j - N)
        axes.append(j * h)
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack(mesh, axis=-1)


_TABLE_CACHE: dict = {}


def kernel_table(pq: PairQuadrature, wp: WspParams, kind: str = "intrinsic") -> np.ndarray:
    """Kernel at every grid displacement (diagonal entry set to 0).

    ``kind="intrinsic"`` gives ``K_p^s``; ``kind="geodesic"`` gives
    ``d^{-(n+sp)}``. Tables are cached per grid and parameters.
    """
    key = (
        pq.manifold.spec,
        pq.shape,
        wp.s,
        wp.p,
        kind,
        pq.time_quad,
    )
    hit = _TABLE_CACHE.get(key)
    if hit is not None:
        return hit
    off = _offset_grid(pq).reshape(-1, pq.manifold.dim)
    d = np.sqrt(np.sum(off**2, axis=-1))
    table = np.zeros(d.size)
    nz = d > 0
    if kind == "intrinsic":
        pairs = PairSet.from_offsets(pq.manifold, off[nz])
        table[nz] = kernel_time_integral(pairs, wp.sigma, 0.0, pq.time_quad)
    elif kind == "geodesic":
        table[nz] = d[nz] ** (-(pq.manifold.dim + wp.sp))
    else:
        raise InvalidParameter(f"unknown kernel kind {kind!r}")
    table = table.reshape(pq.shape)
    table.setflags(write=False)
    _TABLE_CACHE[key] = table
    return table


def spectral_gradient(U: np.ndarray, spacing) -> np.ndarray:
    """Gradient of grid values by FFT differentiation, shape U.shape + (n,)."""
    Uh = np.fft.fftn(U)
    out = []
    for axis, (N, h) in enumerate(zip(U.shape, spacing)):
        k = 2.0 * math.pi * np.fft.fftfreq(N, d=h)
        if N % 2 == 0:
            k[N // 2] = 0.0
        shape = [1] * U.ndim
        shape[axis] = N
        out.append(np.real(np.fft.ifftn(Uh * (1j * k.reshape(shape)))))
    return np.stack(out, axis=-1)


def spectral_divergence(V: np.ndarray, spacing) -> np.ndarray:
    """Adjoint-consistent divergence: ``sum_x div(V) U = -sum_x V . grad U``."""
    out = np.zeros(V.shape[:-1])
    for axis, (N, h) in enumerate(zip(V.shape[:-1], spacing)):
        k = 2.0 * math.pi * np.fft.fftfreq(N, d=h)
        if N % 2 == 0:
            k[N // 2] = 0.0
        shape = [1] * (V.ndim - 1)
        shape[axis] = N
        out += np.real(np.fft.ifftn(np.fft.fftn(V[..., axis]) * (1j * k.reshape(shape))))
    return out


@dataclass(frozen=True, eq=False)
class DiagonalModel:
    """Lattice correction ``Z(g)`` for the Taylor model ``alpha |g.y|^p |y|^{-n-sp}``.

    ``Z(g) = int F phi_delta - sum_{y != 0} w F(y) phi_delta(y)``; added per
    node (times the node weight) it restores the diagonal contribution
    missing from the pair sum.
    """

    n: int
    p: float
    sp: float
    alpha: float
    spacing: tuple[float, ...]
    delta: float
    zeta_const: float | None = None
    lattice: np.ndarray | None = None
    psi: np.ndarray | None = None
    analytic: float = 0.0

    @classmethod
    def build(cls, wp_n: int, p: float, sp: float, alpha: float, spacing, delta: float) -> "DiagonalModel":
        a = p - wp_n - sp
        if wp_n == 1:
            h = spacing[0]
            const = -2.0 * riemann_zeta(-a) * h ** (1.0 + a) * alpha
            return cls(1, p, sp, alpha, tuple(spacing), delta, zeta_const=const)
        reach = [int(math.ceil(2.0 * delta / h)) for h in spacing]
        axes = [np.arange(-r, r + 1) * h for r, h in zip(reach, spacing)]
        mesh = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, wp_n)
        rad = np.sqrt(np.sum(mesh**2, axis=-1))
        keep = (rad > 0) & (rad < 2.0 * delta)
        Y = mesh[keep]
        cell = float(np.prod(spacing))
        psi = alpha * rad[keep] ** (-(wp_n + sp)) * _smooth_cutoff(rad[keep] / delta) * cell
        analytic = alpha * sphere_power_moment(wp_n, p) * delta ** (p - sp) * _cutoff_moment(p - sp)
        return cls(wp_n, p, sp, alpha, tuple(spacing), delta, None, Y, psi, analytic)

    def value(self, G: np.ndarray) -> np.ndarray:
        """Z at each gradient row of G (shape (M, n))."""
        if self.zeta_const is not None:
            return self.zeta_const * np.abs(G[:, 0]) ** self.p
        out = np.empty(len(G))
        gnorm = np.sqrt(np.sum(G**2, axis=-1))
        if self.p == 2.0:
            M = (self.lattice * self.psi[:, None]).T @ self.lattice
            out = self.analytic * gnorm**2 - np.einsum("mi,ij,mj->m", G, M, G)
            return out
        chunk = max(1, (1 << 22) // max(1, len(self.psi)))
        for start in range(0, len(G), chunk):
            g = G[start : start + chunk]
            out[start : start + chunk] = self.analytic * gnorm[start : start + chunk] ** self.p - (
                np.abs(g @ self.lattice.T) ** self.p @ self.psi
            )
        return out

    def derivative(self, G: np.ndarray) -> np.ndarray:
        """dZ/dg at each row of G."""
        if self.zeta_const is not None:
            g = G[:, 0]
            return (self.zeta_const * self.p * np.abs(g) ** (self.p - 2.0) * g)[:, None] if self.p != 1 else (
                self.zeta_const * np.sign(g)
            )[:, None]
        gnorm = np.sqrt(np.sum(G**2, axis=-1))
        with np.errstate(divide="ignore", invalid="ignore"):
            radial = np.where(gnorm > 0, self.p * gnorm ** (self.p - 2.0), 0.0)
        out = self.analytic * radial[:, None] * G
        chunk = max(1, (1 << 22) // max(1, len(self.psi)))
        for start in range(0, len(G), chunk):
            proj = G[start : start + chunk] @ self.lattice.T
            with np.errstate(divide="ignore", invalid="ignore"):
                coef = self.p * np.where(proj != 0, np.abs(proj) ** (self.p - 2.0), 0.0) * proj
            out[start : start + chunk] -= (coef * self.psi) @ self.lattice
        return out


def diagonal_model(pq: PairQuadrature, wp: WspParams, kind: str = "intrinsic") -> DiagonalModel:
    alpha = wp.near_diagonal_coefficient if kind == "intrinsic" else 1.0
    return _diagonal_model_cached(pq.manifold.dim, wp.p, wp.sp, alpha, tuple(pq.spacing), pq.delta)


@lru_cache(maxsize=32)
def _diagonal_model_cached(n, p, sp, alpha, spacing, delta):
    return DiagonalModel.build(n, p, sp, alpha, spacing, delta)


# ---------------------------------------------------------------------------
# energies
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class PairEnergy:
    """``E(u) = iint |u(x)-u(y)|^p K(x,y)`` on a grid, with gradient in node values."""

    pq: PairQuadrature
    wp: WspParams
    kind: str = "intrinsic"

    @property
    def table(self) -> np.ndarray:
        return kernel_table(self.pq, self.wp, self.kind)

    @property
    def diag(self) -> DiagonalModel | None:
        if self.pq.correction == "none":
            return None
        return diagonal_model(self.pq, self.wp, self.kind)

    def symbol(self) -> np.ndarray:
        """Fourier multiplier of E at p = 2: ``E = N^{-n} sum_k mu_k |U^_k|^2``."""
        w = self.pq.cell
        K = self.table
        mu = 2.0 * w * w * (np.sum(K) - np.real(np.fft.fftn(K)))
        dm = self.diag
        if dm is not None:
            ks = [2.0 * math.pi * np.fft.fftfreq(N, d=h) for N, h in zip(self.pq.shape, self.pq.spacing)]
            for k, N in zip(ks, self.pq.shape):
                if N % 2 == 0:
                    k[N // 2] = 0.0
            kg = np.stack(np.meshgrid(*ks, indexing="ij"), axis=-1).reshape(-1, len(ks))
            mu = mu + w * dm.value(kg).reshape(self.pq.shape)
        return mu

    def pair_sum(self, U: np.ndarray) -> float:
        p = self.wp.p
        K = self.table
        w = self.pq.cell
        if p == 2.0:
            Uh = np.fft.fftn(U)
            corr = np.real(np.fft.ifftn(np.abs(Uh) ** 2))
            return float(2.0 * w * w * np.sum(K * (corr.flat[0] - corr)))
        total = 0.0
        for idx, mult in _half_offsets(U.shape):
            kv = K[idx]
            if kv == 0.0:
                continue
            diff = U - np.roll(U, shift=[-i for i in idx], axis=tuple(range(U.ndim)))
            total += mult * kv * float(np.sum(np.abs(diff) ** p))
        return w * w * total

    def correction(self, U: np.ndarray) -> tuple[float, np.ndarray]:
        dm = self.diag
        if dm is None:
            return 0.0, np.zeros(U.size)
        G = spectral_gradient(U, self.pq.spacing).reshape(-1, U.ndim)
        Z = dm.value(G)
        return self.pq.cell * float(np.sum(Z)), Z

    def energy(self, U: np.ndarray) -> float:
        return self.pair_sum(U) + self.correction(U)[0]

    def gradient(self, U: np.ndarray) -> np.ndarray:
        p = self.wp.p
        w = self.pq.cell
        if p == 2.0:
            return 2.0 * np.real(np.fft.ifftn(self.symbol() * np.fft.fftn(U)))
        K = self.table
        grad = np.zeros_like(U)
        axes = tuple(range(U.ndim))
        for idx, mult in _half_offsets(U.shape):
            kv = K[idx]
            if kv == 0.0:
                continue
            fwd = U - np.roll(U, shift=[-i for i in idx], axis=axes)
            bwd = U - np.roll(U, shift=list(idx), axis=axes)
            grad += mult * kv * (_dpow(fwd, p) + _dpow(bwd, p))
        grad *= w * w
        dm = self.diag
        if dm is not None:
            G = spectral_gradient(U, self.pq.spacing).reshape(-1, U.ndim)
            dZ = dm.derivative(G).reshape(U.shape + (U.ndim,))
            grad -= w * spectral_divergence(dZ, self.pq.spacing)
        return grad


def _dpow(r: np.ndarray, p: float) -> np.ndarray:
    return p * np.abs(r) ** (p - 1.0) * np.sign(r)


def _half_offsets(shape):
    """One representative of each {d, -d} pair of nonzero grid displacements with its multiplicity."""
    for idx in np.ndindex(*shape):
        if not any(idx):
            continue
        neg = tuple((-i) % N for i, N in zip(idx, shape))
        if neg == idx:
            yield idx, 1.0
        elif idx < neg:
            yield idx, 2.0


def seminorm_power(wp: WspParams, u, pq: PairQuadrature, kind: str = "intrinsic") -> float:
    """``[u]^p`` including the diagonal correction."""
    U = pq.grid_values(u)
    en = PairEnergy(pq, wp, kind)
    pair = en.pair_sum(U)
    corr, _ = en.correction(U)
    total = pair + corr
    if not np.isfinite(total):
        raise DiagonalCorrectionFailure("non-finite seminorm")
    if total < -1e-12 * max(abs(pair), 1e-300) or abs(corr) > 0.5 * max(pair, 1e-300) and pair > 1e-14:
        raise DiagonalCorrectionFailure(
            f"diagonal correction {corr:.3e} not small against the pair sum {pair:.3e}; refine the grid"
        )
    return max(total, 0.0)


def gagliardo_seminorm(wp: WspParams, u, pq: PairQuadrature) -> float:
    return seminorm_power(wp, u, pq, "intrinsic") ** (1.0 / wp.p)


def geodesic_seminorm(wp: WspParams, u, pq: PairQuadrature) -> float:
    return seminorm_power(wp, u, pq, "geodesic") ** (1.0 / wp.p)


def lp_norm_grid(U: np.ndarray, q: float, pq: PairQuadrature) -> float:
    return float(pq.cell * np.sum(np.abs(U) ** q)) ** (1.0 / q)


def poincare_ratio(wp: WspParams, u, pq: PairQuadrature) -> float:
    """``||u - u_M||_p / [u]``."""
    U = pq.grid_values(u)
    centered = U - U.mean()
    if np.max(np.abs(centered)) <= 1e-12 * max(1.0, np.max(np.abs(U))):
        raise ConstantInput("Poincare ratio is undefined for constant input")
    return lp_norm_grid(centered, wp.p, pq) / gagliardo_seminorm(wp, U, pq)


def poincare_proof_bound(m: SpectralManifold, wp: WspParams, c_low: float) -> float:
    """``(D^{n+sp} / (Vol c_low))^{1/p}`` with D the diameter."""
    return (m.diameter ** (m.dim + wp.sp) / (m.volume * c_low)) ** (1.0 / wp.p)


def embedding_ratio(wp: WspParams, u, q: float, pq: PairQuadrature) -> float:
    """``||u||_q / (||u||_p + [u])`` for p <= q <= p_s*."""
    p_star = wp.p_star
    if not (wp.p <= q <= p_star * (1.0 + 1e-12)):
        raise ExponentOutOfRange(f"q must lie in [{wp.p:g}, {p_star:g}]")
    U = pq.grid_values(u)
    return lp_norm_grid(U, q, pq) / (lp_norm_grid(U, wp.p, pq) + gagliardo_seminorm(wp, U, pq))


def kernel_moment(pq: PairQuadrature, wp: WspParams) -> float:
    """``sup_y int d(x,y)^p K_p^s(x,y) dmu(x)`` on the grid, with the diagonal correction."""
    K = kernel_table(pq, wp)
    off = _offset_grid(pq)
    d = np.sqrt(np.sum(off**2, axis=-1))
    total = pq.cell * float(np.sum(d**wp.p * K))
    dm = diagonal_model(pq, wp)
    if pq.correction != "none":
        # directional average of the Taylor-model correction with |g| = 1
        n = pq.manifold.dim
        if n == 1:
            total += float(dm.value(np.ones((1, 1)))[0])
        else:
            dirs = _sphere_directions(n)
            total += float(np.mean(dm.value(dirs)))
    return total


def _sphere_directions(n: int, count: int = 64) -> np.ndarray:
    if n == 2:
        th = np.linspace(0.0, 2.0 * math.pi, count, endpoint=False)
        return np.stack([np.cos(th), np.sin(th)], axis=-1)
    g = np.random.default_rng(0).normal(size=(count, n))
    return g / np.linalg.norm(g, axis=-1, keepdims=True)
