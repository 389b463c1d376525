"""Closed manifolds with analytically known Laplace-Beltrami spectra.

Three models are supported: the circle of radius R, the flat torus with
periods (L_1, ..., L_n), n <= 3, and the round 2-sphere of radius R. Each
exposes its eigenvalues, an L^2-orthonormal real eigenbasis, geodesic
distance, volume and a quadrature rule that integrates products of resolved
eigenfunctions exactly.

Points are arrays of chart coordinates with a trailing axis of length
``chart_dim``: the angle on the circle, (x_1, ..., x_n) on the torus and
(colatitude, longitude) on the sphere.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .errors import (
    NonpositiveLength,
    OrderTooSmall,
    PointOutOfChart,
    UnderResolvedRule,
    UnsupportedKind,
)
from .special import gauss_legendre

GRAM_TOL = 1e-8
MIN_ORDER = 4


@dataclass(frozen=True)
class ManifoldSpec:
    kind: str
    radius: float | None = None
    periods: tuple[float, ...] | None = None

    @classmethod
    def circle(cls, radius: float = 1.0) -> "ManifoldSpec":
        return cls("circle", radius=float(radius))

    @classmethod
    def flat_torus(cls, periods) -> "ManifoldSpec":
        return cls("flat_torus", periods=tuple(float(p) for p in periods))

    @classmethod
    def sphere2(cls, radius: float = 1.0) -> "ManifoldSpec":
        return cls("sphere2", radius=float(radius))

    def to_dict(self) -> dict:
        if self.kind == "flat_torus":
            return {"kind": self.kind, "periods": list(self.periods)}
        return {"kind": self.kind, "radius": self.radius}

    @classmethod
    def from_dict(cls, data: dict) -> "ManifoldSpec":
        data = dict(data)
        kind = data.pop("kind", None)
        if kind == "flat_torus":
            periods = data.pop("periods", None)
            if periods is None or data:
                raise UnsupportedKind(f"flat_torus expects exactly 'periods', got {sorted(data)}")
            return cls.flat_torus(periods)
        if kind in ("circle", "sphere2"):
            radius = data.pop("radius", 1.0)
            if data:
                raise UnsupportedKind(f"{kind} expects only 'radius', got extra {sorted(data)}")
            return cls(kind, radius=float(radius))
        raise UnsupportedKind(f"unsupported manifold kind {kind!r}")

    def label(self) -> str:
        if self.kind == "flat_torus":
            return "T%d(%s)" % (len(self.periods), ",".join("%.6g" % p for p in self.periods))
        return "%s(R=%.6g)" % ("S1" if self.kind == "circle" else "S2", self.radius)


@dataclass(frozen=True, eq=False)
class QuadratureRule:
    """Nodes and positive weights; flat grids also carry their shape and spacing."""

    nodes: np.ndarray
    weights: np.ndarray
    grid_shape: tuple[int, ...] | None = None
    spacing: tuple[float, ...] | None = None

    def __len__(self) -> int:
        return len(self.weights)

    def integrate(self, values) -> float:
        return float(np.dot(self.weights, values))


class SpectralManifold:
    """Common interface; concrete models below."""

    spec: ManifoldSpec
    dim: int
    chart_dim: int
    volume: float
    diameter: float

    # -- spectrum -----------------------------------------------------------
    def eigenvalues(self, K: int) -> np.ndarray:
        raise NotImplementedError

    def eigenfunctions(self, points, K: int) -> np.ndarray:
        """Matrix ``Phi[i, k] = phi_k(x_i)`` of shape (num_points, K)."""
        raise NotImplementedError

    def eigenfunction_gradients(self, points, K: int) -> np.ndarray:
        """Gradients in an orthonormal frame, shape (num_points, K, dim)."""
        raise NotImplementedError

    @property
    def lambda1(self) -> float:
        return float(self.eigenvalues(2)[1])

    def level_sup_weights(self, K: int) -> np.ndarray:
        """Per-mode weight w_k with sum over a full eigenspace = sup_x sum |phi_k(x)|^2."""
        return np.full(K, 1.0 / self.volume)

    def heat_trace_density(self, t: float) -> float:
        """``sum_k e^{-t lambda_k} w_k`` over the full spectrum (= K_M(t,x,x) on homogeneous models)."""
        raise NotImplementedError

    # -- geometry -----------------------------------------------------------
    def canonical(self, points) -> np.ndarray:
        raise NotImplementedError

    def distance(self, x, y) -> np.ndarray:
        raise NotImplementedError

    def quadrature(self, order: int) -> QuadratureRule:
        raise NotImplementedError

    def default_order(self, K: int) -> int:
        raise NotImplementedError

    def random_points(self, rng: np.random.Generator, m: int) -> np.ndarray:
        raise NotImplementedError

    # -- helpers ------------------------------------------------------------
    def as_points(self, points) -> np.ndarray:
        pts = np.asarray(points, dtype=float)
        if self.chart_dim == 1 and (pts.ndim == 0 or pts.shape[-1] != 1):
            pts = pts[..., None]
        if pts.ndim == 1:
            pts = pts[None, :]
        if pts.shape[-1] != self.chart_dim:
            raise PointOutOfChart(
                f"points need trailing dimension {self.chart_dim}, got shape {pts.shape}"
            )
        return self.canonical(pts)

    def spectral_basis(self, K: int) -> "SpectralBasis":
        return SpectralBasis(self, K)

    @property
    def is_flat(self) -> bool:
        return False

    def __repr__(self) -> str:
        return f"{type(self).__name__}({self.spec.label()})"


@dataclass(frozen=True, eq=False)
class SpectralBasis:
    manifold: SpectralManifold
    K: int
    eigenvalues: np.ndarray = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "eigenvalues", self.manifold.eigenvalues(self.K))

    def evaluate(self, points) -> np.ndarray:
        return self.manifold.eigenfunctions(points, self.K)

    def gram(self, rule: QuadratureRule) -> np.ndarray:
        phi = self.evaluate(rule.nodes)
        return phi.T @ (rule.weights[:, None] * phi)


# ---------------------------------------------------------------------------
# flat models
# ---------------------------------------------------------------------------


def theta_sum(t: float, L: float) -> float:
    """``sum_m exp(-t (2 pi m / L)^2)``, the 1D heat trace factor."""
    tau = t * (2.0 * math.pi / L) ** 2
    if tau < 1.0:
        # Poisson dual: (L / sqrt(4 pi t)) sum_m exp(-(m L)^2 / 4t)
        pref = L / math.sqrt(4.0 * math.pi * t)
        acc = 1.0
        m = 1
        while True:
            term = 2.0 * math.exp(-((m * L) ** 2) / (4.0 * t))
            acc += term
            if term < 1e-18 * acc:
                break
            m += 1
        return pref * acc
    acc = 1.0
    k = 1
    while True:
        term = 2.0 * math.exp(-tau * k * k)
        acc += term
        if term < 1e-18 * acc:
            break
        k += 1
    return acc


class Circle(SpectralManifold):
    """Circle of radius R, angle coordinate in [0, 2 pi)."""

    chart_dim = 1
    dim = 1

    def __init__(self, spec: ManifoldSpec):
        self.spec = spec
        self.R = spec.radius
        self.L = 2.0 * math.pi * self.R
        self.volume = self.L
        self.diameter = math.pi * self.R

    @property
    def is_flat(self) -> bool:
        return True

    @property
    def periods(self) -> tuple[float, ...]:
        return (self.L,)

    def frequencies(self, K: int) -> tuple[np.ndarray, np.ndarray]:
        k = np.arange(K)
        freq = (k + 1) // 2
        is_sin = (k % 2 == 0) & (k > 0)
        return freq, is_sin

    def eigenvalues(self, K: int) -> np.ndarray:
        freq, _ = self.frequencies(K)
        return (freq / self.R) ** 2.0

    def eigenfunctions(self, points, K: int) -> np.ndarray:
        th = self.as_points(points)[..., 0]
        freq, is_sin = self.frequencies(K)
        arg = th[..., None] * freq
        out = np.where(is_sin, np.sin(arg), np.cos(arg)) / math.sqrt(math.pi * self.R)
        out[..., 0] = 1.0 / math.sqrt(self.L)
        return out

    def eigenfunction_gradients(self, points, K: int) -> np.ndarray:
        th = self.as_points(points)[..., 0]
        freq, is_sin = self.frequencies(K)
        arg = th[..., None] * freq
        scale = freq / (self.R * math.sqrt(math.pi * self.R))
        out = np.where(is_sin, np.cos(arg), -np.sin(arg)) * scale
        out[..., 0] = 0.0
        return out[..., None]

    def heat_trace_density(self, t: float) -> float:
        return theta_sum(t, self.L) / self.L

    def canonical(self, points) -> np.ndarray:
        return np.mod(np.asarray(points, dtype=float), 2.0 * math.pi)

    def distance(self, x, y) -> np.ndarray:
        x = self.as_points(x)[..., 0]
        y = self.as_points(y)[..., 0]
        d = np.abs(x - y)
        d = np.minimum(d, 2.0 * math.pi - d)
        return self.R * d

    def chart_offset(self, x, y) -> np.ndarray:
        """Signed arclength offsets y - x reduced to [-L/2, L/2)."""
        x = self.as_points(x)
        y = self.as_points(y)
        d = self.R * (y - x)
        return d - self.L * np.floor(d / self.L + 0.5)

    def quadrature(self, order: int) -> QuadratureRule:
        if order < MIN_ORDER:
            raise OrderTooSmall(f"quadrature order must be >= {MIN_ORDER}")
        th = 2.0 * math.pi * np.arange(order) / order
        w = np.full(order, self.L / order)
        return QuadratureRule(th[:, None], w, (order,), (self.L / order,))

    def default_order(self, K: int) -> int:
        return max(4 * K, 32)

    def random_points(self, rng, m):
        return rng.uniform(0.0, 2.0 * math.pi, size=(m, 1))


def _lattice_eigenvalues(ms: np.ndarray, periods: tuple[float, ...]) -> np.ndarray:
    # group axes of equal period so symmetric lattice vectors tie exactly
    lam = np.zeros(len(ms))
    for L in sorted(set(periods)):
        axes = [i for i, p in enumerate(periods) if p == L]
        lam += np.sum(ms[:, axes] ** 2, axis=1) * (2.0 * math.pi / L) ** 2
    return lam


@lru_cache(maxsize=64)
def _torus_modes(periods: tuple[float, ...], K: int) -> tuple[np.ndarray, np.ndarray]:
    n = len(periods)
    L = np.asarray(periods)
    B = 2
    while True:
        grid = np.arange(-B, B + 1)
        ms = np.stack(np.meshgrid(*([grid] * n), indexing="ij"), axis=-1).reshape(-1, n)
        lam = _lattice_eigenvalues(ms, periods)
        keys = tuple(ms[:, i] for i in reversed(range(n))) + (lam,)
        order = np.lexsort(keys)
        if len(order) >= K:
            lam_K = lam[order[K - 1]]
            outside = np.min((2.0 * math.pi * (B + 1) / L) ** 2)
            if lam_K < outside:
                sel = order[:K]
                return ms[sel], lam[sel]
        B *= 2


class FlatTorus(SpectralManifold):
    """Flat torus R^n / (L_1 Z x ... x L_n Z), coordinates in [0, L_i)."""

    def __init__(self, spec: ManifoldSpec):
        self.spec = spec
        self.L = np.asarray(spec.periods, dtype=float)
        self.dim = self.chart_dim = len(self.L)
        self.volume = float(np.prod(self.L))
        self.diameter = 0.5 * float(np.sqrt(np.sum(self.L**2)))

    @property
    def is_flat(self) -> bool:
        return True

    @property
    def periods(self) -> tuple[float, ...]:
        return tuple(float(x) for x in self.L)

    def modes(self, K: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Lattice vectors, eigenvalues and mode type (0 const, 1 cos, 2 sin)."""
        ms, lam = _torus_modes(self.periods, K)
        kind = np.zeros(K, dtype=int)
        freq = ms.copy()
        for i, m in enumerate(ms):
            nz = np.flatnonzero(m)
            if nz.size == 0:
                continue
            if m[nz[0]] > 0:
                kind[i] = 1
            else:
                kind[i] = 2
                freq[i] = -m
        return freq, lam, kind

    def eigenvalues(self, K: int) -> np.ndarray:
        return self.modes(K)[1]

    def _wave(self, points, K):
        x = self.as_points(points)
        freq, _, kind = self.modes(K)
        kvec = 2.0 * math.pi * freq / self.L
        arg = x @ kvec.T
        return arg, kvec, kind

    def eigenfunctions(self, points, K: int) -> np.ndarray:
        arg, _, kind = self._wave(points, K)
        amp = math.sqrt(2.0 / self.volume)
        out = np.where(kind == 2, np.sin(arg), np.cos(arg)) * amp
        out[..., kind == 0] = 1.0 / math.sqrt(self.volume)
        return out

    def eigenfunction_gradients(self, points, K: int) -> np.ndarray:
        arg, kvec, kind = self._wave(points, K)
        amp = math.sqrt(2.0 / self.volume)
        d = np.where(kind == 2, np.cos(arg), -np.sin(arg)) * amp
        d[..., kind == 0] = 0.0
        return d[..., None] * kvec[None, :, :]

    def heat_trace_density(self, t: float) -> float:
        return float(np.prod([theta_sum(t, L) for L in self.L])) / self.volume

    def canonical(self, points) -> np.ndarray:
        return np.mod(np.asarray(points, dtype=float), self.L)

    def chart_offset(self, x, y) -> np.ndarray:
        x = self.as_points(x)
        y = self.as_points(y)
        d = y - x
        return d - self.L * np.floor(d / self.L + 0.5)

    def distance(self, x, y) -> np.ndarray:
        x = self.as_points(x)
        y = self.as_points(y)
        d = y - x
        # 3^n nearest lattice representatives; the metric is diagonal so the
        # minimum factorizes over axes.
        reps = np.stack([np.abs(d + k * self.L) for k in (-1, 0, 1)], axis=0)
        return np.sqrt(np.sum(np.min(reps, axis=0) ** 2, axis=-1))

    def quadrature(self, order: int) -> QuadratureRule:
        if order < MIN_ORDER:
            raise OrderTooSmall(f"quadrature order must be >= {MIN_ORDER}")
        axes = [L * np.arange(order) / order for L in self.L]
        mesh = np.meshgrid(*axes, indexing="ij")
        nodes = np.stack([m.ravel() for m in mesh], axis=-1)
        w = np.full(len(nodes), self.volume / order**self.dim)
        return QuadratureRule(
            nodes, w, (order,) * self.dim, tuple(float(L / order) for L in self.L)
        )

    def default_order(self, K: int) -> int:
        freq, _, _ = self.modes(K)
        per_axis = 2 * int(np.max(np.abs(freq))) + 1
        return max(4 * per_axis, 32)

    def random_points(self, rng, m):
        return rng.uniform(0.0, 1.0, size=(m, self.dim)) * self.L


# ---------------------------------------------------------------------------
# round sphere
# ---------------------------------------------------------------------------


def normalized_legendre(x: np.ndarray, lmax: int) -> np.ndarray:
    """Normalized associated Legendre values ``P[l, m, ...]`` at ``x = cos(theta)``.

    Normalized so that ``2 pi int_0^pi P[l, m]^2 sin(theta) d theta = 1``; no
    Condon-Shortley phase. Standard three-term recursion in l at fixed m,
    seeded by the sectoral values.
    """
    x = np.asarray(x, dtype=float)
    sx = np.sqrt(np.clip(1.0 - x * x, 0.0, None))
    P = np.zeros((lmax + 1, lmax + 1) + x.shape)
    P[0, 0] = 1.0 / math.sqrt(4.0 * math.pi)
    for m in range(1, lmax + 1):
        P[m, m] = math.sqrt((2 * m + 1) / (2.0 * m)) * sx * P[m - 1, m - 1]
    for m in range(0, lmax):
        P[m + 1, m] = math.sqrt(2 * m + 3) * x * P[m, m]
        for l in range(m + 2, lmax + 1):
            a = math.sqrt((4.0 * l * l - 1.0) / (l * l - m * m))
            b = math.sqrt(((l - 1.0) ** 2 - m * m) / (4.0 * (l - 1.0) ** 2 - 1.0))
            P[l, m] = a * (x * P[l - 1, m] - b * P[l - 2, m])
    return P


def sphere_mode_index(K: int) -> tuple[np.ndarray, np.ndarray]:
    ls, ms = [], []
    l = 0
    while len(ls) < K:
        for m in range(-l, l + 1):
            ls.append(l)
            ms.append(m)
        l += 1
    return np.array(ls[:K]), np.array(ms[:K])


class Sphere2(SpectralManifold):
    """Round 2-sphere of radius R; points are (colatitude, longitude)."""

    chart_dim = 2
    dim = 2

    def __init__(self, spec: ManifoldSpec):
        self.spec = spec
        self.R = spec.radius
        self.volume = 4.0 * math.pi * self.R**2
        self.diameter = math.pi * self.R

    def eigenvalues(self, K: int) -> np.ndarray:
        ls, _ = sphere_mode_index(K)
        return ls * (ls + 1.0) / self.R**2

    def eigenfunctions(self, points, K: int) -> np.ndarray:
        pts = self.as_points(points)
        th, ph = pts[..., 0], pts[..., 1]
        ls, ms = sphere_mode_index(K)
        lmax = int(ls.max())
        P = normalized_legendre(np.cos(th), lmax)
        am = np.abs(ms)
        leg = np.moveaxis(P[ls, am], 0, -1)
        ang = np.where(
            ms > 0,
            math.sqrt(2.0) * np.cos(am * ph[..., None]),
            np.where(ms < 0, math.sqrt(2.0) * np.sin(am * ph[..., None]), 1.0),
        )
        return leg * ang / self.R

    def eigenfunction_gradients(self, points, K: int) -> np.ndarray:
        pts = self.as_points(points)
        h = 1e-4
        out = np.empty(pts.shape[:-1] + (K, 2))
        for axis in range(2):
            step = np.zeros(2)
            step[axis] = h
            f = [
                self._raw_eval(pts + j * step, K) for j in (-2, -1, 1, 2)
            ]
            der = (f[0] - 8.0 * f[1] + 8.0 * f[2] - f[3]) / (12.0 * h)
            if axis == 0:
                out[..., 0] = der / self.R
            else:
                out[..., 1] = der / (self.R * np.sin(pts[..., 0])[..., None])
        return out

    def _raw_eval(self, pts, K):
        # evaluation without chart reduction so colatitude offsets stay smooth
        th, ph = pts[..., 0], pts[..., 1]
        ls, ms = sphere_mode_index(K)
        P = normalized_legendre(np.cos(th), int(ls.max()))
        am = np.abs(ms)
        leg = np.moveaxis(P[ls, am], 0, -1)
        ang = np.where(
            ms > 0,
            math.sqrt(2.0) * np.cos(am * ph[..., None]),
            np.where(ms < 0, math.sqrt(2.0) * np.sin(am * ph[..., None]), 1.0),
        )
        return leg * ang / self.R

    def level_sup_weights(self, K: int) -> np.ndarray:
        # addition theorem: sum_m |Y_lm|^2 = (2l+1)/(4 pi R^2), i.e. 1/(4 pi R^2) per mode
        return np.full(K, 1.0 / self.volume)

    def heat_trace_density(self, t: float) -> float:
        acc = 0.0
        l = 0
        while True:
            term = (2 * l + 1) * math.exp(-t * l * (l + 1) / self.R**2)
            acc += term
            if l > 2 and term < 1e-18 * acc:
                break
            l += 1
        return acc / self.volume

    def canonical(self, points) -> np.ndarray:
        pts = np.array(points, dtype=float)
        th = pts[..., 0]
        if np.any(th < -1e-12) or np.any(th > math.pi + 1e-12):
            raise PointOutOfChart("colatitude must lie in [0, pi]")
        pts[..., 0] = np.clip(th, 0.0, math.pi)
        pts[..., 1] = np.mod(pts[..., 1], 2.0 * math.pi)
        return pts

    def unit_vectors(self, points) -> np.ndarray:
        pts = self.as_points(points)
        th, ph = pts[..., 0], pts[..., 1]
        return np.stack(
            [np.sin(th) * np.cos(ph), np.sin(th) * np.sin(ph), np.cos(th)], axis=-1
        )

    def angle(self, x, y) -> np.ndarray:
        a = self.unit_vectors(x)
        b = self.unit_vectors(y)
        cr = np.linalg.norm(np.cross(a, b), axis=-1)
        dot = np.sum(a * b, axis=-1)
        return np.arctan2(cr, dot)

    def distance(self, x, y) -> np.ndarray:
        return self.R * self.angle(x, y)

    def quadrature(self, order: int) -> QuadratureRule:
        if order < MIN_ORDER:
            raise OrderTooSmall(f"quadrature order must be >= {MIN_ORDER}")
        xg, wg = gauss_legendre(order)
        th = np.arccos(xg)
        nphi = 2 * order
        ph = 2.0 * math.pi * np.arange(nphi) / nphi
        T, P = np.meshgrid(th, ph, indexing="ij")
        W = np.repeat(wg[:, None], nphi, axis=1) * (2.0 * math.pi / nphi) * self.R**2
        nodes = np.stack([T.ravel(), P.ravel()], axis=-1)
        return QuadratureRule(nodes, W.ravel())

    def default_order(self, K: int) -> int:
        ls, _ = sphere_mode_index(K)
        return max(4 * (int(ls.max()) + 1), 32)

    def random_points(self, rng, m):
        z = rng.uniform(-1.0, 1.0, size=m)
        ph = rng.uniform(0.0, 2.0 * math.pi, size=m)
        return np.stack([np.arccos(z), ph], axis=-1)


def make_manifold(spec: ManifoldSpec) -> SpectralManifold:
    """Build the model for ``spec``; rejects unknown kinds and nonpositive lengths."""
    if spec.kind == "circle":
        if spec.radius is None or not spec.radius > 0:
            raise NonpositiveLength("circle radius must be positive")
        return Circle(spec)
    if spec.kind == "flat_torus":
        if not spec.periods or len(spec.periods) not in (1, 2, 3):
            raise UnsupportedKind("flat_torus dimension must be 1, 2 or 3")
        if any(not p > 0 for p in spec.periods):
            raise NonpositiveLength("torus periods must be positive")
        return FlatTorus(spec)
    if spec.kind == "sphere2":
        if spec.radius is None or not spec.radius > 0:
            raise NonpositiveLength("sphere radius must be positive")
        return Sphere2(spec)
    raise UnsupportedKind(f"unsupported manifold kind {spec.kind!r}")


def geodesic_distance(m: SpectralManifold, x, y):
    d = m.distance(x, y)
    if np.ndim(d) == 0 or np.size(d) == 1 and np.ndim(x) <= 1:
        return float(np.reshape(d, ()))
    return d


def quadrature(m: SpectralManifold, order: int) -> QuadratureRule:
    return m.quadrature(order)


# ---------------------------------------------------------------------------
# truncated eigen-expansions
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class SpectralFunction:
    """A function given by its first K eigen-coefficients."""

    manifold: SpectralManifold
    coeffs: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "coeffs", np.asarray(self.coeffs, dtype=float).copy())

    @property
    def K(self) -> int:
        return len(self.coeffs)

    @property
    def eigenvalues(self) -> np.ndarray:
        return self.manifold.eigenvalues(self.K)

    def evaluate(self, points) -> np.ndarray:
        return self.manifold.eigenfunctions(points, self.K) @ self.coeffs

    def __call__(self, points) -> np.ndarray:
        return self.evaluate(points)

    def gradient(self, points) -> np.ndarray:
        G = self.manifold.eigenfunction_gradients(points, self.K)
        return np.einsum("...kd,k->...d", G, self.coeffs)

    def mean(self) -> float:
        return float(self.coeffs[0] / math.sqrt(self.manifold.volume))

    def default_rule(self) -> QuadratureRule:
        return self.manifold.quadrature(self.manifold.default_order(self.K))

    def lp_norm(self, q: float, rule: QuadratureRule | None = None) -> float:
        if q < 1:
            raise ValueError("lp_norm needs q >= 1")
        rule = rule or self.default_rule()
        vals = np.abs(self.evaluate(rule.nodes))
        return float(np.dot(rule.weights, vals**q) ** (1.0 / q))

    def with_coeffs(self, coeffs) -> "SpectralFunction":
        return SpectralFunction(self.manifold, coeffs)

    def _aligned(self, other: "SpectralFunction"):
        K = max(self.K, other.K)
        a = np.zeros(K)
        b = np.zeros(K)
        a[: self.K] = self.coeffs
        b[: other.K] = other.coeffs
        return a, b

    def __add__(self, other):
        if isinstance(other, SpectralFunction):
            a, b = self._aligned(other)
            return self.with_coeffs(a + b)
        c = self.coeffs.copy()
        c[0] += float(other) * math.sqrt(self.manifold.volume)
        return self.with_coeffs(c)

    __radd__ = __add__

    def __sub__(self, other):
        return self + (-1.0) * other

    def __mul__(self, c):
        return self.with_coeffs(float(c) * self.coeffs)

    __rmul__ = __mul__

    def __neg__(self):
        return self.with_coeffs(-self.coeffs)


def constant(m: SpectralManifold, c: float, K: int = 1) -> SpectralFunction:
    coeffs = np.zeros(K)
    coeffs[0] = c * math.sqrt(m.volume)
    return SpectralFunction(m, coeffs)


def gram_deviation(m: SpectralManifold, K: int, rule: QuadratureRule) -> float:
    G = SpectralBasis(m, K).gram(rule)
    return float(np.max(np.abs(G - np.eye(K))))


def project(m: SpectralManifold, f, K: int, rule: QuadratureRule | None = None) -> SpectralFunction:
    """Discrete inner products ``u_k = sum_j w_j f(x_j) phi_k(x_j)``.

    ``f`` maps an (M, chart_dim) array of points to M values.
    """
    rule = rule or m.quadrature(m.default_order(K))
    phi = m.eigenfunctions(rule.nodes, K)
    gram = phi.T @ (rule.weights[:, None] * phi)
    dev = float(np.max(np.abs(gram - np.eye(K))))
    if dev > GRAM_TOL:
        raise UnderResolvedRule(f"Gram deviation {dev:.3e} exceeds {GRAM_TOL:g} for K={K}")
    vals = np.asarray(f(rule.nodes), dtype=float)
    return SpectralFunction(m, phi.T @ (rule.weights * vals))


def evaluate(u: SpectralFunction, x) -> np.ndarray:
    return u.evaluate(x)


def lp_norm(u: SpectralFunction, q: float, rule: QuadratureRule | None = None) -> float:
    return u.lp_norm(q, rule)


def mean(u: SpectralFunction) -> float:
    return u.mean()


def random_band_limited(m: SpectralManifold, rng: np.random.Generator, K: int = 12) -> SpectralFunction:
    """Coefficients i.i.d. uniform on [-1, 1] over the first K modes."""
    return SpectralFunction(m, rng.uniform(-1.0, 1.0, size=K))
