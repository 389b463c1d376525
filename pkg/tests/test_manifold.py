import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fracsob.errors import NonpositiveLength, OrderTooSmall, PointOutOfChart, UnderResolvedRule, UnsupportedKind
from fracsob.manifold import (
    ManifoldSpec,
    SpectralFunction,
    geodesic_distance,
    lp_norm,
    make_manifold,
    mean,
    project,
    quadrature,
    random_band_limited,
)

CIRCLE = make_manifold(ManifoldSpec.circle(1.0))
TORUS = make_manifold(ManifoldSpec.flat_torus((2 * math.pi, 2 * math.pi)))
SPHERE = make_manifold(ManifoldSpec.sphere2(1.0))
ALL = [CIRCLE, TORUS, SPHERE, make_manifold(ManifoldSpec.flat_torus((1.0, 2.0, 1.5)))]


def test_circle_spectrum():
    assert np.allclose(CIRCLE.eigenvalues(7), [0, 1, 1, 4, 4, 9, 9])


def test_sphere_spectrum():
    assert np.allclose(SPHERE.eigenvalues(9), [0, 2, 2, 2, 6, 6, 6, 6, 6])


def test_torus_volume_and_spectrum():
    assert TORUS.volume == pytest.approx(4 * math.pi**2)
    lam = TORUS.eigenvalues(9)
    assert np.allclose(lam, [0, 1, 1, 1, 1, 2, 2, 2, 2])


def test_torus_spectrum_matches_lattice_enumeration():
    m = make_manifold(ManifoldSpec.flat_torus((1.0, 2.0)))
    K = 60
    lattice = sorted(
        (2 * math.pi * a / 1.0) ** 2 + (2 * math.pi * b / 2.0) ** 2 for a in range(-12, 13) for b in range(-12, 13)
    )
    assert np.allclose(m.eigenvalues(K), lattice[:K])


def test_constant_mode_and_radius_scaling():
    big = make_manifold(ManifoldSpec.circle(2.0))
    assert np.allclose(big.eigenvalues(3), [0, 0.25, 0.25])
    for m in ALL:
        phi0 = m.eigenfunctions(m.random_points(np.random.default_rng(0), 5), 1)
        assert np.allclose(phi0, m.volume**-0.5)


@pytest.mark.parametrize(
    "spec, exc",
    [
        (ManifoldSpec("klein_bottle"), UnsupportedKind),
        (ManifoldSpec.circle(-1.0), NonpositiveLength),
        (ManifoldSpec.flat_torus((1.0, 0.0)), NonpositiveLength),
        (ManifoldSpec.flat_torus((1.0,) * 4), UnsupportedKind),
        (ManifoldSpec.sphere2(0.0), NonpositiveLength),
    ],
)
def test_make_manifold_rejects(spec, exc):
    with pytest.raises(exc):
        make_manifold(spec)


def test_spec_round_trip_is_strict():
    spec = ManifoldSpec.flat_torus((1.0, 2.0))
    assert ManifoldSpec.from_dict(spec.to_dict()) == spec
    with pytest.raises(UnsupportedKind):
        ManifoldSpec.from_dict({"kind": "circle", "radius": 1.0, "periods": [1.0]})


def test_distance_examples():
    assert float(geodesic_distance(CIRCLE, np.array([0.0]), np.array([math.pi]))) == pytest.approx(math.pi)
    north, equator = np.array([0.0, 0.0]), np.array([math.pi / 2, 1.3])
    assert float(geodesic_distance(SPHERE, north, equator)) == pytest.approx(math.pi / 2)
    assert float(geodesic_distance(TORUS, np.array([0.0, 0.0]), np.array([math.pi, math.pi]))) == pytest.approx(
        math.sqrt(2) * math.pi
    )


def test_distance_uses_shortest_representative():
    assert float(geodesic_distance(CIRCLE, np.array([0.1]), np.array([2 * math.pi - 0.1]))) == pytest.approx(0.2)
    d = geodesic_distance(TORUS, np.array([0.1, 6.2]), np.array([6.2, 0.1]))
    assert float(d) == pytest.approx(math.sqrt(2) * (2 * math.pi - 6.1))


def test_sphere_rejects_bad_colatitude():
    with pytest.raises(PointOutOfChart):
        SPHERE.eigenfunctions(np.array([[4.0, 0.0]]), 4)


@pytest.mark.parametrize("m", ALL, ids=lambda m: m.spec.label())
def test_distance_metric_axioms(m):
    rng = np.random.default_rng(3)
    x, y, z = (m.random_points(rng, 200) for _ in range(3))
    dxy, dyx = np.asarray(m.distance(x, y)), np.asarray(m.distance(y, x))
    assert np.allclose(dxy, dyx, atol=1e-12, rtol=0)
    assert np.all(dxy >= 0) and np.all(dxy <= m.diameter + 1e-12)
    assert np.all(dxy <= np.asarray(m.distance(x, z)) + np.asarray(m.distance(z, y)) + 1e-12)
    assert np.allclose(np.asarray(m.distance(x, x)), 0.0, atol=1e-7)


@settings(max_examples=40, deadline=None)
@given(
    a=st.floats(0, 2 * math.pi, allow_nan=False),
    b=st.floats(0, 2 * math.pi, allow_nan=False),
    c=st.floats(0, 2 * math.pi, allow_nan=False),
)
def test_circle_triangle_inequality(a, b, c):
    d = lambda u, v: geodesic_distance(CIRCLE, np.array([u]), np.array([v]))
    assert d(a, b) <= d(a, c) + d(c, b) + 1e-12


def test_quadrature_examples():
    rule = quadrature(CIRCLE, 16)
    assert len(rule) == 16 and np.allclose(rule.weights, 2 * math.pi / 16)
    assert quadrature(SPHERE, 8).weights.sum() == pytest.approx(4 * math.pi, abs=1e-12)
    t = make_manifold(ManifoldSpec.flat_torus((2 * math.pi, 4 * math.pi)))
    rule = quadrature(t, 8)
    assert len(rule) == 64 and np.allclose(rule.weights, 8 * math.pi**2 / 64)


def test_quadrature_order_too_small():
    for m in (CIRCLE, TORUS, SPHERE):
        with pytest.raises(OrderTooSmall):
            quadrature(m, 3)


@pytest.mark.parametrize("m", ALL, ids=lambda m: m.spec.label())
@pytest.mark.parametrize("order", [8, 16, 33, 64])
def test_weights_positive_and_total_volume(m, order):
    rule = quadrature(m, order)
    assert np.all(rule.weights > 0)
    assert rule.weights.sum() == pytest.approx(m.volume, rel=1e-12)


@pytest.mark.parametrize("m", ALL, ids=lambda m: m.spec.label())
@pytest.mark.parametrize("K", [1, 9, 25, 64])
def test_gram_matrix_is_identity(m, K):
    rule = quadrature(m, m.default_order(K))
    F = m.eigenfunctions(rule.nodes, K)
    G = F.T @ (rule.weights[:, None] * F)
    assert np.max(np.abs(G - np.eye(K))) < 1e-8


def test_eigenvalues_nondecreasing():
    for m in ALL:
        assert np.all(np.diff(m.eigenvalues(64)) >= 0)


def test_eigenfunctions_satisfy_laplace_equation_on_sphere():
    # finite-difference Laplace-Beltrami in (colatitude, longitude)
    K, h = 16, 1e-3
    th, ph = 1.1, 0.7
    lam = SPHERE.eigenvalues(K)
    f = lambda a, b: SPHERE.eigenfunctions(np.array([[a, b]]), K)[0]
    d2th = (f(th + h, ph) - 2 * f(th, ph) + f(th - h, ph)) / h**2
    dth = (f(th + h, ph) - f(th - h, ph)) / (2 * h)
    d2ph = (f(th, ph + h) - 2 * f(th, ph) + f(th, ph - h)) / h**2
    lap = d2th + math.cos(th) / math.sin(th) * dth + d2ph / math.sin(th) ** 2
    assert np.allclose(-lap, lam * f(th, ph), atol=1e-5)


def test_project_constant_and_cosine():
    u = project(CIRCLE, lambda x: np.full(len(x), 2.5), 5)
    assert u.coeffs[0] == pytest.approx(2.5 * math.sqrt(2 * math.pi))
    assert np.all(np.abs(u.coeffs[1:]) < 1e-12)
    v = project(CIRCLE, lambda x: np.cos(x[:, 0]), 5)
    assert v.coeffs[1] == pytest.approx(math.sqrt(math.pi))
    assert np.all(np.abs(np.delete(v.coeffs, 1)) < 1e-12)


def test_project_bump_matches_dense_inner_products():
    bump = lambda x: np.exp(np.cos(x[:, 0]) - 1.0) * np.tanh(3 * np.sin(x[:, 0]))
    K = 9
    u = project(CIRCLE, bump, K)
    # oracle: direct trapezoid inner products on a 4x finer grid
    N = 4 * CIRCLE.default_order(K)
    th = np.arange(N) * 2 * math.pi / N
    vals = bump(th[:, None])
    basis = [np.full(N, 1 / math.sqrt(2 * math.pi))]
    for k in range(1, 5):
        basis += [np.cos(k * th) / math.sqrt(math.pi), np.sin(k * th) / math.sqrt(math.pi)]
    oracle = np.array([np.sum(vals * b) * 2 * math.pi / N for b in basis])
    assert np.allclose(u.coeffs, oracle, atol=1e-8)


def test_project_detects_under_resolved_rule():
    with pytest.raises(UnderResolvedRule):
        project(CIRCLE, lambda x: np.ones(len(x)), 20, quadrature(CIRCLE, 8))


def test_norms_and_mean():
    one = SpectralFunction(CIRCLE, np.array([math.sqrt(2 * math.pi)]))
    assert lp_norm(one, 2) == pytest.approx(math.sqrt(2 * math.pi))
    cos = SpectralFunction(CIRCLE, np.array([0.0, math.sqrt(math.pi)]))
    assert abs(mean(cos)) < 1e-15
    f = SpectralFunction(CIRCLE, np.array([math.sqrt(2 * math.pi), math.sqrt(math.pi)]))
    th = np.linspace(0, 2 * math.pi, 4096, endpoint=False)
    dense = (np.sum((1 + np.cos(th)) ** 4) * 2 * math.pi / 4096) ** 0.25
    assert lp_norm(f, 4) == pytest.approx(dense, rel=1e-10)


@pytest.mark.parametrize("m", ALL, ids=lambda m: m.spec.label())
def test_project_evaluate_round_trip(m):
    u = random_band_limited(m, np.random.default_rng(5), 12)
    v = project(m, u.evaluate, 12)
    rule = quadrature(m, m.default_order(12))
    assert np.max(np.abs(u.evaluate(rule.nodes) - v.evaluate(rule.nodes))) < 1e-10
