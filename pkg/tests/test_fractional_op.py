import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate
from scipy.special import gamma as sgamma

from fracsob.errors import CoincidentPoints, InvalidParameter, NonConvergingSchedule, QuadratureNotConverged
from fracsob.fractional_op import (
    FracParams,
    dtn_value,
    euclidean_kernel_check,
    extension_value,
    frac_apply_semigroup,
    frac_apply_singular,
    frac_apply_spectral,
    frac_kernel,
    frac_kernel_reg,
    limit_defect_s0,
    limit_defect_s1,
    poisson_mass,
    richardson_limit,
    singular_integral_samples,
)
from fracsob.manifold import ManifoldSpec, SpectralFunction, make_manifold, random_band_limited
from fracsob.subordination import SubordinationQuad, poisson_multiplier, scalar_identity_defect

CIRCLE = make_manifold(ManifoldSpec.circle(1.0))
TORUS = make_manifold(ManifoldSpec.flat_torus((2 * math.pi, 2 * math.pi)))
ORIGIN = np.array([[0.0]])
SQPI = math.sqrt(math.pi)


def circle_fn(*pairs, K=9):
    """Circle function from (mode index, value) pairs in the orthonormal basis."""
    c = np.zeros(K)
    for k, v in pairs:
        c[k] = v
    return SpectralFunction(CIRCLE, c)


COS = circle_fn((1, SQPI), K=3)  # cos(theta)
COS2 = circle_fn((3, SQPI), K=5)  # cos(2 theta)


def test_params_validation_and_constants():
    for s in (0.0, 1.0, -0.2):
        with pytest.raises(InvalidParameter):
            FracParams(s)
    p = FracParams(0.5)
    assert p.dtn_constant == pytest.approx(1.0, abs=1e-14)
    for s in (0.1, 0.37, 0.9):
        q = FracParams(s)
        assert q.c_s == pytest.approx(1 / abs(sgamma(-s)), rel=1e-12)
        assert q.dtn_constant == pytest.approx(2 ** (2 * s - 1) * sgamma(s) / sgamma(1 - s), rel=1e-12)


def test_spectral_examples():
    assert np.allclose(frac_apply_spectral(FracParams(0.5), COS2).coeffs, 2 * COS2.coeffs)
    const = circle_fn((0, 3.0))
    assert np.all(frac_apply_spectral(FracParams(0.4), const).coeffs == 0)
    lam = CIRCLE.eigenvalues(9)
    for k in range(9):
        e = circle_fn((k, 1.0))
        assert np.allclose(frac_apply_spectral(FracParams(0.3), e).coeffs, lam[k] ** 0.3 * e.coeffs, rtol=1e-14)


@pytest.mark.parametrize("s, lam", [(0.5, 4.0), (0.1, 1.0), (0.5, 1.0), (0.9, 1.0), (0.25, 10.0), (0.75, 250.0)])
def test_scalar_identity(s, lam):
    assert scalar_identity_defect(s, lam) < 1e-8


@settings(max_examples=60, deadline=None)
@given(s=st.floats(0.05, 0.95), lam=st.floats(0.01, 1e4))
def test_scalar_identity_property(s, lam):
    assert scalar_identity_defect(s, lam) < 1e-8 * max(1.0, lam**s)


def test_semigroup_form_matches_spectral():
    u = circle_fn((0, 2.0), (1, 1.0), (3, 1.0))
    v = frac_apply_semigroup(FracParams(0.5), u)
    assert np.allclose(v.coeffs, [0, 1, 0, 2, 0, 0, 0, 0, 0], atol=1e-7)
    assert frac_apply_semigroup(FracParams(0.3), circle_fn((0, 1.0))).coeffs[0] == 0.0
    for m in (CIRCLE, TORUS):
        w = random_band_limited(m, np.random.default_rng(1), 40)
        for s in (0.2, 0.5, 0.8):
            a = frac_apply_semigroup(FracParams(s), w).coeffs
            b = frac_apply_spectral(FracParams(s), w).coeffs
            assert np.max(np.abs(a - b)) < 1e-7 * np.max(np.abs(w.coeffs))


def test_semigroup_form_detects_truncated_time_range():
    with pytest.raises(QuadratureNotConverged):
        frac_apply_semigroup(FracParams(0.5), COS, SubordinationQuad(t_max=2.0))


def _circle_kernel_oracle(s, d):
    # c_s int K(t) t^{-1-s} dt with images below t = 1 and the cosine series above
    def heat(t):
        if t < 1.0:
            m = np.arange(-20, 21)
            return float(np.sum(np.exp(-((d + 2 * math.pi * m) ** 2) / (4 * t)))) / math.sqrt(4 * math.pi * t)
        k = np.arange(1, 60)
        return 1 / (2 * math.pi) + float(np.sum(np.exp(-k * k * t) * np.cos(k * d))) / math.pi

    f = lambda t: heat(t) * t ** (-1 - s)
    head = integrate.quad(f, 0, 1, limit=400, epsabs=0, epsrel=1e-12)[0]
    tail = integrate.quad(f, 1, np.inf, limit=400, epsabs=0, epsrel=1e-12)[0]
    return (head + tail) / abs(sgamma(-s))


@pytest.mark.parametrize("s, d", [(0.3, math.pi), (0.3, 1.0), (0.7, 0.2), (0.5, 2.5)])
def test_frac_kernel_against_adaptive_quadrature(s, d):
    assert frac_kernel(CIRCLE, FracParams(s), 0.0, d) == pytest.approx(_circle_kernel_oracle(s, d), rel=1e-6)


def test_frac_kernel_symmetric_and_positive():
    rng = np.random.default_rng(2)
    x, y = TORUS.random_points(rng, 30), TORUS.random_points(rng, 30)
    p = FracParams(0.4)
    a, b = frac_kernel(TORUS, p, x, y), frac_kernel(TORUS, p, y, x)
    assert np.all(a > 0)
    assert np.allclose(a, b, rtol=1e-13)


def test_frac_kernel_rejects_coincident_points():
    with pytest.raises(CoincidentPoints):
        frac_kernel(CIRCLE, FracParams(0.5), 1.0, 1.0)


def test_regularized_kernel_increases_to_kernel():
    p = FracParams(0.3)
    eps = [0.4, 0.2, 0.1, 0.05, 0.01, 0.001]
    vals = [frac_kernel_reg(CIRCLE, p, e, 0.0, 1.0) for e in eps]
    full = frac_kernel(CIRCLE, p, 0.0, 1.0)
    assert np.all(np.diff(vals) > 0)
    assert vals[-1] < full and full - vals[-1] < 1e-4 * full


def test_kernel_distance_band_on_circle():
    for s in (0.25, 0.5, 0.75):
        d = np.linspace(0.1, math.pi, 40)
        scaled = frac_kernel(CIRCLE, FracParams(s), np.zeros_like(d), d) * d ** (1 + 2 * s)
        assert np.all(scaled > 0)
        assert scaled.max() / scaled.min() < 10


def alpha_oracle(n, s):
    return 2 ** (2 * s) * sgamma((n + 2 * s) / 2) / (math.pi ** (n / 2) * abs(sgamma(-s)))


def test_alpha_one_half_is_one_over_pi():
    value, closed = euclidean_kernel_check(1, 0.5, 1.0)
    assert closed == pytest.approx(1 / math.pi, rel=1e-13)
    assert value == pytest.approx(1 / math.pi, rel=1e-7)


@pytest.mark.parametrize("n", [1, 2, 3])
@pytest.mark.parametrize("s", [0.25, 0.5, 0.75])
@pytest.mark.parametrize("r", [0.5, 1.0, 2.0])
def test_euclidean_kernel_ratio(n, s, r):
    value, closed = euclidean_kernel_check(n, s, r)
    assert closed == pytest.approx(alpha_oracle(n, s) * r ** (-(n + 2 * s)), rel=1e-12)
    assert value / closed == pytest.approx(1.0, abs=1e-7)


def test_gaussian_subordination_identity():
    # int_0^inf e^{-1/t} t^{-3/2} dt = sqrt(pi), the lam -> 0 limit of the Poisson multiplier at y = 2
    direct = integrate.quad(lambda t: math.exp(-1 / t) * t**-1.5, 0, np.inf, epsrel=1e-12)[0]
    assert direct == pytest.approx(SQPI, rel=1e-10)
    lam = np.array([0.0, 1e-12, 0.25, 1.0, 9.0])
    assert np.allclose(poisson_multiplier(lam, 0.5, 2.0, SubordinationQuad()), np.exp(-2.0 * np.sqrt(lam)), atol=1e-10)


def test_singular_integral_cosine():
    assert frac_apply_singular(FracParams(0.5), COS, ORIGIN) == pytest.approx(1.0, abs=2e-3)


def test_singular_integral_constant_is_zero_at_every_eps():
    c = circle_fn((0, 4.2))
    samples = singular_integral_samples(FracParams(0.6), c, ORIGIN, [0.2, 0.1, 0.05])
    assert np.all(samples == 0.0)


@pytest.mark.parametrize("m", [CIRCLE, TORUS], ids=["S1", "T2"])
@pytest.mark.parametrize("s", [0.3, 0.5, 0.7])
def test_singular_integral_agrees_with_spectral(m, s):
    rng = np.random.default_rng(11)
    u = random_band_limited(m, rng, 9)
    p = FracParams(s)
    spec = frac_apply_spectral(p, u)
    scale = np.max(np.abs(spec.evaluate(u.default_rule().nodes)))
    for x in m.random_points(rng, 8):
        pv = frac_apply_singular(p, u, x[None, :])
        assert abs(pv - float(spec.evaluate(x[None, :])[0])) <= 5e-3 * scale


def test_singular_integral_unsupported_on_sphere():
    S = make_manifold(ManifoldSpec.sphere2(1.0))
    u = random_band_limited(S, np.random.default_rng(0), 4)
    with pytest.raises(NotImplementedError):
        frac_apply_singular(FracParams(0.5), u, np.array([[1.0, 0.0]]))


def test_richardson_recovers_known_limit():
    h = 0.2 * 2.0 ** -np.arange(6)
    est = richardson_limit(h, 3.0 + 0.7 * h**1.5)
    assert est.value == pytest.approx(3.0, abs=1e-13)
    assert est.order == pytest.approx(1.5, abs=1e-10)
    # pre-asymptotic head is ignored
    F = 3.0 + 0.7 * h**1.5
    F[0] += 0.5
    assert richardson_limit(h, F).value == pytest.approx(3.0, abs=1e-12)


def test_richardson_rejects_non_contracting():
    h = 0.2 * 2.0 ** -np.arange(5)
    with pytest.raises(NonConvergingSchedule):
        richardson_limit(h, [1.0, 2.0, 1.0, 3.0, 0.0])
    with pytest.raises(InvalidParameter):
        richardson_limit([0.1, 0.2, 0.05], [1, 2, 3])


@pytest.mark.parametrize("m", [CIRCLE, TORUS], ids=["S1", "T2"])
@pytest.mark.parametrize("y", [0.1, 0.5, 2.0])
def test_poisson_unit_mass(m, y):
    x = m.random_points(np.random.default_rng(3), 1)
    for s in (0.3, 0.5, 0.8):
        assert abs(poisson_mass(m, FracParams(s), x, y) - 1.0) < 1e-8


def test_extension_of_constant_is_constant():
    c = circle_fn((0, 2.0 * math.sqrt(2 * math.pi)))
    for y in (0.01, 0.3, 3.0):
        assert extension_value(FracParams(0.4), c, np.array([[1.1]]), y) == pytest.approx(2.0, rel=1e-13)


def test_extension_multiplier_closed_form_at_one_half():
    # for s = 1/2 the extension of cos is e^{-y} cos
    for y in (0.01, 0.1, 1.0):
        assert extension_value(FracParams(0.5), COS, ORIGIN, y) == pytest.approx(math.exp(-y), rel=1e-9)


def test_boundary_trace_within_one_thousandth_at_y_001():
    nodes = CIRCLE.quadrature(64).nodes
    U = extension_value(FracParams(0.5), COS, nodes, 0.01)
    assert np.max(np.abs(U - np.cos(nodes[:, 0]))) < 1e-3


def test_boundary_trace_converges_uniformly():
    nodes = CIRCLE.quadrature(64).nodes
    for s in (0.3, 0.5, 0.7):
        errs = [
            np.max(np.abs(extension_value(FracParams(s), COS, nodes, y) - np.cos(nodes[:, 0])))
            for y in (1e-1, 1e-2, 1e-3, 1e-4)
        ]
        assert np.all(np.diff(errs) < 0) and errs[-1] < 1e-2


def test_dtn_examples():
    assert dtn_value(FracParams(0.5), COS, ORIGIN) == pytest.approx(1.0, abs=1e-2)
    assert dtn_value(FracParams(0.4), circle_fn((0, 1.0)), ORIGIN) == 0.0


@pytest.mark.parametrize("s", [0.3, 0.5, 0.7])
def test_dtn_matches_spectral_on_mixtures(s):
    u = circle_fn((0, 0.5), (1, 1.0), (4, -0.7), (5, 0.3))
    p = FracParams(s)
    spec = frac_apply_spectral(p, u)
    for x in (0.0, 1.3, 4.0):
        pt = np.array([[x]])
        target = float(spec.evaluate(pt)[0])
        assert dtn_value(p, u, pt) == pytest.approx(target, rel=1e-2, abs=1e-2 * np.max(np.abs(spec.coeffs)))


def test_limit_defects_closed_forms():
    s_list = [0.9, 0.99, 0.999]
    assert limit_defect_s1(COS, s_list) == pytest.approx([0, 0, 0], abs=1e-14)
    assert limit_defect_s0(COS, [0.1, 0.01]) == pytest.approx([0, 0, 0][:2], abs=1e-14)
    d1 = limit_defect_s1(COS2, s_list)
    assert d1 == pytest.approx([4 - 4**s for s in s_list], rel=1e-10)
    assert np.all(np.diff(d1) < 0)
    u = circle_fn((0, math.sqrt(2 * math.pi)), (5, SQPI), K=7)  # 1 + cos 3 theta
    s_small = [0.1, 0.01, 0.001]
    d0 = limit_defect_s0(u, s_small)
    assert d0 == pytest.approx([9**s - 1 for s in s_small], rel=1e-10)
    assert np.all(np.diff(d0) < 0)
