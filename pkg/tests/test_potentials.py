import math

import numpy as np
import pytest
import sympy as sp
from hypothesis import given
from hypothesis import strategies as st

from weakhypo.potentials import (
    AssumptionViolation,
    CustomProfile,
    LogLogProfile,
    LogPowerProfile,
    Potential,
    PowerProfile,
    QuadraticProfile,
    SingularProfile,
    canonicalize,
    check_growth,
    check_vv3,
    gradient_fd_error,
    make_potential,
    moment_check,
    profile_H,
    sweep_H,
)

r = sp.symbols("r", nonnegative=True)

# symbolic oracles for the four profile families
SYMBOLIC = [
    (QuadraticProfile(0.5), sp.Rational(1, 2) * r),
    (QuadraticProfile(1.0), r),
    (PowerProfile(1.0, 1.0), (1 + r) ** sp.Rational(1, 2)),
    (PowerProfile(2.0, 0.5), 2 * (1 + r) ** sp.Rational(1, 4)),
    (LogPowerProfile(1, 4.0), sp.Rational(5, 2) * sp.log(1 + r)),
    (LogPowerProfile(2, 1.0), sp.Rational(3, 2) * sp.log(1 + r)),
    (LogLogProfile(1, 2.0), sp.Rational(1, 2) * sp.log(1 + r) + 2 * sp.log(sp.log(sp.E + r))),
]


@pytest.mark.parametrize("prof, expr", SYMBOLIC, ids=lambda p: getattr(p, "family", ""))
def test_profile_derivatives_match_sympy(prof, expr):
    pts = np.array([0.0, 1e-3, 0.5, 2.0, 37.0, 1e4])
    for k, meth in enumerate([prof.phi, prof.d1, prof.d2, prof.d3]):
        f = sp.lambdify(r, sp.diff(expr, r, k), "numpy")
        np.testing.assert_allclose(meth(pts), f(pts) * np.ones_like(pts), rtol=1e-12, atol=1e-300)


@pytest.mark.parametrize("prof, expr", SYMBOLIC, ids=lambda p: getattr(p, "family", ""))
def test_profile_H_matches_sympy(prof, expr):
    d2 = 1
    p1, p2, p3 = (sp.diff(expr, r, k) for k in (1, 2, 3))
    H = sp.lambdify(r, (2 * r * p3 + (d2 + 2) * p2) / p1 - p1 - 2 * r * p2, "numpy")
    pts = np.array([1e-3, 0.5, 2.0, 37.0, 1e4])
    np.testing.assert_allclose(profile_H(prof, d2, pts), H(pts), rtol=1e-10)


def test_H_gaussian_constant():
    grid = np.logspace(-6, 6, 50)
    np.testing.assert_array_equal(profile_H(QuadraticProfile(0.5), 1, grid), -0.5)
    for d2 in (1, 2, 5):
        assert np.all(profile_H(QuadraticProfile(0.5), d2, grid) == -0.5)


def test_H_linear_profile_d1():
    assert np.all(profile_H(QuadraticProfile(1.0), 1, np.logspace(-3, 3, 20)) == -1.0)


def test_H_power_profile_bounded():
    sup, slope = sweep_H(PowerProfile(1.0, 1.0), 1, np.concatenate([[0.0], np.logspace(-6, 6, 200)]))
    assert math.isfinite(sup)
    assert slope <= 0


def test_singular_profile():
    prof = CustomProfile(lambda x: 0 * x, lambda x: 0 * x, lambda x: 0 * x, lambda x: 0 * x, "flat")
    with pytest.raises(SingularProfile):
        profile_H(prof, 1, [1.0])


def test_vv3_examples():
    g = check_vv3(QuadraticProfile(0.5), 1)
    assert g.passed and g.measured == pytest.approx(0.5, abs=1e-15)
    assert check_vv3(LogPowerProfile(1, 3.0), 1).passed
    sq = CustomProfile(lambda x: x**2, lambda x: 2 * x, lambda x: 2 + 0 * x, lambda x: 0 * x, "square")
    assert not check_vv3(sq, 1).passed


def test_growth_examples():
    q = Potential(QuadraticProfile(0.5), 1)
    assert check_growth(q, 1.0, 1.0, 512, 10.0).passed
    assert check_growth(Potential(PowerProfile(1.0, 1.0), 1), 1.0, 10.0, 512, 1e3).passed
    assert check_growth(Potential(PowerProfile(1.0, 3.0), 2), 1.0, 20.0, 512, 1e3).passed
    ex = CustomProfile(np.exp, np.exp, np.exp, np.exp, "exp")
    assert not check_growth(Potential(ex, 1), 1.0, 10.0, 512, 10.0).passed


@given(st.floats(0.1, 50.0), st.floats(0.0, 50.0))
def test_growth_monotone_in_M(m, extra):
    v = Potential(PowerProfile(1.0, 1.5), 1)
    a = check_growth(v, 1.0, m, 128, 50.0)
    b = check_growth(v, 1.0, m + extra, 128, 50.0)
    assert a.measured == b.measured
    assert not a.passed or b.passed


def test_normalizing_constant_gaussian():
    assert Potential(QuadraticProfile(0.5), 1).normalizing_constant() == pytest.approx(math.sqrt(2 * math.pi), abs=1e-6)
    assert Potential(QuadraticProfile(0.5), 3).normalizing_constant() == pytest.approx((2 * math.pi) ** 1.5, rel=1e-8)


def test_moment_check_gaussian():
    g = Potential(QuadraticProfile(0.5), 1)
    assert moment_check(g, 2) == pytest.approx(1.0, abs=1e-8)
    assert moment_check(g, 4) == pytest.approx(3.0, abs=1e-8)


def test_moment_check_logpower_tail():
    # |V'| ~ (1+p)/|x| for LogPower(1, p): mu(|V'|^4) finite for every p > 0
    assert math.isfinite(moment_check(Potential(LogPowerProfile(1, 4.0), 1), 4))
    with pytest.raises(ValueError):
        moment_check(Potential(LogPowerProfile(1, 4.0), 1), 3)


def test_non_normalizable():
    # p = 0 would be exp(-V) ~ 1/|x|: excluded at construction
    with pytest.raises((ValueError, AssumptionViolation)):
        Potential(LogPowerProfile(1, 0.0), 1).normalizing_constant()
    flat = CustomProfile(lambda x: 0.1 * np.log1p(x), lambda x: 0.1 / (1 + x), lambda x: -0.1 / (1 + x) ** 2,
                         lambda x: 0.2 / (1 + x) ** 3, "slow")
    with pytest.raises(AssumptionViolation):
        Potential(flat, 1).normalizing_constant()


FAMILIES = [
    {"family": "gaussian", "dim": 1},
    {"family": "gaussian", "dim": 3},
    {"family": "power", "delta": 1, "dim": 2},
    {"family": "power", "delta": 0.5, "k": 2, "dim": 1},
    {"family": "logpower", "p": 4, "dim": 1},
    {"family": "logpower", "p": 2, "dim": 3},
    {"family": "loglog", "p": 2, "dim": 1},
]


@pytest.mark.parametrize("spec", FAMILIES, ids=lambda s: f"{s['family']}-{s['dim']}")
def test_gradient_and_hessian_fd(spec):
    v = make_potential(spec)
    pts = np.random.default_rng(1).uniform(-5, 5, (100, v.dim))
    assert gradient_fd_error(v, pts, 1e-5) < 1e-6
    # Hessian against centred differences of the gradient
    h = 1e-5
    H = v.hessian(pts)
    for i in range(v.dim):
        e = np.zeros(v.dim)
        e[i] = h
        fd = (v.gradient(pts + e) - v.gradient(pts - e)) / (2 * h)
        np.testing.assert_allclose(H[:, :, i], fd, rtol=1e-6, atol=1e-7)


@given(st.lists(st.floats(-1e3, 1e3), min_size=1, max_size=5))
def test_evaluations_finite(xs):
    for spec in FAMILIES:
        v = make_potential(spec)
        x = np.resize(np.array(xs), (1, v.dim))
        assert np.all(np.isfinite(v.value(x)))
        assert np.all(np.isfinite(v.gradient(x)))
        assert np.all(np.isfinite(v.hessian(x)))


@given(st.floats(1e-6, 1e6))
def test_profiles_increasing(x):
    for prof in (PowerProfile(1.0, 1.0), LogPowerProfile(1, 2.0), LogLogProfile(2, 3.0), QuadraticProfile(0.5)):
        assert prof.d1(x) > 0


def test_make_potential_rejects_unknown():
    with pytest.raises(ValueError):
        make_potential({"family": "cubic"})
    with pytest.raises(ValueError):
        make_potential({"family": "power", "delta": 1, "colour": "red"})


def test_canonicalize_roundtrip():
    sigma = np.array([[2.0, 0.5], [0.0, 1.0]])
    shift = np.array([0.3, -1.0])
    pot, frame = canonicalize(QuadraticProfile(0.5), 2, sigma, shift)
    x = np.random.default_rng(0).standard_normal((5, 2))
    np.testing.assert_allclose(frame.from_canonical(frame.to_canonical(x)), x, atol=1e-12)
    with pytest.raises(ValueError):
        canonicalize(QuadraticProfile(0.5), 2, np.zeros((2, 2)))


def test_fast_growing_tail_is_integrable_despite_overflow():
    # V = y^4: |V'|^2 overflows at the default probe radius
    from scipy import integrate

    quartic = Potential(CustomProfile(lambda s: s**2, lambda s: 2 * s, lambda s: 2 + 0 * s, lambda s: 0 * s), 1)
    z = integrate.quad(lambda y: math.exp(-(y**4)), -np.inf, np.inf)[0]
    m = integrate.quad(lambda y: (4 * y**3) ** 2 * math.exp(-(y**4)), -np.inf, np.inf)[0] / z
    assert moment_check(quartic, 2) == pytest.approx(m, rel=1e-7)
