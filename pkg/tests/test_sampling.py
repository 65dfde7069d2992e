import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate, stats

from weakhypo.potentials import make_potential
from weakhypo.sampling import (
    CHUNK,
    Observable,
    ObservableContractError,
    ProductMeasure,
    osc,
    standard_observables,
    variance,
    variance_of_values,
)

GAUSS = {"family": "gaussian"}
HEAVY = {"family": "logpower", "p": 1}


@pytest.fixture(scope="module")
def gauss():
    return ProductMeasure(make_potential(GAUSS), make_potential(GAUSS))


@pytest.fixture(scope="module")
def heavy():
    return ProductMeasure(make_potential(GAUSS), make_potential(HEAVY))


def quad_1d(pot, g):
    """Independent oracle: E g(X) for a 1-D potential by direct quadrature."""
    dens = lambda x: math.exp(-float(pot.value(np.array([[x]]))[0]))
    z = integrate.quad(dens, -np.inf, np.inf, limit=400)[0]
    return integrate.quad(lambda x: g(x) * dens(x), -np.inf, np.inf, limit=400)[0] / z


def test_gaussian_normalizing_constant(gauss):
    assert gauss.z1 == pytest.approx(math.sqrt(2 * math.pi), rel=1e-10)
    assert gauss.marginal_mass(0) == pytest.approx(1.0, abs=1e-10)
    assert gauss.marginal_mass(1) == pytest.approx(1.0, abs=1e-10)


def test_heavy_marginal_mass(heavy):
    assert heavy.marginal_mass(1) == pytest.approx(1.0, abs=1e-8)


def test_gaussian_second_moment(gauss):
    x, y = gauss.sample(200_000, seed=1)
    assert np.mean(x**2) == pytest.approx(1.0, abs=4 * math.sqrt(2 / x.size))
    assert gauss.radial_moment(0, 2) == pytest.approx(1.0, rel=1e-10)


def test_gaussian_ks(gauss):
    x, y = gauss.sample(100_000, seed=2)
    assert stats.kstest(x[:, 0], "norm").pvalue > 1e-3
    assert stats.kstest(y[:, 0], "norm").pvalue > 1e-3


def test_heavy_tail_fraction_against_quadrature(heavy):
    v2 = make_potential(HEAVY)
    r = 10.0
    oracle = quad_1d(v2, lambda x: float(abs(x) > r))
    assert heavy.tail_fraction(1, r) == pytest.approx(oracle, rel=1e-6, abs=1e-10)
    _, y = heavy.sample(200_000, seed=3)
    emp = np.mean(np.abs(y[:, 0]) > r)
    se = math.sqrt(oracle * (1 - oracle) / y.shape[0])
    assert abs(emp - oracle) <= 4 * se


def test_variance_examples():
    v, se = variance_of_values([1.0, -1.0] * 500)
    assert v == pytest.approx(1000 / 999)
    assert variance_of_values(np.full(10, 3.0)) == (0.0, 0.0)
    rng = np.random.default_rng(0)
    u = rng.uniform(-1, 1, 100_000)  # scaled to variance 1/4
    v, se = variance_of_values(0.5 * u * math.sqrt(3))
    assert v == pytest.approx(0.25, abs=4 * se)


def test_variance_jackknife_matches_brute_force():
    rng = np.random.default_rng(5)
    v = rng.standard_normal(40)
    n = v.size
    loo = np.array([np.var(np.delete(v, i), ddof=1) for i in range(n)])
    brute = math.sqrt((n - 1) / n * np.sum((loo - loo.mean()) ** 2))
    var, se = variance_of_values(v)
    assert var == pytest.approx(np.var(v, ddof=1))
    assert se == pytest.approx(brute, rel=1e-10)


def test_variance_empty_rejected():
    with pytest.raises(ValueError):
        variance_of_values([])


def test_osc_contract(gauss):
    batch = gauss.sample(1000, seed=0)
    for o in standard_observables():
        emp, dec = osc(o, batch)
        assert emp <= dec == 1.0
    bad = Observable(lambda x, y: x[:, 0], 1.0, "x")
    with pytest.raises(ObservableContractError):
        osc(bad, batch)


def test_observable_variance_bounded_by_osc(gauss):
    batch = gauss.sample(5000, seed=9)
    for o in standard_observables():
        v, _ = variance(o, batch)
        assert v <= 0.25 * o.declared_osc**2 + 1e-12


def test_sampling_deterministic_and_thread_independent(heavy):
    n = 2 * CHUNK + 17
    a = heavy.sample(n, seed=11, threads=1)
    b = heavy.sample(n, seed=11, threads=3)
    assert np.array_equal(a[0], b[0]) and np.array_equal(a[1], b[1])
    c = heavy.sample(n, seed=12)
    assert not np.array_equal(a[1], c[1])


@settings(max_examples=15)
@given(st.integers(1, 3 * CHUNK), st.integers(0, 2**32))
def test_sample_is_prefix_of_larger(gauss_n, seed):
    meas = _shared()
    small = meas.sample(gauss_n, seed)
    large = meas.sample(3 * CHUNK, seed)
    assert np.array_equal(small[0], large[0][:gauss_n])


_CACHE = {}


def _shared():
    if "m" not in _CACHE:
        _CACHE["m"] = ProductMeasure(make_potential(GAUSS), make_potential(GAUSS))
    return _CACHE["m"]


def test_sample_rejects_nonpositive(gauss):
    with pytest.raises(ValueError):
        gauss.sample(0, seed=0)


def test_two_dimensional_isotropy():
    meas = ProductMeasure(make_potential({"family": "gaussian", "dim": 2}), make_potential(GAUSS))
    x, _ = meas.sample(100_000, seed=4)
    cov = np.cov(x.T)
    np.testing.assert_allclose(cov, np.eye(2), atol=0.02)
