import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import linalg

from weakhypo.potentials import make_potential
from weakhypo.sde import (
    BlowUpError,
    SdeSystem,
    classify_decay,
    decay_curve,
    em_stationary_covariance,
    em_step,
    exact_stationary_covariance,
    stationarity_check,
)

G = make_potential({"family": "gaussian"})


@pytest.fixture(scope="module")
def quad():
    return SdeSystem(G, G, 1.0)


def test_em_step_example(quad):
    x, y = em_step(quad, np.array([1.0]), np.array([1.0]), 0.01, np.array([0.0]))
    assert x[0] == pytest.approx(1.01) and y[0] == pytest.approx(0.98)


def test_em_step_fixed_point(quad):
    x, y = em_step(quad, np.zeros(1), np.zeros(1), 0.1, np.zeros(1))
    assert x[0] == 0 and y[0] == 0


@given(st.floats(-5, 5), st.floats(-5, 5), st.floats(-3, 3), st.floats(1e-4, 1e-1))
def test_em_x_update_is_noise_free(x0, y0, xi, h):
    x1, _ = em_step(SdeSystem(G, G, 1.0), np.array([x0]), np.array([y0]), h, np.array([xi]))
    x2, _ = em_step(SdeSystem(G, G, 1.0), np.array([x0]), np.array([y0]), h, np.array([0.0]))
    assert x1[0] == x2[0] == pytest.approx(x0 + h * y0)


def test_em_step_rejects_bad_h(quad):
    with pytest.raises(ValueError):
        em_step(quad, np.zeros(1), np.zeros(1), 0.0, np.zeros(1))


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_blow_up_detected(quad):
    # y - h * 2y overflows for h = 2
    with pytest.raises(BlowUpError):
        em_step(quad, np.array([[0.0]]), np.array([[1e308]]), 2.0, np.array([[0.0]]))


def test_singular_coupling_rejected():
    g2 = make_potential({"family": "gaussian", "dim": 2})
    with pytest.raises(ValueError):
        SdeSystem(g2, g2, np.array([[1.0, 0.0], [0.0, 0.0]]))


def test_em_covariance_against_iteration(quad):
    # independent oracle: iterate the covariance recursion to its fixed point
    h = 0.05
    F = np.eye(2) + h * quad.linear_drift()
    P = np.zeros((2, 2))
    for _ in range(20_000):
        P = F @ P @ F.T + np.diag([0.0, 2 * h])
    np.testing.assert_allclose(em_stationary_covariance(quad, h), P, rtol=1e-10)


def test_em_covariance_bias_is_first_order(quad):
    exact = exact_stationary_covariance(quad)
    np.testing.assert_allclose(exact, np.eye(2))
    e1 = np.abs(em_stationary_covariance(quad, 1e-2) - exact).max()
    e2 = np.abs(em_stationary_covariance(quad, 5e-3) - exact).max()
    assert e1 / e2 == pytest.approx(2.0, rel=0.05)


def test_decay_curve_time_zero_is_sample_variance(quad):
    f = lambda x, y: np.tanh(x[:, 0])
    dc = decay_curve(quad, [f], [0.0], 3000, seed=4)
    x, y = quad.measure().sample(3000, seed=0)  # reference scale only
    assert dc.var[0, 0] == pytest.approx(np.var(np.tanh(x[:, 0]), ddof=1), abs=5 * dc.se[0, 0])
    assert dc.var[0, 0] > 0


def test_decay_curve_linear_observable_matches_semigroup(quad):
    # P_t x = (e^{Mt} z)_0 and mu is standard normal, so Var = |row 0 of e^{Mt}|^2
    times = [0.0, 1.0, 2.0]
    dc = decay_curve(quad, [lambda x, y: x[:, 0]], times, 20_000, seed=3, h=1e-3)
    for k, t in enumerate(times):
        row = linalg.expm(quad.linear_drift() * t)[0]
        assert abs(dc.var[0, k] - row @ row) <= 4 * dc.se[0, k] + 2e-3


def test_decay_curve_thread_independent(quad):
    obs = [lambda x, y: np.tanh(x[:, 0])]
    a = decay_curve(quad, obs, [0.0, 0.1], 2500, seed=8, h=1e-2, threads=1, block=1000)
    b = decay_curve(quad, obs, [0.0, 0.1], 2500, seed=8, h=1e-2, threads=3, block=1000)
    assert np.array_equal(a.var, b.var) and np.array_equal(a.se, b.se)


def test_decay_curve_time_grid_validated(quad):
    with pytest.raises(ValueError):
        decay_curve(quad, [lambda x, y: x[:, 0]], [0.0, 0.1005], 1000, seed=0, h=1e-2)
    with pytest.raises(ValueError):
        decay_curve(quad, [lambda x, y: x[:, 0]], [0.0], 10, seed=0)


def test_stationarity_small(quad):
    rep = stationarity_check(quad, ["x2", "y2", "tanh_x"], T=1.0, n=4000, seed=2, h=1e-2)
    assert rep.passed, rep.details


def test_classify_exponential():
    t = np.linspace(0, 10, 41)
    v = np.exp(-0.7 * t)
    fit = classify_decay(t, v, 1e-3 * v)
    assert fit.cls == "exponential" and fit.rate == pytest.approx(0.7, rel=1e-6) and fit.significant


def test_classify_polynomial():
    t = np.linspace(0, 20, 81)
    v = np.where(t > 0, t, 1.0) ** -2.0
    fit = classify_decay(t, v, 1e-3 * v)
    assert fit.cls == "polynomial" and fit.rate == pytest.approx(2.0, rel=1e-6)


def test_classify_stops_at_noise_floor():
    t = np.linspace(0, 10, 41)
    v = np.exp(-t)
    se = np.full_like(t, 1e-3)
    fit = classify_decay(t, v, se)
    assert fit.points == int(np.sum((t > 0) & (v > 3e-3)))


def test_classify_inconclusive_without_signal():
    t = np.linspace(0, 1, 5)
    assert classify_decay(t, np.full(5, 1e-4), np.full(5, 1e-3)).cls == "inconclusive"
