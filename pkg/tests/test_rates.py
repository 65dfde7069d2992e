import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import optimize

from weakhypo.rates import (
    CASES,
    RateFunction,
    alpha_for,
    case_rates,
    closed_form_class,
    constant,
    fit_asymptotics,
    log_xi_closed_form,
    log_xi_series,
    solve_xi_implicit,
    theta,
    xi_closed_form,
    xi_hw,
    xi_implicit,
)


def brentq_xi(g, t):
    """Independent oracle: root of g(r) = t on (1e-300, 1) for a decreasing g."""
    return optimize.brentq(lambda r: g(r) - t, 1e-12, 1 - 1e-15, xtol=1e-15, rtol=1e-14)


# -- theta -------------------------------------------------------------------


def test_theta_examples():
    assert theta(1, 1) == 4
    assert theta(2, 1) == 2.5
    assert theta(10, 2) == pytest.approx(2 / 3, rel=1e-15)


def test_theta_infinite_branch_is_explicit():
    # second branch has zero positive part, so the first is returned
    assert theta(3, 1) == 2.0


@given(st.floats(1e-3, 1e3), st.integers(1, 10))
def test_theta_brute_force(p, d):
    b1 = (d + p + 2) / p
    den = p * p - 4 - 2 * d - 2 * p
    b2 = (4 * p + 4 + 2 * d) / den if den > 0 else math.inf
    assert theta(p, d) == min(b1, b2)


def test_theta_rejects_nonpositive():
    with pytest.raises(ValueError):
        theta(0, 1)


# -- rate functions --------------------------------------------------------------


def test_alpha_for_examples():
    a = alpha_for("power", {"delta": 1})
    assert a.family == "constant" and a.c == 1
    b = alpha_for("power", {"delta": 0.5})
    assert b.family == "logpower" and b.exponent == 4
    c = alpha_for("logpower", {"p": 1}, d=1)
    assert c.family == "polyinverse" and c.exponent == 4
    e = alpha_for("loglog", {"p": 3})
    assert e.family == "expinverse" and e.exponent == 0.5
    with pytest.raises(ValueError):
        alpha_for("loglog", {"p": 1})


@given(
    st.sampled_from(["constant", "logpower", "polyinverse", "expinverse"]),
    st.floats(0.1, 5),
    st.floats(0, 3),
    st.floats(1e-12, 10),
    st.floats(1.0, 1e3),
)
def test_rate_decreasing_and_at_least_one(fam, c, e, r, factor):
    a = RateFunction(fam, c, e)
    v1, v2 = float(a(r)), float(a(r * factor))
    assert v1 >= 1 and v2 >= 1
    assert v1 >= v2 * (1 - 1e-12)


def test_rate_function_validation():
    with pytest.raises(ValueError):
        RateFunction("bogus")
    with pytest.raises(ValueError):
        RateFunction("constant", -1.0)
    with pytest.raises(ValueError):
        RateFunction("constant", 1.0, convention="other")


# -- inversion ---------------------------------------------------------------


def test_xi_constants_exact():
    for t in (0.5, 3.0, 40.0):
        assert xi_implicit(constant(), constant(), 1, 1, t) == pytest.approx(math.exp(-t), rel=1e-9)
        assert xi_hw(constant(), 1, t) == pytest.approx(math.exp(-t), rel=1e-9)


def test_xi_large_t_through_logs():
    sol = solve_xi_implicit(constant(), constant(), 1, 1, 1e8)
    assert sol.log_value == pytest.approx(-1e8, rel=1e-9)


def test_xi_alpha1_inverse_r():
    a1 = RateFunction("polyinverse", 1.0, 1.0)
    oracle = brentq_xi(lambda r: r**-2 * math.log(1 / r), 100.0)
    assert oracle == pytest.approx(0.1402, abs=1e-3)
    assert xi_implicit(a1, constant(), 1, 1, 100) == pytest.approx(oracle, rel=1e-8)


def test_xi_alpha2_inverse_r():
    a2 = RateFunction("polyinverse", 1.0, 1.0)
    oracle = brentq_xi(lambda r: math.log(1 / r) / r, 100.0)
    assert oracle == pytest.approx(0.0337, abs=1e-3)
    assert xi_implicit(constant(), a2, 1, 1, 100) == pytest.approx(oracle, rel=1e-8)
    assert xi_hw(RateFunction("polyinverse", 1.0, 1.0), 1, 100) == pytest.approx(oracle, rel=1e-8)


def test_xi_clamped_when_criterion_fails_at_one():
    sol = solve_xi_implicit(constant(), constant(), 1, 1, 1e-300)
    assert sol.value <= 1.0


def test_c1_scales():
    a = RateFunction("polyinverse", 1.0, 2.0)
    assert xi_implicit(a, constant(), 3.0, 1, 50) == pytest.approx(3 * xi_implicit(a, constant(), 1.0, 1, 50))


BATTERY = [
    (constant(), constant()),
    (RateFunction("logpower", 1.0, 4.0), constant()),
    (RateFunction("polyinverse", 1.0, 4.0), RateFunction("polyinverse", 1.0, 2.5)),
    (RateFunction("expinverse", 1.0, 0.5), constant()),
    (constant(2.0), RateFunction("expinverse", 1.0, 1.0)),
]


@pytest.mark.parametrize("a1, a2", BATTERY)
def test_xi_non_increasing(a1, a2):
    ts = np.geomspace(1e-2, 1e8, 50)
    logs = [solve_xi_implicit(a1, a2, 1, 1, t).log_value for t in ts]
    assert np.all(np.diff(logs) <= 1e-9)


@pytest.mark.parametrize("a1, a2", BATTERY[1:])
def test_xi_goes_to_zero(a1, a2):
    t0 = 10.0
    early = solve_xi_implicit(a1, a2, 1, 1, t0).log_value
    late = solve_xi_implicit(a1, a2, 1, 1, 1e100 * t0).log_value
    assert late < early - 1.0


def test_xi_power_law_composite_exponent():
    # alpha1 = r^-4, alpha2 = r^-2.5: g(r) ~ r^-(4*2 + 2.5*9) = r^-30.5 up to a log
    a1, a2 = RateFunction("polyinverse", 1.0, 4.0), RateFunction("polyinverse", 1.0, 2.5)
    lt = np.array([200.0, 400.0]) * math.log(10)
    lv = [solve_xi_implicit(a1, a2, 1, 1, log_t=x).log_value for x in lt]
    assert (lv[1] - lv[0]) / (lt[1] - lt[0]) == pytest.approx(-1 / 30.5, rel=0.02)


@given(st.sampled_from([b[0] for b in BATTERY]), st.floats(1e-1, 1e7))
def test_hw_dominated_by_implicit(a1, t):
    lhw = solve_xi_implicit(a1, constant(), 1, 1, t).log_value
    assert xi_hw(a1, 1, t) <= math.exp(lhw) * (1 + 1e-9)


# -- closed forms ------------------------------------------------------------


def test_closed_form_examples():
    assert closed_form_class("A1", {"delta": 1, "eps": 1}) == ("exponential", 1)
    cls, e = closed_form_class("A1", {"delta": 1, "eps": 0.5})
    assert cls == "stretched" and e == pytest.approx(0.2)
    t = np.array([1.0, 10.0, 1e4])
    np.testing.assert_allclose(xi_closed_form("A1", {"delta": 1, "eps": 1}, t), np.exp(-t))
    np.testing.assert_allclose(
        xi_closed_form("C2", {"q": 2, "p": 3}, t), np.log(np.log(math.e**2 + t)) ** -1.0, rtol=1e-14
    )


def test_closed_form_constraints():
    with pytest.raises(ValueError):
        log_xi_closed_form("A3", {"delta": 1, "p": 1.0}, 10)
    with pytest.raises(ValueError):
        log_xi_closed_form("Z9", {}, 10)
    with pytest.raises(ValueError):
        case_rates("B2", {"q": -1, "p": 1})


@pytest.mark.parametrize("case", CASES)
def test_closed_forms_decrease(case):
    params = {"delta": 1, "eps": 1, "p": 2, "q": 2}
    if case == "C1":
        params = {"q": 2, "eps": 1}
    lv = log_xi_closed_form(case, params, np.geomspace(1e2, 1e8, 20))
    assert np.all(np.diff(lv) < 0)


# -- fitting -----------------------------------------------------------------


def test_fit_exponential_exact():
    t = np.geomspace(1, 1e4, 30)
    f = fit_asymptotics(np.column_stack([t, -t]), log_values=True)
    assert f.cls == "exponential" and f.exponent == pytest.approx(1.0, abs=0.02)


def test_fit_polynomial_exact():
    t = np.geomspace(1, 1e6, 30)
    f = fit_asymptotics(np.column_stack([t, t**-0.25]))
    assert f.cls == "polynomial" and f.exponent == pytest.approx(0.25, abs=0.02)


def test_fit_from_inversion_polynomial():
    th = 3.0
    a1 = RateFunction("polyinverse", 1.0, th)
    t = np.geomspace(1e2, 1e8, 40)
    lv = [solve_xi_implicit(a1, constant(), 1, 1, x).log_value for x in t]
    f = fit_asymptotics(np.column_stack([t, lv]), log_values=True)
    assert f.cls == "polynomial"
    assert f.exponent == pytest.approx(1 / (2 * th), rel=0.1)


def test_fit_preconditions():
    with pytest.raises(ValueError):
        fit_asymptotics(np.column_stack([np.arange(1, 6.0), np.ones(5)]))
    with pytest.raises(ValueError):
        t = np.linspace(1, 10, 20)
        fit_asymptotics(np.column_stack([t, 1 / t]))
    flat = np.column_stack([np.geomspace(1, 1e5, 20), np.full(20, 0.5)])
    assert fit_asymptotics(flat).cls == "inconclusive"


@pytest.mark.parametrize("params", [{"q": 1.5, "p": 20}, {"q": 2, "p": 3}])
def test_log_time_series_reaches_loglog_regime(params):
    # far beyond any simulated horizon (log10 t in [1e3, 2e3]) the C2 envelope is log-logarithmic
    lt = np.linspace(1e3, 2e3, 30) * math.log(10)
    lv = log_xi_series("C2", params, lt, log_times=True)
    f = fit_asymptotics(np.column_stack([lt, lv]), log_values=True, log_times=True)
    cls, exponent = closed_form_class("C2", params)
    assert f.cls == cls == "log-logarithmic"
    assert f.exponent == pytest.approx(exponent, rel=0.1)
