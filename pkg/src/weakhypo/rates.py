"""Rate functions of weak Poincare inequalities and the decay envelope xi(t).

All evaluations are carried out in the variable ``s = log(1/r)`` so that
envelopes as small as ``exp(-1e8)`` can be represented through their logarithm.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize

FAMILIES = ("constant", "logpower", "polyinverse", "expinverse")
CONVENTIONS = ("wpi", "scaled")


def theta(p: float, d: int) -> float:
    """theta(p) = (d+p+2)/p  min  (4p+4+2d)/(p^2-4-2d-2p)^+.

    A vanishing positive part makes the second branch ``math.inf``.
    """
    if p <= 0:
        raise ValueError("theta needs p > 0")
    first = (d + p + 2) / p
    den = max(p * p - 4 - 2 * d - 2 * p, 0.0)
    second = math.inf if den == 0 else (4 * p + 4 + 2 * d) / den
    return min(first, second)


@dataclass(frozen=True)
class RateFunction:
    """Decreasing map alpha: (0, inf) -> [1, inf).

    ``constant``     alpha = c
    ``logpower``     alpha = c log(1 + 1/r)^exponent
    ``polyinverse``  alpha = c r^-exponent
    ``expinverse``   alpha = c exp(c2 r^-exponent)

    Values below one are clamped to one. ``convention`` records whether the
    function was taken from a weak Poincare inequality written as
    ``Var <= alpha(r) E + r osc^2`` (``"wpi"``) or in the ``r alpha(r)`` form
    (``"scaled"``); see :func:`alpha_for`.
    """

    family: str
    c: float = 1.0
    exponent: float = 0.0
    c2: float = 1.0
    convention: str = "wpi"

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown rate family {self.family!r}")
        if self.c <= 0 or self.c2 <= 0:
            raise ValueError("rate constants must be positive")
        if self.exponent < 0:
            raise ValueError("rate exponent must be non-negative")
        if self.convention not in CONVENTIONS:
            raise ValueError(f"unknown convention {self.convention!r}")

    def log_value_s(self, s):
        """log alpha at r = exp(-s)."""
        s = np.asarray(s, dtype=float)
        lc = math.log(self.c)
        with np.errstate(over="ignore"):
            if self.family == "constant":
                out = np.full_like(s, lc)
            elif self.family == "logpower":
                # log(1 + 1/r) = logaddexp(0, s)
                out = lc + self.exponent * np.log(np.logaddexp(0.0, s)) if self.exponent else np.full_like(s, lc)
            elif self.family == "polyinverse":
                out = lc + self.exponent * s
            else:
                out = lc + self.c2 * np.exp(self.exponent * s)
        return np.maximum(out, 0.0)

    def log_value(self, log_r):
        return self.log_value_s(-np.asarray(log_r, dtype=float))

    def __call__(self, r):
        r = np.asarray(r, dtype=float)
        with np.errstate(over="ignore", divide="ignore"):
            return np.exp(self.log_value_s(-np.log(r)))

    def describe(self) -> dict:
        return {"family": self.family, "c": self.c, "exponent": self.exponent, "c2": self.c2, "convention": self.convention}


def constant(c: float = 1.0) -> RateFunction:
    return RateFunction("constant", c)


def alpha_for(family: str, params: dict, d: int = 1, c: float = 1.0, convention: str = "wpi") -> RateFunction:
    """Rate function of the weak Poincare inequality for mu_V, V of the given family.

    ``power`` (``delta``): c log(1+1/r)^(4 (1-delta)^+ / delta), constant for delta >= 1;
    ``gaussian``/``quadratic`` behave as ``power`` with delta = 2;
    ``logpower`` (``p``): c r^-theta(p, d);
    ``loglog`` (``p > 1``): c exp(c2 r^(-1/(p-1))).

    Both conventions yield the same function: the decay estimates plug these
    rates directly into the ``alpha(r) E + r osc^2`` form, and ``convention``
    is carried along only as a label.
    """
    params = dict(params)
    if family in ("gaussian", "quadratic"):
        family, params = "power", {"delta": 2.0}
    if family == "power":
        delta = float(params["delta"])
        if delta <= 0:
            raise ValueError("power family needs delta > 0")
        e = 4 * max(1 - delta, 0.0) / delta
        if e == 0:
            return RateFunction("constant", c, convention=convention)
        return RateFunction("logpower", c, e, convention=convention)
    if family == "logpower":
        p = float(params["p"])
        return RateFunction("polyinverse", c, theta(p, d), convention=convention)
    if family == "loglog":
        p = float(params["p"])
        if p <= 1:
            raise ValueError("loglog family needs p > 1")
        return RateFunction("expinverse", c, 1 / (p - 1), float(params.get("c2", 1.0)), convention=convention)
    raise ValueError(f"unknown potential family {family!r}")


# ---------------------------------------------------------------------------
# implicit inversion


@dataclass
class XiSolution:
    """r* = inf{r : criterion} stored through s* = log(1/r*)."""

    s: float
    log_value: float
    clamped: bool = False
    monotone: bool = True

    @property
    def value(self) -> float:
        return math.exp(self.log_value) if self.log_value > -745 else 0.0


def _log_g_wp(a1: RateFunction, a2: RateFunction):
    def h(s):
        s = np.asarray(s, dtype=float)
        la1 = a1.log_value_s(s)
        with np.errstate(divide="ignore"):
            return 2 * la1 + a2.log_value_s(s + 2 * la1) + np.log(s)

    return h


def _log_g_hw(a1: RateFunction):
    def h(s):
        s = np.asarray(s, dtype=float)
        with np.errstate(divide="ignore"):
            return a1.log_value_s(s) + np.log(s)

    return h


def _invert(h, target: float, s_tol: float = 1e-12) -> XiSolution:
    """Largest s with h(s) <= target, h non-decreasing in s (criterion g(r) <= c2 t)."""
    if not math.isfinite(target):
        raise ValueError("target must be finite")
    # the criterion always holds at r = 1 where log(1/r) = 0; failure there
    # can only come from an infinite rate and is clamped to r* = 1
    h0 = float(h(1e-300))
    if h0 > target:
        return XiSolution(0.0, 0.0, clamped=True)
    hi = 1.0
    while float(h(hi)) <= target:
        hi *= 2
        if hi > 1e300:
            raise OverflowError("criterion bounded in s; envelope is zero")
    grid = np.concatenate([[0.0], np.geomspace(hi * 1e-9, hi, 511)])
    with np.errstate(invalid="ignore"):
        hv = h(np.maximum(grid, 1e-300))
    monotone = bool(np.all(np.diff(hv) >= -1e-12 * np.maximum(1, np.abs(hv[1:]))))
    if monotone:
        lo = hi / 2 if float(h(hi / 2)) <= target else 0.0
    else:
        ok = np.flatnonzero(hv <= target)
        k = int(ok[-1])
        lo, hi = grid[k], grid[k + 1]
    f = lambda s: float(h(max(s, 1e-300))) - target
    if f(lo) > 0:
        lo = 0.0
    s = optimize.bisect(f, lo, hi, xtol=s_tol * max(1.0, hi), rtol=4 * np.finfo(float).eps, maxiter=400) if f(hi) > 0 else hi
    # bisect returns a midpoint; keep the side that satisfies the criterion
    while f(s) > 0 and s > lo:
        s = max(lo, s - s_tol * max(1.0, s))
    return XiSolution(float(s), -float(s), monotone=monotone)


def _log_target(c2: float, t: float | None, log_t: float | None) -> float:
    if log_t is None:
        if t is None or t <= 0:
            raise ValueError("t must be positive")
        log_t = math.log(t)
    return math.log(c2) + log_t


def solve_xi_implicit(a1: RateFunction, a2: RateFunction, c1: float, c2: float, t: float | None = None,
                      log_t: float | None = None) -> XiSolution:
    """xi(t) = c1 inf{r > 0 : c2 t >= alpha1(r)^2 alpha2(r / alpha1(r)^2) log(1/r)}.

    ``log_t`` may replace ``t`` for times beyond floating point range.
    """
    sol = _invert(_log_g_wp(a1, a2), _log_target(c2, t, log_t))
    sol.log_value = math.log(c1) - sol.s
    return sol


def solve_xi_hw(a1: RateFunction, c2: float, t: float | None = None, c1: float = 1.0,
                log_t: float | None = None) -> XiSolution:
    """xi(t) = c1 inf{r > 0 : c2 t >= alpha1(r) log(1/r)}."""
    sol = _invert(_log_g_hw(a1), _log_target(c2, t, log_t))
    sol.log_value = math.log(c1) - sol.s
    return sol


def xi_implicit(a1: RateFunction, a2: RateFunction, c1: float = 1.0, c2: float = 1.0, t: float = 1.0) -> float:
    return solve_xi_implicit(a1, a2, c1, c2, t).value


def xi_hw(a1: RateFunction, c2: float = 1.0, t: float = 1.0, c1: float = 1.0) -> float:
    return solve_xi_hw(a1, c2, t, c1).value


# ---------------------------------------------------------------------------
# closed forms


CASES = ("A1", "A2", "A3", "B1", "B2", "B3", "C1", "C2")


def _pos(x: float) -> float:
    return max(x, 0.0)


def _require(cond: bool, msg: str) -> None:
    if not cond:
        raise ValueError(msg)


def _check_params(case: str, p: dict) -> None:
    if case not in CASES:
        raise ValueError(f"unknown case {case!r}")
    for key in ("delta", "eps"):
        if key in p:
            _require(p[key] > 0, f"{key} must be positive")
    if case[0] == "A":
        _require("delta" in p, "case A needs delta")
    if case in ("A1", "B1"):
        _require("eps" in p, f"{case} needs eps")
    if case in ("A2", "B2") or (case == "C1" and "p" in p):
        _require(p.get("p", 0) > 0, f"{case} needs p > 0")
    if case[1] == "3" or case == "C2":
        _require(p.get("p", 0) > 1, f"{case} needs p > 1")
    if case[0] == "B":
        _require(p.get("q", 0) > 0, f"{case} needs q > 0")
    if case[0] == "C":
        # the rate (log)^{-(q-1)} only decays, and the loglog rate function
        # only exists, for q > 1
        _require(p.get("q", 0) > 1, f"{case} needs q > 1")


def log_xi_closed_form(case: str, params: dict, t):
    """log of the closed-form envelope of the given example case."""
    p = dict(params)
    _check_params(case, p)
    t = np.asarray(t, dtype=float)
    c = p.get("c", 1.0)
    d1, d2 = int(p.get("d1", 1)), int(p.get("d2", 1))
    lc = math.log(c)
    L = np.log(math.e + t)
    LL = np.log(np.log(math.e**2 + t))
    P = np.log1p(t)
    if case == "A1":
        dl, ep = p["delta"], p["eps"]
        g = ep * dl / (ep * dl + 8 * ep * _pos(1 - dl) + 4 * dl * _pos(1 - ep))
        return math.log(p.get("c1", 1.0)) - p.get("c2", 1.0) * t**g
    if case == "A2":
        dl, th = p["delta"], theta(p["p"], d2)
        k = (8 * (th + 1) * _pos(1 - dl) + dl) / (th * dl)
        return lc - P / th + k * np.log(L)
    if case == "A3":
        dl = p["delta"]
        return lc + (1 - p["p"]) * np.log(L) + 8 * _pos(1 - dl) / dl * np.log(LL)
    thq = theta(p["q"], d1) if case[0] == "B" else None
    if case == "B1":
        ep = p["eps"]
        return lc - P / (2 * thq) + (4 * _pos(1 - ep) + ep) / (2 * ep * thq) * np.log(L)
    if case == "B2":
        thp = theta(p["p"], d2)
        D = 2 * thq + thp + 2 * thp * thq
        return lc - P / D + np.log(L) / D
    if case == "B3":
        return lc - (p["p"] - 1) / (1 + 2 * thq) * np.log(L)
    if case == "C1":
        return lc - (p["q"] - 1) * np.log(L)
    return lc - (p["q"] - 1) * np.log(LL)


def xi_closed_form(case: str, params: dict, t):
    with np.errstate(under="ignore"):
        return np.exp(log_xi_closed_form(case, params, t))


def closed_form_class(case: str, params: dict) -> tuple[str, float]:
    """Leading decay class and exponent of the closed-form envelope."""
    p = dict(params)
    _check_params(case, p)
    d1, d2 = int(p.get("d1", 1)), int(p.get("d2", 1))
    if case == "A1":
        dl, ep = p["delta"], p["eps"]
        g = ep * dl / (ep * dl + 8 * ep * _pos(1 - dl) + 4 * dl * _pos(1 - ep))
        return ("exponential" if g == 1 else "stretched"), g
    if case == "A2":
        return "polynomial", 1 / theta(p["p"], d2)
    if case == "A3":
        return "logarithmic", p["p"] - 1
    thq = theta(p["q"], d1) if case[0] == "B" else None
    if case == "B1":
        return "polynomial", 1 / (2 * thq)
    if case == "B2":
        thp = theta(p["p"], d2)
        return "polynomial", 1 / (2 * thq + thp + 2 * thp * thq)
    if case == "B3":
        return "logarithmic", (p["p"] - 1) / (1 + 2 * thq)
    if case == "C1":
        return "logarithmic", p["q"] - 1
    return "log-logarithmic", p["q"] - 1


def case_rates(case: str, params: dict) -> tuple[RateFunction, RateFunction]:
    """Rate functions (alpha1, alpha2) matching the potentials of an example case."""
    p = dict(params)
    _check_params(case, p)
    d1, d2 = int(p.get("d1", 1)), int(p.get("d2", 1))
    if case[0] == "A":
        a1 = alpha_for("power", {"delta": p["delta"]}, d1)
    elif case[0] == "B":
        a1 = alpha_for("logpower", {"p": p["q"]}, d1)
    else:
        a1 = alpha_for("loglog", {"p": p["q"]}, d1)
    # C1 admits either a power or a log-power V2; C2 pairs with a log-log V2
    kind = {"C1": "2" if "p" in p else "1", "C2": "3"}.get(case, case[1])
    if kind == "1":
        a2 = alpha_for("power", {"delta": p.get("eps", 1.0)}, d2)
    elif kind == "2":
        a2 = alpha_for("logpower", {"p": p["p"]}, d2)
    else:
        a2 = alpha_for("loglog", {"p": p["p"]}, d2)
    return a1, a2


# ---------------------------------------------------------------------------
# asymptotic classification


DECAY_CLASSES = ("exponential", "stretched", "polynomial", "logarithmic", "log-logarithmic")


@dataclass
class AsymptoticFit:
    cls: str
    exponent: float
    residual: float
    r2: float
    scores: dict = field(default_factory=dict)

    @property
    def conclusive(self) -> bool:
        return self.cls != "inconclusive"


def _linfit(x, y):
    A = np.vstack([x, np.ones_like(x)]).T
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    res = y - A @ coef
    ss = float(np.sum((y - y.mean()) ** 2))
    r2 = 1 - float(np.sum(res**2)) / ss if ss > 0 else 0.0
    return float(coef[0]), float(np.sqrt(np.mean(res**2))), r2


def fit_asymptotics(samples, log_values: bool = False, min_r2: float = 0.9, log_times: bool = False) -> AsymptoticFit:
    """Classify the decay of sampled (t, xi) pairs.

    Each class is a straight line in its own scale: ``log(-log xi)`` against
    ``log t`` (exponential when the slope is within 0.1 of one, stretched
    otherwise), and ``log xi`` against ``log t``, ``log log t`` or
    ``log log log t`` (polynomial, logarithmic, log-logarithmic). The class
    with the highest coefficient of determination wins. With ``log_values``
    the second column holds ``log xi``; with ``log_times`` the first column
    holds ``log t``.
    """
    arr = np.asarray(samples, dtype=float)
    if arr.ndim != 2 or arr.shape[1] != 2 or len(arr) < 10:
        raise ValueError("need at least 10 (t, xi) samples")
    y = arr[:, 1]
    if log_times:
        lt = arr[:, 0]
    else:
        if np.any(arr[:, 0] <= 0):
            raise ValueError("times must be positive")
        lt = np.log(arr[:, 0])
    if np.ptp(lt) < 3 * math.log(10):
        raise ValueError("samples must span at least 3 decades of t")
    ly = y if log_values else np.log(np.where(y > 0, y, np.nan))
    if not np.all(np.isfinite(ly)) or np.ptp(ly) == 0:
        return AsymptoticFit("inconclusive", math.nan, math.nan, 0.0)
    scores = {}
    fits = {}
    if np.all(ly < 0):
        b, res, r2 = _linfit(lt, np.log(-ly))
        fits["stretched"] = (b, res, r2)
    fits["polynomial"] = _linfit(lt, ly)
    if np.all(lt > 1):
        fits["logarithmic"] = _linfit(np.log(lt), ly)
    if np.all(lt > math.e):
        fits["log-logarithmic"] = _linfit(np.log(np.log(lt)), ly)
    for k, (b, res, r2) in fits.items():
        # a decaying class needs the right sign
        ok = b > 0 if k == "stretched" else b < 0
        scores[k] = r2 if ok else -math.inf
    best = max(scores, key=scores.get)
    b, res, r2 = fits[best]
    if not scores[best] >= min_r2:
        return AsymptoticFit("inconclusive", math.nan, res, r2, scores)
    if best == "stretched":
        cls = "exponential" if abs(b - 1) < 0.1 else "stretched"
        return AsymptoticFit(cls, b, res, r2, scores)
    return AsymptoticFit(best, -b, res, r2, scores)


def log_xi_series(case: str, params: dict, ts, c1: float = 1.0, c2: float = 1.0, log_times: bool = False) -> np.ndarray:
    """log xi_implicit for the rate functions of an example case on a t grid
    (a grid of log t when ``log_times``)."""
    a1, a2 = case_rates(case, params)
    if log_times:
        return np.array([solve_xi_implicit(a1, a2, c1, c2, log_t=float(u)).log_value for u in ts])
    return np.array([solve_xi_implicit(a1, a2, c1, c2, float(t)).log_value for t in ts])


@dataclass
class CaseComparison:
    case: str
    params: dict
    times: np.ndarray
    log_implicit: np.ndarray
    log_closed: np.ndarray
    log_hw: np.ndarray
    numeric: AsymptoticFit
    closed: AsymptoticFit
    predicted: tuple

    @property
    def exponent_error(self) -> float:
        """Relative difference of the fitted leading exponents."""
        a, b = self.numeric.exponent, self.closed.exponent
        return abs(a - b) / abs(b) if b else math.inf

    def matches(self, tol: float = 0.1) -> bool:
        return self.numeric.cls == self.closed.cls and self.exponent_error <= tol


def compare_case(case: str, params: dict, t_min: float = 1e2, t_max: float = 1e8, points: int = 40,
                 c1: float = 1.0, c2: float = 1.0) -> CaseComparison:
    """Invert the implicit criterion on a log-spaced t grid and fit the decay
    class of both the numeric series and the closed form over the same grid."""
    ts = np.geomspace(t_min, t_max, points)
    a1, a2 = case_rates(case, params)
    li = np.array([solve_xi_implicit(a1, a2, c1, c2, float(t)).log_value for t in ts])
    lh = np.array([solve_xi_hw(a1, c2, float(t), c1).log_value for t in ts])
    lc = np.asarray(log_xi_closed_form(case, params, ts), dtype=float)
    fn = fit_asymptotics(np.column_stack([ts, li]), log_values=True)
    fc = fit_asymptotics(np.column_stack([ts, lc]), log_values=True)
    return CaseComparison(case, dict(params), ts, li, lc, lh, fn, fc, closed_form_class(case, params))
