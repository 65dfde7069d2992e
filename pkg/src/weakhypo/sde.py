"""Euler-Maruyama simulation of the degenerate SDE

    dX = Q grad V2(Y) dt,   dY = sqrt(2) dB - (Q^T grad V1(X) + grad V2(Y)) dt,

and Monte Carlo estimation of Var_mu(P_t f) with two independent-noise copies
started from a common mu-distributed point.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import linalg

from .potentials import Potential, QuadraticProfile
from .report import CheckReport, stable_hash
from .sampling import ProductMeasure, _directions

BLOCK = 8192
BLOWUP_EVERY = 100


class BlowUpError(FloatingPointError):
    """A path left the finite range; carries the offending location."""

    def __init__(self, msg, seed=None, block=None, path=None, state=None):
        super().__init__(msg)
        self.seed, self.block, self.path, self.state = seed, block, path, state


@dataclass
class SdeSystem:
    v1: Potential
    v2: Potential
    Q: np.ndarray = None

    def __post_init__(self):
        d1, d2 = self.v1.dim, self.v2.dim
        Q = np.eye(d1, d2) if self.Q is None else np.atleast_2d(np.asarray(self.Q, dtype=float))
        if Q.shape != (d1, d2):
            raise ValueError(f"Q must have shape ({d1}, {d2})")
        smin = np.linalg.svd(Q @ Q.T, compute_uv=False).min()
        if not smin > 1e-12:
            raise ValueError(f"Q Q^T is singular (smallest singular value {smin:.3g})")
        self.Q = Q
        gx, gy = self.drift(np.zeros((1, d1)), np.zeros((1, d2)))
        if not (np.all(np.isfinite(gx)) and np.all(np.isfinite(gy))):
            raise ValueError("drift is not finite at the mode")

    @property
    def d1(self) -> int:
        return self.v1.dim

    @property
    def d2(self) -> int:
        return self.v2.dim

    def drift(self, x, y):
        g2 = self.v2.gradient(y)
        return g2 @ self.Q.T, self.v1.gradient(x) @ self.Q + g2

    def measure(self) -> ProductMeasure:
        return ProductMeasure(self.v1, self.v2)

    def describe(self) -> dict:
        return {"v1": self.v1.describe(), "v2": self.v2.describe(), "Q": self.Q.tolist()}

    def hash(self) -> str:
        return stable_hash(self.describe())

    def is_linear(self) -> bool:
        return isinstance(self.v1.profile, QuadraticProfile) and isinstance(self.v2.profile, QuadraticProfile)

    def linear_drift(self) -> np.ndarray:
        """M with dZ = M Z dt + noise for quadratic potentials, Z = (x, y)."""
        if not self.is_linear():
            raise ValueError("linear drift needs quadratic potentials")
        h1 = 2 * self.v1.profile.a * np.eye(self.d1)
        h2 = 2 * self.v2.profile.a * np.eye(self.d2)
        return np.block([[np.zeros((self.d1, self.d1)), self.Q @ h2], [-self.Q.T @ h1, -h2]])


def em_step(system: SdeSystem, x, y, h: float, xi):
    """One explicit Euler-Maruyama step; ``xi`` is the standard normal increment."""
    if h <= 0:
        raise ValueError("step size must be positive")
    single = np.ndim(x) == 1
    x, y, xi = np.atleast_2d(x), np.atleast_2d(y), np.atleast_2d(xi)
    bx, by = system.drift(x, y)
    x1 = x + h * bx
    y1 = y + math.sqrt(2 * h) * xi - h * by
    if not (np.all(np.isfinite(x1)) and np.all(np.isfinite(y1))):
        bad = int(np.flatnonzero(~(np.all(np.isfinite(x1), 1) & np.all(np.isfinite(y1), 1)))[0])
        raise BlowUpError(f"non-finite state after step at path {bad}", path=bad, state=(x[bad], y[bad]))
    return (x1[0], y1[0]) if single else (x1, y1)


def _sample_starts(meas: ProductMeasure, rng: np.random.Generator, n: int):
    rho1 = meas.tables[0].sample_rho(rng.random(n))
    x = rho1[:, None] * _directions(rng, n, meas.d1)
    rho2 = meas.tables[1].sample_rho(rng.random(n))
    y = rho2[:, None] * _directions(rng, n, meas.d2)
    return x, y


def _step_indices(times, h: float) -> np.ndarray:
    times = np.asarray(times, dtype=float)
    if np.any(np.diff(times) <= 0) or times[0] < 0:
        raise ValueError("times must be non-negative and increasing")
    k = np.rint(times / h).astype(int)
    if np.any(np.abs(k * h - times) > 1e-9 * np.maximum(1, times)):
        raise ValueError("times must be multiples of h")
    return k


# moment sums kept per (observable, time): a = f1 f2, b = (f1 + f2)/2
_NSUM = 8  # a, b, b^2, a^2, ab, ab^2, b^3, b^4


def _moment_sums(f1, f2):
    a = f1 * f2
    b = 0.5 * (f1 + f2)
    b2 = b * b
    return np.array([a.sum(), b.sum(), b2.sum(), (a * a).sum(), (a * b).sum(), (a * b2).sum(), (b2 * b).sum(), (b2 * b2).sum()])


def _var_and_jackknife(s: np.ndarray, n: int) -> tuple[float, float]:
    """Var = mean(a) - mean(b)^2 and its exact leave-one-path-out jackknife SE."""
    Ea, Eb, Eb2, Eaa, Eab, Eab2, Eb3, Eb4 = s / n
    var = Ea - Eb * Eb
    # theta_{-i} is affine in (a_i, b_i, b_i^2)
    w = np.array([-1 / (n - 1), 2 * s[1] / (n - 1) ** 2, -1 / (n - 1) ** 2])
    mean = np.array([Ea, Eb, Eb2])
    second = np.array([[Eaa, Eab, Eab2], [Eab, Eb2, Eb3], [Eab2, Eb3, Eb4]])
    cov = second - np.outer(mean, mean)
    se2 = (n - 1) * float(w @ cov @ w)
    return float(var), math.sqrt(max(se2, 0.0))


@dataclass
class DecayCurve:
    times: np.ndarray
    var: np.ndarray  # (n_obs, n_times)
    se: np.ndarray
    tags: list
    n: int
    h: float
    seed: int
    system_hash: str

    def rows(self, obs: int = 0):
        for t, v, s in zip(self.times, self.var[obs], self.se[obs]):
            yield [float(t), float(v), float(s), self.n, self.h, self.seed, self.system_hash]


def _run_block(system, meas, observables, ksteps, h, seed, block, m):
    """Advance two noise copies of m paths from common mu starts; returns the
    per-(observable, checkpoint) moment sums."""
    x0, y0 = _sample_starts(meas, np.random.default_rng(np.random.SeedSequence([seed, block, 0])), m)
    rngs = [np.random.default_rng(np.random.SeedSequence([seed, block, c])) for c in (1, 2)]
    states = [[x0.copy(), y0.copy()], [x0.copy(), y0.copy()]]
    sums = np.zeros((len(observables), len(ksteps), _NSUM))
    sq = math.sqrt(2 * h)
    Q, QT = system.Q, system.Q.T
    g1, g2 = system.v1.gradient, system.v2.gradient
    k = 0
    for j, target in enumerate(ksteps):
        while k < target:
            for c in (0, 1):
                x, y = states[c]
                gy = g2(y)
                xi = rngs[c].standard_normal(y.shape)
                x_new = x + h * (gy @ QT)
                y_new = y + sq * xi - h * (g1(x) @ Q + gy)
                states[c] = [x_new, y_new]
            k += 1
            if k % BLOWUP_EVERY == 0 or k == target:
                for c in (0, 1):
                    ok = np.all(np.isfinite(states[c][0]), 1) & np.all(np.isfinite(states[c][1]), 1)
                    if not ok.all():
                        bad = int(np.flatnonzero(~ok)[0])
                        raise BlowUpError(
                            f"blow-up at step {k}: seed {seed}, block {block}, path {bad}, copy {c}",
                            seed=seed, block=block, path=bad,
                        )
        for i, f in enumerate(observables):
            f1 = np.asarray(f(*states[0]), dtype=float)
            f2 = np.asarray(f(*states[1]), dtype=float)
            sums[i, j] = _moment_sums(f1, f2)
    return sums


def decay_curve(system: SdeSystem, observables: Sequence[Callable], times, n: int, seed: int, h: float = 1e-3,
                threads: int = 1, measure: ProductMeasure | None = None, block: int = BLOCK) -> DecayCurve:
    """Two-copy estimates of Var_mu(P_t f) with jackknife standard errors.

    For each start z ~ mu two copies are driven by independent noise;
    Var(t) = mean f(Z_t^1) f(Z_t^2) - m(t)^2 with m(t) the mean over both copies.
    Blocks of paths use their own seeded streams, so the result does not depend
    on ``threads``.
    """
    if n < 1000:
        raise ValueError("need at least 1000 path pairs")
    observables = list(observables)
    ksteps = _step_indices(times, h)
    meas = measure if measure is not None else system.measure()
    sizes = [min(block, n - k) for k in range(0, n, block)]
    job = lambda b: _run_block(system, meas, observables, ksteps, h, seed, b, sizes[b])
    if threads > 1:
        with ThreadPoolExecutor(threads) as ex:
            parts = list(ex.map(job, range(len(sizes))))
    else:
        parts = [job(b) for b in range(len(sizes))]
    total = np.zeros_like(parts[0])
    for p in parts:  # fixed reduction order
        total += p
    var = np.empty(total.shape[:2])
    se = np.empty_like(var)
    for i in range(total.shape[0]):
        for j in range(total.shape[1]):
            var[i, j], se[i, j] = _var_and_jackknife(total[i, j], n)
    tags = [getattr(f, "tag", f"f{i}") for i, f in enumerate(observables)]
    return DecayCurve(np.asarray(times, dtype=float), var, se, tags, n, h, seed, system.hash())


@dataclass
class DecayFit:
    cls: str
    rate: float
    rate_se: float
    r2: dict = field(default_factory=dict)
    points: int = 0

    @property
    def significant(self) -> bool:
        return self.rate > 3 * self.rate_se


def _wls(x, y, w):
    A = np.vstack([x, np.ones_like(x)]).T
    Aw = A * np.sqrt(w)[:, None]
    yw = y * np.sqrt(w)
    coef, *_ = np.linalg.lstsq(Aw, yw, rcond=None)
    res = yw - Aw @ coef
    dof = max(len(x) - 2, 1)
    chi2 = float(res @ res) / dof
    cov = np.linalg.inv(Aw.T @ Aw) * max(1.0, chi2)
    ybar = np.sum(w * y) / np.sum(w)
    ss = float(np.sum(w * (y - ybar) ** 2))
    r2 = 1 - float(res @ res) / ss if ss > 0 else 0.0
    return coef, cov, r2


def classify_decay(times, var, se, min_points: int = 5, t_min: float = 0.0) -> DecayFit:
    """Exponential (log Var linear in t) or polynomial (log Var linear in log t),
    by weighted least squares over the signal window: the contiguous run of
    times t > t_min starting at the first one, up to the first point with
    Var <= 3 SE. The better weighted R^2 decides the class."""
    t, v, s = (np.asarray(a, dtype=float) for a in (times, var, se))
    start = np.flatnonzero((t > 0) & (t >= t_min))
    if start.size == 0:
        return DecayFit("inconclusive", math.nan, math.nan, {}, 0)
    i = end = int(start[0])
    while end < len(t) and s[end] > 0 and v[end] > 3 * s[end]:
        end += 1
    if end - i < min_points:
        return DecayFit("inconclusive", math.nan, math.nan, {}, end - i)
    t, v, s = t[i:end], v[i:end], s[i:end]
    y = np.log(v)
    w = (v / s) ** 2
    ce, cove, r2e = _wls(t, y, w)
    cp, covp, r2p = _wls(np.log(t), y, w)
    r2 = {"exponential": r2e, "polynomial": r2p}
    if r2e >= r2p:
        return DecayFit("exponential", -ce[0], math.sqrt(cove[0, 0]), r2, len(t))
    return DecayFit("polynomial", -cp[0], math.sqrt(covp[0, 0]), r2, len(t))


# ---------------------------------------------------------------------------
# invariance


def _moment_fn(m):
    if callable(m):
        return getattr(m, "__name__", "moment"), m
    name = str(m)
    table = {
        "x2": lambda x, y: np.sum(x * x, axis=1),
        "y2": lambda x, y: np.sum(y * y, axis=1),
        "xy": lambda x, y: x[:, 0] * y[:, 0],
        "tanh_x": lambda x, y: np.tanh(x[:, 0]),
        "tanh_y": lambda x, y: np.tanh(y[:, 0]),
    }
    if name not in table:
        raise ValueError(f"unknown moment {name!r}")
    return name, table[name]


def moment_trajectory(system: SdeSystem, moments, times, n: int, seed: int, h: float = 1e-3,
                      threads: int = 1, block: int = BLOCK):
    """Per-moment means at each time and paired standard errors of the change
    from t = 0, single noise copy from exact mu starts."""
    named = [_moment_fn(m) for m in moments]
    fns = [f for _, f in named]
    ksteps = _step_indices(times, h)
    if ksteps[0] != 0:
        raise ValueError("times must start at 0")
    meas = system.measure()
    sizes = [min(block, n - k) for k in range(0, n, block)]

    def job(b):
        m = sizes[b]
        x, y = _sample_starts(meas, np.random.default_rng(np.random.SeedSequence([seed, b, 0])), m)
        rng = np.random.default_rng(np.random.SeedSequence([seed, b, 1]))
        base = [f(x, y) for f in fns]
        out = np.zeros((len(fns), len(ksteps), 3))  # sum value, sum diff, sum diff^2
        k = 0
        sq = math.sqrt(2 * h)
        for j, target in enumerate(ksteps):
            while k < target:
                gy = system.v2.gradient(y)
                xi = rng.standard_normal(y.shape)
                x, y = x + h * (gy @ system.Q.T), y + sq * xi - h * (system.v1.gradient(x) @ system.Q + gy)
                k += 1
                if k % BLOWUP_EVERY == 0 and not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
                    raise BlowUpError(f"blow-up at step {k}: seed {seed}, block {b}", seed=seed, block=b)
            for i, f in enumerate(fns):
                val = f(x, y)
                d = val - base[i]
                out[i, j] = (val.sum(), d.sum(), (d * d).sum())
        return out

    if threads > 1:
        with ThreadPoolExecutor(threads) as ex:
            parts = list(ex.map(job, range(len(sizes))))
    else:
        parts = [job(b) for b in range(len(sizes))]
    tot = np.zeros_like(parts[0])
    for p in parts:
        tot += p
    mean = tot[..., 0] / n
    dmean = tot[..., 1] / n
    dvar = np.maximum(tot[..., 2] / n - dmean**2, 0.0) * n / (n - 1)
    dse = np.sqrt(dvar / n)
    return [name for name, _ in named], mean, dmean, dse


def stationarity_check(system: SdeSystem, moments, T: float, n: int, seed: int, h: float = 1e-3,
                       n_se: float = 4.0, threads: int = 1) -> CheckReport:
    """Tracked moments at T/4, T/2, T stay within ``n_se`` paired SE of t = 0."""
    meas = system.measure()
    for m in moments:
        name, f = _moment_fn(m)
        if name in ("x2", "y2"):
            v = system.v1 if name == "x2" else system.v2
            v.expectation_radial(lambda rho: rho**2)  # raises if not integrable
    times = np.array([0.0, T / 4, T / 2, T])
    names, mean, dmean, dse = moment_trajectory(system, moments, times, n, seed, h, threads)
    z = np.abs(dmean[:, 1:]) / np.where(dse[:, 1:] > 0, dse[:, 1:], np.inf)
    zmax = float(np.max(z))
    details = {
        "moments": names,
        "times": times.tolist(),
        "means": mean.tolist(),
        "drift": dmean.tolist(),
        "drift_se": dse.tolist(),
        "n": n,
        "h": h,
        "seed": seed,
    }
    return CheckReport("stationarity", zmax <= n_se, zmax, n_se, details=details)


def em_stationary_covariance(system: SdeSystem, h: float) -> np.ndarray:
    """Stationary covariance of the Euler-Maruyama chain for quadratic potentials."""
    M = system.linear_drift()
    d = system.d1 + system.d2
    F = np.eye(d) + h * M
    E = np.zeros((d, system.d2))
    E[system.d1:, :] = np.eye(system.d2)
    return linalg.solve_discrete_lyapunov(F, 2 * h * E @ E.T)


def exact_stationary_covariance(system: SdeSystem) -> np.ndarray:
    """Covariance of mu for quadratic potentials."""
    if not system.is_linear():
        raise ValueError("needs quadratic potentials")
    a1, a2 = system.v1.profile.a, system.v2.profile.a
    return np.diag([1 / (2 * a1)] * system.d1 + [1 / (2 * a2)] * system.d2)
