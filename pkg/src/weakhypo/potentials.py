"""Radial confining potentials V(x) = Phi(|x|^2) and numerical checks of the
growth, profile and moment conditions placed on them.

Every potential is stored radially in its canonical frame. An affine
``x -> sigma x - b`` description is reduced to the canonical one by
:func:`canonicalize`, which also returns the frame for mapping points.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import integrate, special
from scipy.stats import qmc

from .report import CheckReport


class AssumptionViolation(ValueError):
    """A potential fails an integrability or boundedness requirement."""


class SingularProfile(ValueError):
    """Phi'(r) vanishes where the profile function H needs to divide by it."""


# ---------------------------------------------------------------------------
# radial profiles


class RadialProfile:
    """Increasing C^3 profile Phi on [0, inf) with closed-form derivatives."""

    family = "radial"

    def phi(self, r):
        raise NotImplementedError

    def d1(self, r):
        raise NotImplementedError

    def d2(self, r):
        raise NotImplementedError

    def d3(self, r):
        raise NotImplementedError

    def params(self) -> dict:
        return {}

    def describe(self) -> dict:
        return {"family": self.family, **self.params()}


@dataclass(frozen=True)
class QuadraticProfile(RadialProfile):
    """Phi(r) = a r; a = 1/2 gives the standard Gaussian."""

    a: float = 0.5
    family = "quadratic"

    def phi(self, r):
        return self.a * np.asarray(r, dtype=float)

    def d1(self, r):
        return np.full_like(np.asarray(r, dtype=float), self.a)

    def d2(self, r):
        return np.zeros_like(np.asarray(r, dtype=float))

    def d3(self, r):
        return np.zeros_like(np.asarray(r, dtype=float))

    def params(self):
        return {"a": self.a}


@dataclass(frozen=True)
class PowerProfile(RadialProfile):
    """Phi(r) = k (1 + r)^(delta/2)."""

    k: float = 1.0
    delta: float = 1.0
    family = "power"

    def __post_init__(self):
        if self.k <= 0 or self.delta <= 0:
            raise ValueError("power profile needs k > 0 and delta > 0")

    def phi(self, r):
        return self.k * (1.0 + np.asarray(r, dtype=float)) ** (self.delta / 2)

    def d1(self, r):
        e = self.delta / 2
        return self.k * e * (1.0 + np.asarray(r, dtype=float)) ** (e - 1)

    def d2(self, r):
        e = self.delta / 2
        return self.k * e * (e - 1) * (1.0 + np.asarray(r, dtype=float)) ** (e - 2)

    def d3(self, r):
        e = self.delta / 2
        return self.k * e * (e - 1) * (e - 2) * (1.0 + np.asarray(r, dtype=float)) ** (e - 3)

    def params(self):
        return {"k": self.k, "delta": self.delta}


@dataclass(frozen=True)
class LogPowerProfile(RadialProfile):
    """Phi(r) = (d + p)/2 log(1 + r): polynomial tails of order |x|^-(d+p)."""

    d: int = 1
    p: float = 1.0
    family = "logpower"

    def __post_init__(self):
        if self.d + self.p <= 0:
            raise ValueError("log-power profile needs d + p > 0 to be increasing")

    @property
    def c(self) -> float:
        return (self.d + self.p) / 2

    def phi(self, r):
        return self.c * np.log1p(np.asarray(r, dtype=float))

    def d1(self, r):
        return self.c / (1.0 + np.asarray(r, dtype=float))

    def d2(self, r):
        return -self.c / (1.0 + np.asarray(r, dtype=float)) ** 2

    def d3(self, r):
        return 2 * self.c / (1.0 + np.asarray(r, dtype=float)) ** 3

    def params(self):
        return {"d": self.d, "p": self.p}


@dataclass(frozen=True)
class LogLogProfile(RadialProfile):
    """Phi(r) = d/2 log(1 + r) + p log log(e + r)."""

    d: int = 1
    p: float = 2.0
    family = "loglog"

    def __post_init__(self):
        if self.p < 0:
            raise ValueError("log-log profile needs p >= 0")

    def phi(self, r):
        r = np.asarray(r, dtype=float)
        return self.d / 2 * np.log1p(r) + self.p * np.log(np.log(math.e + r))

    def d1(self, r):
        r = np.asarray(r, dtype=float)
        u = np.log(math.e + r)
        return self.d / (2 * (1 + r)) + self.p / ((math.e + r) * u)

    def d2(self, r):
        r = np.asarray(r, dtype=float)
        u = np.log(math.e + r)
        return -self.d / (2 * (1 + r) ** 2) - self.p * (u + 1) / ((math.e + r) ** 2 * u**2)

    def d3(self, r):
        r = np.asarray(r, dtype=float)
        u = np.log(math.e + r)
        return self.d / (1 + r) ** 3 + self.p * (2 * (u + 1) ** 2 - u) / ((math.e + r) ** 3 * u**3)

    def params(self):
        return {"d": self.d, "p": self.p}


@dataclass(frozen=True)
class CustomProfile(RadialProfile):
    """Profile given by user callables for Phi and its first three derivatives."""

    fn: Callable
    dfn: Callable
    d2fn: Callable
    d3fn: Callable
    name: str = "custom"
    family = "custom"

    def phi(self, r):
        return np.asarray(self.fn(np.asarray(r, dtype=float)), dtype=float)

    def d1(self, r):
        return np.asarray(self.dfn(np.asarray(r, dtype=float)), dtype=float) + 0 * np.asarray(r, dtype=float)

    def d2(self, r):
        return np.asarray(self.d2fn(np.asarray(r, dtype=float)), dtype=float) + 0 * np.asarray(r, dtype=float)

    def d3(self, r):
        return np.asarray(self.d3fn(np.asarray(r, dtype=float)), dtype=float) + 0 * np.asarray(r, dtype=float)

    def params(self):
        return {"name": self.name}


def gaussian_profile() -> QuadraticProfile:
    return QuadraticProfile(0.5)


# ---------------------------------------------------------------------------
# potentials


@dataclass(frozen=True)
class Potential:
    """V(x) = Phi(|x|^2) on R^dim.

    Points are arrays of shape ``(n, dim)`` (or ``(dim,)`` for a single point);
    1-d potentials additionally accept plain 1-d arrays of points.
    """

    profile: RadialProfile
    dim: int = 1

    def __post_init__(self):
        if self.dim < 1:
            raise ValueError("dimension must be positive")

    def _points(self, x):
        x = np.asarray(x, dtype=float)
        if self.dim == 1 and (x.ndim == 0 or (x.ndim == 1)):
            return x.reshape(-1, 1), x.shape
        if x.ndim == 1:
            return x.reshape(1, -1), None
        return x, None

    def value(self, x):
        pts, shape = self._points(x)
        v = self.profile.phi(np.sum(pts**2, axis=1))
        if shape is not None:
            return v.reshape(shape)
        return v if np.ndim(x) > 1 else v[0]

    __call__ = value

    def gradient(self, x):
        """2 Phi'(|x|^2) x, same shape as ``x``."""
        pts, shape = self._points(x)
        g = 2 * self.profile.d1(np.sum(pts**2, axis=1))[:, None] * pts
        if shape is not None:
            return g.reshape(shape)
        return g if np.ndim(x) > 1 else g[0]

    def dV(self, x):
        """Scalar derivative for 1-d potentials, vectorised over points."""
        if self.dim != 1:
            raise ValueError("dV is only defined for 1-d potentials")
        x = np.asarray(x, dtype=float)
        return 2 * self.profile.d1(x**2) * x

    def d2V(self, x):
        if self.dim != 1:
            raise ValueError("d2V is only defined for 1-d potentials")
        x = np.asarray(x, dtype=float)
        r = x**2
        return 2 * self.profile.d1(r) + 4 * self.profile.d2(r) * r

    def hessian(self, x):
        """2 Phi' I + 4 Phi'' x x^T, shape ``(n, dim, dim)``."""
        pts, _ = self._points(x)
        r = np.sum(pts**2, axis=1)
        eye = np.eye(self.dim)
        h = 2 * self.profile.d1(r)[:, None, None] * eye + 4 * self.profile.d2(r)[:, None, None] * (
            pts[:, :, None] * pts[:, None, :]
        )
        return h

    def grad_norm_radial(self, rho):
        """|grad V| at radius rho."""
        rho = np.asarray(rho, dtype=float)
        return 2 * np.abs(self.profile.d1(rho**2)) * rho

    def describe(self) -> dict:
        return {"dim": self.dim, **self.profile.describe()}

    # -- measure-level quantities -------------------------------------------

    def log_radial_density(self, rho):
        """log of rho^(dim-1) exp(-V(rho)), unnormalised, for rho > 0."""
        rho = np.asarray(rho, dtype=float)
        with np.errstate(over="ignore", divide="ignore", invalid="ignore"):
            out = special.xlogy(self.dim - 1, rho) - self.profile.phi(rho**2)
        return np.where(np.isnan(out), -np.inf, out)

    def sphere_area(self) -> float:
        return 2 * math.pi ** (self.dim / 2) / special.gamma(self.dim / 2)

    def normalizing_constant(self) -> float:
        """Z(V) = int exp(-V); raises :class:`AssumptionViolation` if infinite."""
        radial = radial_integral(self, lambda rho: np.ones_like(rho))
        return self.sphere_area() * radial

    def expectation_radial(self, g: Callable) -> float:
        """E_mu[g(|x|)] for mu ∝ exp(-V)."""
        num = radial_integral(self, g)
        den = radial_integral(self, lambda rho: np.ones_like(rho))
        return num / den


@dataclass(frozen=True)
class AffineFrame:
    """Change of variables z = sigma x - b mapping a general potential to its
    radial canonical form."""

    sigma: np.ndarray = field(default_factory=lambda: np.eye(1))
    shift: np.ndarray = field(default_factory=lambda: np.zeros(1))

    def to_canonical(self, x):
        return np.asarray(x, dtype=float) @ np.asarray(self.sigma).T - self.shift

    def from_canonical(self, z):
        return np.linalg.solve(np.asarray(self.sigma), (np.asarray(z, dtype=float) + self.shift).T).T

    def coupling(self, Q):
        """Coupling matrix after absorbing sigma: Q sigma^*."""
        return np.asarray(Q, dtype=float) @ np.asarray(self.sigma).T


def canonicalize(profile: RadialProfile, dim: int, sigma=None, shift=None) -> tuple[Potential, AffineFrame]:
    """Reduce V(x) = Phi(|sigma x - b|^2) to the radial potential Phi(|z|^2)."""
    sigma = np.eye(dim) if sigma is None else np.atleast_2d(np.asarray(sigma, dtype=float))
    shift = np.zeros(dim) if shift is None else np.atleast_1d(np.asarray(shift, dtype=float))
    if sigma.shape != (dim, dim) or shift.shape != (dim,):
        raise ValueError("sigma must be dim x dim and shift of length dim")
    if abs(np.linalg.det(sigma)) < 1e-14:
        raise ValueError("sigma must be invertible")
    return Potential(profile, dim), AffineFrame(sigma, shift)


def make_potential(spec: dict) -> Potential:
    """Build a potential from a config mapping such as
    ``{"family": "power", "k": 1, "delta": 1, "dim": 1}``."""
    spec = dict(spec)
    family = spec.pop("family")
    dim = int(spec.pop("dim", 1))
    if family in ("quadratic", "gaussian"):
        prof = QuadraticProfile(float(spec.pop("a", 0.5)))
    elif family == "power":
        prof = PowerProfile(float(spec.pop("k", 1.0)), float(spec.pop("delta")))
    elif family == "logpower":
        prof = LogPowerProfile(int(spec.pop("d", dim)), float(spec.pop("p")))
    elif family == "loglog":
        prof = LogLogProfile(int(spec.pop("d", dim)), float(spec.pop("p")))
    else:
        raise ValueError(f"unknown potential family {family!r}")
    if spec:
        raise ValueError(f"unexpected potential parameters {sorted(spec)}")
    return Potential(prof, dim)


# ---------------------------------------------------------------------------
# quadrature with divergence detection


def _log_tail_integrand(pot: Potential, g: Callable, u):
    """log of g(e^u) e^{u} e^{(d-1)u} e^{-Phi(e^{2u})} (integrand in u = log rho)."""
    u = np.asarray(u, dtype=float)
    with np.errstate(over="ignore", divide="ignore", invalid="ignore"):
        rho = np.exp(u)
        gv = np.abs(np.asarray(g(rho), dtype=float))
        out = np.log(gv) + pot.dim * u - pot.profile.phi(np.exp(2 * u))
    return np.where(np.isnan(out), -np.inf, out)


def tail_is_integrable(pot: Potential, g: Callable) -> bool:
    """Compare the decay of the integrand (in log-radius) against exponential
    and algebraic reference tails at very large radius."""
    # probe radii shrink when g overflows before exp(-Phi) can absorb it
    for top in (160.0, 80.0, 40.0, 20.0):
        us = np.array([top / 4, top / 2, top])
        lh = _log_tail_integrand(pot, g, us)
        if not np.any(np.isposinf(lh)):
            break
    if np.all(np.isneginf(lh[1:])):
        return True
    if np.any(np.isposinf(lh)):
        return False
    exp_rate = -(lh[2] - lh[1]) / (us[2] - us[1])
    if exp_rate > 1e-2:
        return True
    alg = -(lh[2] - lh[1]) / math.log(us[2] / us[1])
    return alg > 1.0 + 1e-2


def radial_integral(pot: Potential, g: Callable, rel_tol: float = 1e-8) -> float:
    """int_0^inf g(rho) rho^(d-1) exp(-Phi(rho^2)) d rho.

    The range [1, inf) is integrated in u = log rho so polynomial tails are
    resolved. Raises :class:`AssumptionViolation` when the tail diverges or
    the quadrature error exceeds ``rel_tol`` of the estimate.
    """
    if not tail_is_integrable(pot, g):
        raise AssumptionViolation(f"divergent radial integral for {pot.describe()}")

    def inner(rho):
        with np.errstate(over="ignore", divide="ignore", invalid="ignore"):
            val = np.asarray(g(rho), dtype=float) * np.exp(pot.log_radial_density(rho))
        return float(np.nan_to_num(val, nan=0.0)) if np.ndim(val) == 0 else val

    def outer(u):
        if u > 690:
            return 0.0
        with np.errstate(over="ignore", divide="ignore", invalid="ignore"):
            rho = math.exp(u)
            val = float(np.asarray(g(rho), dtype=float)) * float(np.exp(pot.log_radial_density(rho) + u))
        return val if math.isfinite(val) else 0.0

    a, ea = integrate.quad(inner, 0.0, 1.0, epsabs=0.0, epsrel=1e-13, limit=200)
    # split the log-radius range so the bulk is resolved before the tail
    breaks = [0.0, 1.0, 2.0, 3.0, 5.0, 10.0, 25.0]
    b, eb = 0.0, 0.0
    for lo, hi in zip(breaks[:-1], breaks[1:]):
        v, e = integrate.quad(outer, lo, hi, epsabs=0.0, epsrel=1e-13, limit=200)
        b, eb = b + v, eb + e
    v, e = integrate.quad(outer, breaks[-1], np.inf, epsabs=0.0, epsrel=1e-12, limit=400)
    b, eb = b + v, eb + e
    total = a + b
    err = ea + eb
    if not math.isfinite(total) or (total != 0 and err > rel_tol * abs(total)):
        raise AssumptionViolation(f"radial quadrature did not converge (estimate {total}, error {err})")
    return total


# ---------------------------------------------------------------------------
# assumption checks


def _ball_points(dim: int, n: int, radius: float) -> np.ndarray:
    """Deterministic Halton points inside the closed ball of given radius."""
    sampler = qmc.Halton(d=dim, scramble=False)
    out = []
    got = 0
    while got < n:
        u = sampler.random(max(2 * (n - got), 16))
        pts = radius * (2 * u - 1)
        if dim > 1:
            pts = pts[np.sum(pts**2, axis=1) <= radius**2]
        out.append(pts)
        got += len(pts)
    return np.concatenate(out)[:n]


def check_growth(v: Potential, tau: float, M_candidate: float, sample_count: int, radius: float) -> CheckReport:
    """Sampled certificate of |Hess V| <= M (1 + |grad V|^tau) on a ball."""
    if sample_count < 1 or radius <= 0:
        raise ValueError("need sample_count >= 1 and radius > 0")
    pts = _ball_points(v.dim, sample_count, radius)
    with np.errstate(over="ignore", invalid="ignore"):
        hess = v.hessian(pts)
        hnorm = np.max(np.abs(np.linalg.eigvalsh(hess)), axis=1) if np.all(np.isfinite(hess)) else None
        gnorm = np.linalg.norm(v.gradient(pts).reshape(len(pts), -1), axis=1)
    details = {"radius": radius, "sample_count": sample_count, "tau": tau, "sequence": "halton"}
    if hnorm is None or not np.all(np.isfinite(gnorm)):
        bad_h = ~np.all(np.isfinite(hess.reshape(len(pts), -1)), axis=1)
        bad = np.flatnonzero(bad_h | ~np.isfinite(gnorm))[0]
        details["nonfinite_point"] = pts[bad].tolist()
        return CheckReport("growth", False, math.inf, M_candidate, details=details)
    ratio = hnorm / (1 + gnorm**tau)
    worst = int(np.argmax(ratio))
    details["worst_point"] = pts[worst].tolist()
    m = float(ratio[worst])
    return CheckReport("growth", m <= M_candidate, m, M_candidate, details=details)


def profile_H(profile: RadialProfile, d2: int, r):
    """H(r) = (2 r Phi''' + (d2 + 2) Phi'') / Phi' - Phi' - 2 r Phi''.

    The bounded multiplier in S A pi_1 f = 2 H(|y|^2) A pi_1 f.
    """
    r = np.asarray(r, dtype=float)
    p1 = profile.d1(r)
    if np.any(p1 == 0):
        raise SingularProfile("Phi'(r) = 0")
    p2, p3 = profile.d2(r), profile.d3(r)
    return (2 * r * p3 + (d2 + 2) * p2) / p1 - p1 - 2 * r * p2


def sweep_H(profile: RadialProfile, d2: int, grid) -> tuple[float, float]:
    """Return (sup |H| over grid, log-log slope of |H| over the last decade)."""
    grid = np.asarray(grid, dtype=float)
    if grid.size == 0:
        raise ValueError("empty grid")
    with np.errstate(over="ignore", invalid="ignore"):
        h = np.abs(profile_H(profile, d2, grid))
    sup = float(np.max(h)) if np.all(np.isfinite(h)) else math.inf
    pos = grid[grid > 0]
    if pos.size < 2:
        return sup, 0.0
    top = pos.max()
    sel = (grid >= top / 10) & (grid > 0)
    if sel.sum() < 2:
        sel = grid > 0
    x = np.log(grid[sel])
    hv = h[sel]
    if np.any(~np.isfinite(hv)):
        return sup, math.inf
    floor = 1e-300
    y = np.log(np.maximum(hv, floor))
    if np.ptp(x) == 0:
        return sup, 0.0
    slope = float(np.polyfit(x, y, 1)[0])
    return sup, slope


def check_vv3(profile: RadialProfile, d2: int, grid=None, slope_tol: float = 1e-6) -> CheckReport:
    """Sampled check that |Phi' + 2 r Phi'' - (2 r Phi''' + (d2+2) Phi'')/Phi'|
    stays bounded: finite maximum and non-increasing trend over the last decade."""
    if grid is None:
        grid = np.logspace(-6, 6, 241)
    sup, slope = sweep_H(profile, d2, grid)
    ok = math.isfinite(sup) and slope <= slope_tol
    details = {"grid_min": float(np.min(grid)), "grid_max": float(np.max(grid)), "tail_slope": slope}
    return CheckReport("vv3", ok, sup, math.inf, details=details)


def moment_check(v: Potential, power: int) -> float:
    """mu(|grad V|^power) by radial quadrature (power 2 or 4)."""
    if power not in (2, 4):
        raise ValueError("power must be 2 or 4")
    return v.expectation_radial(lambda rho: v.grad_norm_radial(rho) ** power)


def gradient_fd_error(v: Potential, pts, step: float = 1e-5) -> float:
    """Max relative discrepancy between gradient and centred differences."""
    pts = np.atleast_2d(np.asarray(pts, dtype=float))
    g = v.gradient(pts)
    fd = np.empty_like(pts)
    for i in range(v.dim):
        e = np.zeros(v.dim)
        e[i] = step
        fd[:, i] = (v.value(pts + e) - v.value(pts - e)) / (2 * step)
    scale = np.maximum(np.linalg.norm(g, axis=1), 1.0)
    return float(np.max(np.linalg.norm(g - fd, axis=1) / scale))
