"""Exact sampling of product measures mu1 x mu2 with mu_i ∝ exp(-V_i), and
variance / oscillation estimators for bounded observables.

Radial laws are inverted from a tabulated CDF in the variable
``u = log(1 + rho)``, which keeps heavy polynomial tails on a short table.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import integrate
from scipy.interpolate import PchipInterpolator

from .potentials import AssumptionViolation, Potential, radial_integral

CHUNK = 1 << 15
TAIL_MASS = 1e-10
KS_TARGET = 1e-6
U_CAP = 340.0  # rho^2 stays below the float range


class ObservableContractError(ValueError):
    """An observable exceeds its declared bound on a batch."""


def _log_density_u(pot: Potential, u):
    """log of the radial density in u = log(1 + rho), unnormalised."""
    u = np.asarray(u, dtype=float)
    with np.errstate(over="ignore", divide="ignore", invalid="ignore"):
        rho = np.expm1(u)
        out = pot.log_radial_density(rho) + u
    return np.where(np.isnan(out), -np.inf, out)


@dataclass
class RadialTable:
    """Inverse CDF of |X| for X ~ exp(-V) on R^d."""

    u: np.ndarray
    cdf: np.ndarray
    tail_mass: float
    ks_error: float
    inverse: PchipInterpolator = field(repr=False, default=None)

    def sample_rho(self, uniforms):
        return np.expm1(self.inverse(uniforms))

    def cdf_rho(self, rho):
        return np.interp(np.log1p(rho), self.u, self.cdf)


def _upper_limit(pot: Potential, log_z: float) -> tuple[float, float]:
    """Truncation point in u with relative tail mass below TAIL_MASS."""

    def tail(u0):
        v, _ = integrate.quad(lambda u: math.exp(float(_log_density_u(pot, u)) - log_z), u0, u0 + 1, limit=200)
        return v

    # march outward: compare successive unit slabs to extrapolate the tail
    u = 1.0
    while u < U_CAP:
        s0, s1 = tail(u), tail(u + 1)
        if s0 == 0 and s1 == 0:
            return u, 0.0
        ratio = s1 / s0 if s0 > 0 else 0.0
        if ratio < 1:
            # geometric extrapolation of the remaining slabs
            est = s1 / (1 - ratio) if ratio < 1 else math.inf
            if est < TAIL_MASS:
                return u + 1, est
        u += 1.0
    return U_CAP, math.nan


def build_table(pot: Potential, n0: int = 2049, max_n: int = 1 << 19) -> RadialTable:
    """Tabulate the radial CDF, doubling the resolution until the interpolated
    inverse is within KS_TARGET (Kolmogorov distance) of a twice finer table."""
    z_rad = radial_integral(pot, lambda rho: np.ones_like(rho))
    log_z = math.log(z_rad)
    u_max, tail = _upper_limit(pot, log_z)
    if not np.isfinite(tail):
        raise AssumptionViolation(f"radial tail not resolved below u={U_CAP} for {pot.describe()}")

    def table(n):
        u = np.linspace(0.0, u_max, n)
        dens = np.exp(_log_density_u(pot, u) - log_z)
        cdf = integrate.cumulative_simpson(dens, x=u, initial=0.0)
        cdf = np.maximum.accumulate(np.clip(cdf, 0.0, None))
        return u, cdf / cdf[-1]

    n = n0
    u, cdf = table(n)
    while True:
        keep = np.concatenate([[True], np.diff(cdf) > 0])
        inv = PchipInterpolator(cdf[keep], u[keep])
        uf, cf = table(2 * n - 1)
        p = np.linspace(0, 1, 4 * n + 1)[1:-1]
        ks = float(np.max(np.abs(np.interp(inv(p), uf, cf) - p)))
        if ks <= KS_TARGET or 2 * n - 1 > max_n:
            break
        n, u, cdf = 2 * n - 1, uf, cf
    return RadialTable(u, cdf, tail, ks, inv)


def _directions(rng: np.random.Generator, n: int, d: int) -> np.ndarray:
    if d == 1:
        return np.where(rng.random((n, 1)) < 0.5, -1.0, 1.0)
    g = rng.standard_normal((n, d))
    return g / np.linalg.norm(g, axis=1, keepdims=True)


class ProductMeasure:
    """mu1 x mu2 with exact radial inverse-CDF sampling of each factor."""

    def __init__(self, v1: Potential, v2: Potential):
        self.v1, self.v2 = v1, v2
        self.d1, self.d2 = v1.dim, v2.dim
        # raises AssumptionViolation for non-normalisable potentials
        self.z1 = v1.normalizing_constant()
        self.z2 = v2.normalizing_constant()
        self.tables = (build_table(v1), build_table(v2))

    def marginal_mass(self, i: int) -> float:
        """int exp(-V_i) / Z(V_i) by quadrature (should be 1)."""
        v = (self.v1, self.v2)[i]
        z = (self.z1, self.z2)[i]
        return v.sphere_area() * radial_integral(v, lambda rho: np.ones_like(rho)) / z

    def _chunk(self, seed: int, index: int, n: int):
        # always draw a full chunk so that a batch is a prefix of any larger one
        rng = np.random.default_rng(np.random.SeedSequence([seed, index]))
        rho1 = self.tables[0].sample_rho(rng.random(CHUNK))
        x = rho1[:, None] * _directions(rng, CHUNK, self.d1)
        rho2 = self.tables[1].sample_rho(rng.random(CHUNK))
        y = rho2[:, None] * _directions(rng, CHUNK, self.d2)
        return x[:n], y[:n]

    def sample(self, n: int, seed: int, threads: int = 1) -> tuple[np.ndarray, np.ndarray]:
        """n i.i.d. pairs (x, y); identical for a given seed whatever ``threads``."""
        if n < 1:
            raise ValueError("n must be positive")
        sizes = [min(CHUNK, n - k) for k in range(0, n, CHUNK)]
        jobs = list(enumerate(sizes))
        if threads > 1:
            with ThreadPoolExecutor(threads) as ex:
                parts = list(ex.map(lambda j: self._chunk(seed, *j), jobs))
        else:
            parts = [self._chunk(seed, *j) for j in jobs]
        return np.concatenate([p[0] for p in parts]), np.concatenate([p[1] for p in parts])

    def radial_moment(self, i: int, k: int) -> float:
        """E|X_i|^k by quadrature."""
        v = (self.v1, self.v2)[i]
        return v.expectation_radial(lambda rho: rho**k)

    def tail_fraction(self, i: int, radius: float) -> float:
        """P(|X_i| > radius) by quadrature."""
        v = (self.v1, self.v2)[i]
        return v.expectation_radial(lambda rho: (np.asarray(rho) > radius).astype(float))


@dataclass(frozen=True)
class Observable:
    """Bounded observable f(x, y) with a declared oscillation bound."""

    f: Callable
    declared_osc: float
    tag: str = "f"

    def __call__(self, x, y):
        return np.asarray(self.f(x, y), dtype=float)

    def check_bound(self, x, y, bound: float | None = None) -> bool:
        b = self.declared_osc if bound is None else bound
        return bool(np.all(np.abs(self(x, y)) <= b))


def standard_observables() -> list[Observable]:
    """Bounded observables with oscillation at most one (tanh-smoothed)."""
    return [
        Observable(lambda x, y: 0.5 * np.tanh(x[:, 0]), 1.0, "tanh_x"),
        Observable(lambda x, y: 0.5 * np.tanh(x[:, 0] + y[:, 0]), 1.0, "tanh_xy"),
        Observable(lambda x, y: 0.5 * (1 + np.tanh(4 * (x[:, 0] - 0.5))), 1.0, "step_x"),
    ]


def variance(f: Observable | Callable, batch) -> tuple[float, float]:
    """Unbiased sample variance of f over the batch and its jackknife SE."""
    x, y = batch
    v = np.asarray(f(x, y), dtype=float)
    return variance_of_values(v)


def variance_of_values(v) -> tuple[float, float]:
    v = np.asarray(v, dtype=float).ravel()
    n = v.size
    if n == 0:
        raise ValueError("empty batch")
    if np.ptp(v) == 0:
        return 0.0, 0.0
    if n < 3:
        return float(np.var(v, ddof=1)), math.nan
    c = v - v.mean()
    ss = float(np.sum(c * c))
    var = ss / (n - 1)
    # leave-one-out variances in closed form
    loo = (ss - c * c - (c * c) / (n - 1)) / (n - 2)
    se = math.sqrt((n - 1) / n * float(np.sum((loo - loo.mean()) ** 2)))
    return var, se


def osc(f: Observable, batch) -> tuple[float, float]:
    """(empirical max - min, declared oscillation); raises on a violated bound."""
    x, y = batch
    v = f(x, y)
    emp = float(np.max(v) - np.min(v))
    if emp > f.declared_osc:
        bad = int(np.argmax(np.abs(v - np.median(v))))
        raise ObservableContractError(
            f"observable {f.tag!r}: empirical oscillation {emp:.6g} exceeds declared {f.declared_osc:.6g} "
            f"(extreme value at sample {bad})"
        )
    return emp, float(f.declared_osc)
