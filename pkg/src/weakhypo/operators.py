"""Discrete generator L = S - A of the degenerate diffusion on a 2-d tensor grid
(d1 = d2 = 1) and checks of the operator identities behind weak hypocoercivity.

All adjoints are taken in the weighted inner product <f, g> = sum f g w1 w2.
Derivatives are assembled so that the structural identities hold to rounding:

* ``Dx`` is a weight-scaled forward difference with Dx^+ Dx = -T_h, the
  divergence-form discretisation of T = d^2/dx^2 - V1' d/dx;
* ``Dy`` is a centred difference, so Dy 1 = 0;
* S = I x S_y with S_y the divergence-form weighted Laplacian in y;
* A = Q (Dx^+ x Dy - Dx x Dy^+), antisymmetric by construction.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate, linalg, optimize, sparse
from scipy.integrate import solve_ivp
from scipy.sparse import linalg as splinalg

from .potentials import AssumptionViolation, Potential, check_vv3, moment_check, profile_H
from .rates import RateFunction
from .report import CheckReport

SLACK = 1e-10


class GridTooCoarse(ValueError):
    """The box leaves more tail mass outside than allowed."""

    def __init__(self, msg, suggested_R=None):
        super().__init__(msg)
        self.suggested_R = suggested_R


# ---------------------------------------------------------------------------
# grid measure


def tail_mass(pot: Potential, R: float) -> float:
    """mu(|x| > R) for a 1-d potential."""
    z = pot.normalizing_constant()
    f = lambda r: math.exp(-float(pot.profile.phi(r * r)))
    v, _ = integrate.quad(f, R, np.inf, limit=400, epsabs=0.0, epsrel=1e-10)
    return 2 * v / z


def tail_radius(pot: Potential, mass: float = 1e-8) -> float:
    """Smallest box half-width R (to 1e-6 relative) with mu(|x| > R) < mass."""
    hi = 1.0
    while tail_mass(pot, hi) >= mass:
        hi *= 2
        if hi > 1e12:
            raise AssumptionViolation("tail too heavy for a finite box")
    lo = hi / 2 if hi > 1 else 0.0
    g = lambda R: math.log(max(tail_mass(pot, R), 1e-300)) - math.log(mass)
    if g(lo) <= 0:
        return hi
    R = optimize.brentq(g, lo, hi, xtol=1e-8, rtol=1e-8)
    return R * (1 + 1e-6)


@dataclass
class Axis:
    """Symmetric 1-d grid with node and midpoint weights ∝ exp(-V)."""

    nodes: np.ndarray
    w: np.ndarray
    omega: np.ndarray  # midpoint weights on the same normalisation as w
    h: float
    R: float

    @classmethod
    def build(cls, pot: Potential, n: int, R: float, tail: float = 1e-8, check: bool = True) -> "Axis":
        if pot.dim != 1:
            raise ValueError("operator grids are one-dimensional per component")
        if n < 4:
            raise ValueError("need at least 4 nodes")
        if check:
            m = tail_mass(pot, R)
            if m > tail:
                raise GridTooCoarse(
                    f"box [-{R:.4g}, {R:.4g}] leaves tail mass {m:.3g} > {tail:.1g}",
                    suggested_R=tail_radius(pot, tail),
                )
        x = np.linspace(-R, R, n)
        x = 0.5 * (x - x[::-1])  # exact symmetry about 0
        h = x[1] - x[0]
        mid = 0.5 * (x[1:] + x[:-1])
        lv = -pot.value(x)
        lm = -pot.value(mid)
        shift = lv.max()
        raw = np.exp(lv - shift)
        z = raw.sum()
        w = raw / z
        omega = np.exp(lm - shift) / z
        return cls(x, w, omega, float(h), float(R))


@dataclass
class GridMeasure:
    ax: Axis
    ay: Axis

    @classmethod
    def build(cls, v1: Potential, v2: Potential, n: int, R_x: float | None = None, R_y: float | None = None,
              tail: float = 1e-8, ny: int | None = None) -> "GridMeasure":
        R_x = tail_radius(v1, tail) if R_x is None else R_x
        R_y = tail_radius(v2, tail) if R_y is None else R_y
        return cls(Axis.build(v1, n, R_x, tail), Axis.build(v2, ny or n, R_y, tail))

    @property
    def shape(self):
        return len(self.ax.nodes), len(self.ay.nodes)

    @property
    def weights(self) -> np.ndarray:
        return np.kron(self.ax.w, self.ay.w)


# ---------------------------------------------------------------------------
# 1-d building blocks


def forward_difference(ax: Axis) -> sparse.csr_matrix:
    """(Dx u)_i = sqrt(omega_{i+1/2} / w_i) (u_{i+1} - u_i) / h, last row zero."""
    n = len(ax.nodes)
    c = np.sqrt(ax.omega / ax.w[:-1]) / ax.h
    rows = np.repeat(np.arange(n - 1), 2)
    cols = np.stack([np.arange(n - 1), np.arange(1, n)], 1).ravel()
    vals = np.stack([-c, c], 1).ravel()
    return sparse.csr_matrix((vals, (rows, cols)), shape=(n, n))


def centred_difference(ax: Axis) -> sparse.csr_matrix:
    """Centred first derivative, one-sided in the two boundary rows."""
    n, h = len(ax.nodes), ax.h
    D = sparse.lil_matrix((n, n))
    for i in range(1, n - 1):
        D[i, i - 1], D[i, i + 1] = -0.5 / h, 0.5 / h
    D[0, 0], D[0, 1] = -1 / h, 1 / h
    D[n - 1, n - 2], D[n - 1, n - 1] = -1 / h, 1 / h
    return D.tocsr()


def divergence_laplacian(ax: Axis) -> sparse.csr_matrix:
    """-W^{-1} Delta^T Omega Delta / h^2: weighted-symmetric, zero-flux ends."""
    n = len(ax.nodes)
    Delta = sparse.diags([-np.ones(n - 1), np.ones(n - 1)], [0, 1], shape=(n - 1, n))
    return (-sparse.diags(1 / ax.w) @ Delta.T @ sparse.diags(ax.omega) @ Delta / ax.h**2).tocsr()


def weighted_adjoint(M, w_out, w_in):
    """Adjoint of M: (L^2(w_in) -> L^2(w_out)) in the weighted inner products."""
    return sparse.diags(1 / w_in) @ M.T @ sparse.diags(w_out)


def smallest_nonzero_eig(op_dense: np.ndarray, w: np.ndarray) -> tuple[float, np.ndarray]:
    """Spectral gap of a weighted-symmetric nonnegative operator, i.e. the
    smallest eigenvalue on the weighted complement of constants."""
    sw = np.sqrt(w)
    sym = (sw[:, None] * op_dense) / sw[None, :]
    sym = 0.5 * (sym + sym.T)
    vals, vecs = linalg.eigh(sym)
    # deflate the constant direction (sqrt(w) in symmetric coordinates)
    overlap = np.abs(vecs.T @ sw)
    k = int(np.argmax(overlap))
    mask = np.ones(len(vals), bool)
    mask[k] = False
    j = np.flatnonzero(mask)[np.argmin(vals[mask])]
    return float(vals[j]), vecs[:, j] / sw


# ---------------------------------------------------------------------------
# operator set


@dataclass
class DiscreteOperatorSet:
    grid: GridMeasure
    v1: Potential
    v2: Potential
    Q: float
    Dx: sparse.csr_matrix
    Dy: sparse.csr_matrix
    Sy: sparse.csr_matrix
    S: sparse.csr_matrix
    A: sparse.csr_matrix
    v2vec: np.ndarray  # Dy^+ 1, the discrete V2'
    G0: np.ndarray  # (A pi_1)^+ (A pi_1) on functions of x
    Th: sparse.csr_matrix
    N_V2: float
    K: np.ndarray  # 2 H(y^2) at the y nodes
    chol: tuple = field(repr=False, default=None)
    diagnostics: dict = field(default_factory=dict)

    # -- shapes and inner products ------------------------------------------

    @property
    def shape(self):
        return self.grid.shape

    @property
    def w(self) -> np.ndarray:
        return self.grid.weights

    @property
    def L(self):
        return (self.S - self.A).tocsr()

    def inner(self, f, g) -> float:
        return float(np.sum(f * g * self.w))

    def norm(self, f) -> float:
        return math.sqrt(max(self.inner(f, f), 0.0))

    def mean(self, f) -> float:
        return float(np.sum(f * self.w))

    def deflate(self, f):
        return f - self.mean(f)

    # -- projections ---------------------------------------------------------

    def reduce(self, f):
        """R f: y-average, a function of x."""
        nx, ny = self.shape
        return f.reshape(nx, ny) @ self.grid.ay.w

    def extend(self, u):
        """P u: constant extension in y."""
        return np.repeat(u, self.shape[1])

    def pi1(self, f):
        return self.extend(self.reduce(f))

    def pi2(self, f):
        return f - self.pi1(f)

    # -- A pi_1, G and B -----------------------------------------------------

    def A0(self, u):
        """A P u = -Q (Dx u) x v2."""
        return -self.Q * np.kron(self.Dx @ u, self.v2vec)

    def A0_adj(self, f):
        """(A P)^+ f in L^2(w1)."""
        nx, ny = self.shape
        F = f.reshape(nx, ny)
        g = F @ (self.grid.ay.w * self.v2vec)
        wx = self.grid.ax.w
        return -self.Q * (self.Dx.T @ (wx * g)) / wx

    def A0_matrix(self) -> np.ndarray:
        return -self.Q * sparse.kron(self.Dx, sparse.csr_matrix(self.v2vec[:, None])).toarray()

    def solve_IG0(self, u):
        """(I + G0)^{-1} u via the Cholesky factor of W1 (I + G0)."""
        return linalg.cho_solve(self.chol, self.grid.ax.w * u)

    def B(self, f):
        """B f = (I + G)^{-1} (A pi_1)^+ f."""
        return self.extend(self.solve_IG0(self.A0_adj(f)))

    def B_form(self, F) -> np.ndarray:
        """<B f, f> for every column f of F."""
        nx, ny = self.shape
        wx = self.grid.ax.w
        F3 = F.reshape(nx, ny, -1)
        g = np.einsum("ijm,j->im", F3, self.grid.ay.w * self.v2vec)
        a = -self.Q * (self.Dx.T @ (wx[:, None] * g)) / wx[:, None]
        b = linalg.cho_solve(self.chol, wx[:, None] * a)
        rf = np.einsum("ijm,j->im", F3, self.grid.ay.w)
        return np.einsum("i,im,im->m", wx, b, rf)

    def B_adj(self, f):
        """B^+ f = A pi_1 (I + G)^{-1} f."""
        return self.A0(self.solve_IG0(self.reduce(f)))

    def G(self, f):
        return self.extend(self.G0 @ self.reduce(f))

    def IG_inv_G_pi1(self, f):
        u = self.reduce(f)
        return self.extend(self.solve_IG0(self.G0 @ u))

    def B_residual(self) -> float:
        """Relative residual of (I + G0) B0 = A0^+ on random input."""
        rng = np.random.default_rng(0)
        f = rng.standard_normal(self.w.size)
        rhs = self.A0_adj(f)
        b = self.solve_IG0(rhs)
        r = b + self.G0 @ b - rhs
        wx = self.grid.ax.w
        return math.sqrt(np.sum(wx * r * r) / max(np.sum(wx * rhs * rhs), 1e-300))

    def describe(self) -> dict:
        return {
            "resolution": list(self.shape),
            "v1": self.v1.describe(),
            "v2": self.v2.describe(),
            "Q": self.Q,
            "R": [self.grid.ax.R, self.grid.ay.R],
        }


def build(grid: GridMeasure, v1: Potential, v2: Potential, Q: float = 1.0) -> DiscreteOperatorSet:
    """Assemble S, A, G and the Cholesky factor defining B."""
    Q = float(np.asarray(Q).reshape(-1)[0]) if np.ndim(Q) else float(Q)
    if Q == 0:
        raise ValueError("Q must be non-zero")
    ax, ay = grid.ax, grid.ay
    nx, ny = len(ax.nodes), len(ay.nodes)
    Dx = forward_difference(ax)
    Dy = centred_difference(ay)
    Dx_adj = weighted_adjoint(Dx, ax.w, ax.w)
    Dy_adj = weighted_adjoint(Dy, ay.w, ay.w)
    Sy = divergence_laplacian(ay)
    Th = divergence_laplacian(ax)
    S = sparse.kron(sparse.identity(nx), Sy).tocsr()
    A = Q * (sparse.kron(Dx_adj, Dy) - sparse.kron(Dx, Dy_adj))
    # exact antisymmetrisation in the weighted inner product
    W = sparse.diags(np.kron(ax.w, ay.w))
    Winv = sparse.diags(1 / np.kron(ax.w, ay.w))
    A = (0.5 * (A - Winv @ A.T @ W)).tocsr()
    v2vec = Dy_adj @ np.ones(ny)
    nv2 = float(np.sum(ay.w * v2vec**2))
    Dxd = Dx.toarray()
    G0 = Q * Q * nv2 * (Dxd.T * ax.w) @ Dxd / ax.w[:, None]
    M = np.diag(ax.w) + Q * Q * nv2 * (Dxd.T * ax.w) @ Dxd
    chol = linalg.cho_factor(0.5 * (M + M.T), lower=True)
    N_V2 = moment_check(v2, 2) / v2.dim
    K = 2 * profile_H(v2.profile, 1, ay.nodes**2)
    ops = DiscreteOperatorSet(grid, v1, v2, Q, Dx, Dy, Sy, S, A, v2vec, G0, Th, N_V2, K, chol)
    ops.diagnostics["B_residual"] = ops.B_residual()
    if ops.diagnostics["B_residual"] > 1e-12:
        raise FloatingPointError(f"B solve residual {ops.diagnostics['B_residual']:.3g} exceeds 1e-12")
    return ops


def build_system(v1: Potential, v2: Potential, n: int, Q: float = 1.0, **grid_kw) -> DiscreteOperatorSet:
    return build(GridMeasure.build(v1, v2, n, **grid_kw), v1, v2, Q)


# ---------------------------------------------------------------------------
# norms


def weighted_norm_svd(M: np.ndarray, w_out: np.ndarray, w_in: np.ndarray) -> float:
    """Operator norm of a dense M: L^2(w_in) -> L^2(w_out)."""
    Mt = np.sqrt(w_out)[:, None] * M / np.sqrt(w_in)[None, :]
    return float(linalg.svdvals(Mt)[0])


def power_norm(apply, apply_adj, w_in, seed: int = 0, iters: int = 2000, tol: float = 1e-13, x0=None) -> tuple[float, np.ndarray]:
    """Power iteration on T^+ T in the weighted inner product; returns
    (norm estimate, leading right singular vector)."""
    rng = np.random.default_rng(seed)
    x = rng.standard_normal(len(w_in)) if x0 is None else np.asarray(x0, dtype=float).copy()
    x /= math.sqrt(np.sum(w_in * x * x))
    est = 0.0
    for _ in range(iters):
        y = apply_adj(apply(x))
        nrm = math.sqrt(np.sum(w_in * y * y))
        if nrm == 0:
            return 0.0, x
        new = math.sqrt(nrm)
        x = y / nrm
        if abs(new - est) <= tol * new:
            est = new
            break
        est = new
    return est, x


def norm_B_pi2(ops: DiscreteOperatorSet) -> dict:
    """||B pi_2|| and ||A B pi_2|| by structured SVD and by power iteration."""
    wx, w = ops.grid.ax.w, ops.w
    A0 = ops.A0_matrix()
    sig = linalg.svdvals(np.sqrt(w)[:, None] * A0 / np.sqrt(wx)[None, :])
    b_svd = float(np.max(sig / (1 + sig**2)))
    ab_svd = float(np.max(sig**2 / (1 + sig**2)))
    b_pow, vb = power_norm(lambda f: ops.B(ops.pi2(f)), lambda f: ops.pi2(ops.B_adj(f)), w)
    ab_pow, vab = power_norm(
        lambda f: ops.A @ ops.B(ops.pi2(f)),
        lambda f: ops.pi2(ops.B_adj(-(ops.A @ f))),
        w,
    )
    return {"B": max(b_svd, b_pow), "B_svd": b_svd, "B_power": b_pow, "AB": max(ab_svd, ab_pow),
            "AB_svd": ab_svd, "AB_power": ab_pow, "B_vec": vb, "AB_vec": vab}


def norm_BS(ops: DiscreteOperatorSet) -> float:
    """||pi_1 B S pi_2|| = ||S A0 (I + G0)^{-1}|| (weighted)."""
    nx = ops.shape[0]
    inv = linalg.cho_solve(ops.chol, np.diag(ops.grid.ax.w))  # (I + G0)^{-1}
    SA0 = ops.S @ ops.A0_matrix()
    return weighted_norm_svd(SA0 @ inv, ops.w, ops.grid.ax.w)


def norm_BA(ops: DiscreteOperatorSet) -> float:
    """||B A|| = ||(BA)^+|| = ||A A0 (I + G0)^{-1}|| (weighted)."""
    inv = linalg.cho_solve(ops.chol, np.diag(ops.grid.ax.w))
    AA0 = ops.A @ ops.A0_matrix()
    return weighted_norm_svd(AA0 @ inv, ops.w, ops.grid.ax.w)


# ---------------------------------------------------------------------------
# structural identities


def structure_report(ops: DiscreteOperatorSet, seed: int = 0) -> dict:
    """Residuals of the exact identities on random vectors (relative)."""
    rng = np.random.default_rng(seed)
    n = ops.w.size
    f, g = rng.standard_normal(n), rng.standard_normal(n)
    nf, ng = ops.norm(f), ops.norm(g)
    out = {}
    out["S_symmetry"] = abs(ops.inner(ops.S @ f, g) - ops.inner(f, ops.S @ g)) / (nf * ng * max(1, _spnorm(ops.S)))
    out["S_nonpositive"] = max(ops.inner(ops.S @ f, f), 0.0) / (nf * nf * max(1, _spnorm(ops.S)))
    out["A_antisymmetry"] = abs(ops.inner(ops.A @ f, g) + ops.inner(f, ops.A @ g)) / (nf * ng * max(1, _spnorm(ops.A)))
    out["A_skew_form"] = abs(ops.inner(ops.A @ f, f)) / (nf * nf * max(1, _spnorm(ops.A)))
    p1f = ops.pi1(f)
    out["pi1_idempotent"] = ops.norm(ops.pi1(p1f) - p1f) / nf
    out["pi1_selfadjoint"] = abs(ops.inner(p1f, g) - ops.inner(f, ops.pi1(g))) / (nf * ng)
    out["S_pi1"] = ops.norm(ops.S @ p1f) / (nf * max(1, _spnorm(ops.S)))
    out["pi1_A_pi1"] = ops.norm(ops.pi1(ops.A @ p1f)) / (nf * max(1, _spnorm(ops.A)))
    out["pi1_B"] = ops.norm(ops.pi1(ops.B(f)) - ops.B(f)) / nf
    out["B_pi1"] = ops.norm(ops.B(p1f)) / nf
    out["S_const"] = float(np.max(np.abs(ops.S @ np.ones(n))))
    out["A_const"] = float(np.max(np.abs(ops.A @ np.ones(n))))
    return out


def _spnorm(M) -> float:
    """Cheap scale of a sparse matrix (max absolute row sum)."""
    return float(abs(M).sum(axis=1).max())


# ---------------------------------------------------------------------------
# constants


def estimate_N(ops: DiscreteOperatorSet, with_routes: bool = False):
    """N-hat: max of 2 ||K||_inf (K = 2H on the y nodes), 2 ||BA|| (the adjoint
    route), the directly computed 2 ||pi_1 B S pi_2||, clamped below at 1.

    The BL_coercive bound needs <BS pi_2 f, pi_1 f> - <BA pi_2 f, pi_1 f> <= N |pi_1 f| |pi_2 f|;
    each route bounds one of the two terms by N/2 so the maximum is valid.
    """
    rep = check_vv3(ops.v2.profile, 1)
    if not rep.passed:
        raise AssumptionViolation(f"K = 2H is unbounded for {ops.v2.describe()}: {rep.details}")
    k_inf = float(np.max(np.abs(ops.K)))
    ba = norm_BA(ops)
    bs = norm_BS(ops)
    # (BA)^+ = -A B^+, with adjoint B A; power iteration cross-checks the SVD
    ba_pow, _ = power_norm(lambda f: -(ops.A @ ops.B_adj(f)), lambda g: ops.B(ops.A @ g), ops.w, iters=500)
    routes = {"K": 2 * k_inf, "BA_star": 2 * ba, "BA_star_power": 2 * ba_pow, "BS": 2 * bs}
    N = max(1.0, *routes.values())
    return (N, routes) if with_routes else N


def discrete_N_V2(ops: DiscreteOperatorSet) -> float:
    """sum_y w2 (Dy^+ 1)^2, the grid analogue of mu2(|V2'|^2)."""
    return float(np.sum(ops.grid.ay.w * ops.v2vec**2))


# ---------------------------------------------------------------------------
# bounds on B


def verify_b_bounds(ops: DiscreteOperatorSet, trials: int = 1000, seed: int = 0, N: float | None = None) -> CheckReport:
    """Bounds on B on random mean-zero vectors plus operator-norm worst cases:
    |B pi_2 f| <= |pi_2 f| / 2 (B_bound), |A B f| <= |pi_2 f| (AB_bound),
    |<B f, L f>| <= |pi_2 f| |f| (BL_bound) and
    <B L f, f> <= N |pi_1 f| |pi_2 f| - <(I + G)^{-1} G pi_1 f, pi_1 f> (BL_coercive)."""
    N = estimate_N(ops) if N is None else N
    norms = norm_B_pi2(ops)
    rng = np.random.default_rng(seed)
    L = ops.L
    n = ops.w.size
    margins = {"B_bound": -math.inf, "AB_bound": -math.inf, "BL_bound": -math.inf, "BL_coercive": -math.inf}
    worst = {}
    for k in range(trials):
        f = ops.deflate(rng.standard_normal(n))
        if k % 2:  # smooth half of the battery
            f = ops.deflate(np.cumsum(np.cumsum(rng.standard_normal(n).reshape(ops.shape), 0), 1).ravel())
        nf = ops.norm(f)
        f /= nf
        p1, p2 = ops.pi1(f), ops.pi2(f)
        n1, n2 = ops.norm(p1), ops.norm(p2)
        Bf = ops.B(f)
        Lf = L @ f
        vals = {
            "B_bound": ops.norm(Bf) - 0.5 * n2,
            "AB_bound": ops.norm(ops.A @ Bf) - n2,
            "BL_bound": abs(ops.inner(Bf, Lf)) - n2,
            "BL_coercive": ops.inner(ops.B(Lf), f) - (N * n1 * n2 - ops.inner(ops.IG_inv_G_pi1(f), p1)),
        }
        for key, v in vals.items():
            if v > margins[key]:
                margins[key] = v
                worst[key] = f
    # worst cases from the operator norms
    margins["B_bound_norm"] = norms["B"] - 0.5
    margins["AB_bound_norm"] = norms["AB"] - 1.0
    worst_margin = max(margins.values())
    details = {
        "margins": margins,
        "N": N,
        "norm_B": norms["B"],
        "norm_AB": norms["AB"],
        "norm_B_power": norms["B_power"],
        "norm_B_svd": norms["B_svd"],
        "trials": trials,
        "resolution": list(ops.shape),
    }
    passed = worst_margin <= SLACK
    if not passed:
        bad = max(margins, key=margins.get)
        if bad in worst:
            details["violating_vector"] = worst[bad].tolist()
            details["violated"] = bad
    return CheckReport("b_bounds", passed, worst_margin, SLACK, details=details)


# ---------------------------------------------------------------------------
# refinement identities


def _interior(n: int, pad: int = 3) -> np.ndarray:
    m = np.zeros(n, bool)
    m[pad:n - pad] = True
    return m


def sa_residual(ops: DiscreteOperatorSet) -> float:
    """Relative residual of S A pi_1 f = K A pi_1 f on interior nodes.

    Since A pi_1 f = -Q (Dx u) x v2, the residual factorises and is the same
    for every f with Dx u != 0: |S_y v2 - K v2| / |v2| (weighted, interior y).
    """
    ay = ops.grid.ay
    m = _interior(len(ay.nodes))
    r = (ops.Sy @ ops.v2vec - ops.K * ops.v2vec)[m]
    return math.sqrt(np.sum(ay.w[m] * r * r) / np.sum(ay.w[m] * ops.v2vec[m] ** 2))


def check_sa_relation(ops: DiscreteOperatorSet, basis: int = 8, tol: float = 0.05) -> CheckReport:
    """S A pi_1 f against 2H(y^2) A pi_1 f for a basis of functions of x."""
    nx, ny = ops.shape
    x = ops.grid.ax.nodes
    my = np.tile(_interior(ny), nx)
    res = []
    for k in range(1, basis + 1):
        u = np.cos(k * math.pi * (x - x[0]) / (x[-1] - x[0]))
        f = ops.extend(u)
        g = ops.A @ f
        lhs = ops.S @ g
        rhs = np.kron(np.ones(nx), ops.K) * g
        r = (lhs - rhs)[my]
        den = math.sqrt(np.sum(ops.w[my] * g[my] ** 2))
        if den > 0:
            res.append(math.sqrt(np.sum(ops.w[my] * r * r)) / den)
    const = ops.S @ (ops.A @ np.ones(nx * ny))
    worst = max(res)
    details = {"per_basis": res, "factorised": sa_residual(ops), "constant_lhs": float(np.max(np.abs(const))),
               "resolution": list(ops.shape)}
    return CheckReport("sa_relation", worst <= tol, worst, tol, details=details)


def k_profile(ops: DiscreteOperatorSet) -> tuple[np.ndarray, np.ndarray]:
    """(interior y nodes, (S_y v2)/v2 there): the discrete multiplier K."""
    ay = ops.grid.ay
    m = _interior(len(ay.nodes)) & (np.abs(ops.v2vec) > 1e-12 * np.max(np.abs(ops.v2vec)))
    return ay.nodes[m], (ops.Sy @ ops.v2vec)[m] / ops.v2vec[m]


def k_deviation(ops: DiscreteOperatorSet) -> float:
    """mu2-weighted mean of |(S_y v2)/v2 - K| over interior y nodes. The
    pointwise stencil error grows like y^2 h^2 towards the box edge, where the
    weights are negligible."""
    ay = ops.grid.ay
    m = _interior(len(ay.nodes)) & (np.abs(ops.v2vec) > 1e-12 * np.max(np.abs(ops.v2vec)))
    kh = (ops.Sy @ ops.v2vec)[m] / ops.v2vec[m]
    return float(np.sum(ay.w[m] * np.abs(kh - ops.K[m])) / np.sum(ay.w[m]))


def g_formula_discrepancy(ops: DiscreteOperatorSet) -> tuple[float, float]:
    """(relative weighted Frobenius distance between G0 and -N(V2) Q^2 T_h,
    least-squares constant c with G0 ≈ -c Q^2 T_h)."""
    wx = ops.grid.ax.w
    sw = np.sqrt(wx)
    Th = ops.Th.toarray()
    G = sw[:, None] * ops.G0 / sw[None, :]
    T = -ops.Q**2 * sw[:, None] * Th / sw[None, :]
    target = ops.N_V2 * T
    disc = float(np.linalg.norm(G - target) / np.linalg.norm(target))
    c = float(np.sum(G * T) / np.sum(T * T))
    return disc, c


def check_g_formula(ops: DiscreteOperatorSet, tol: float = 0.05) -> CheckReport:
    disc, c = g_formula_discrepancy(ops)
    nx = ops.shape[0]
    const = float(np.max(np.abs(ops.G0 @ np.ones(nx))))
    details = {"lsq_constant": c, "N_V2": ops.N_V2, "lsq_relative_error": abs(c - ops.N_V2) / ops.N_V2,
               "constant_image": const, "resolution": list(ops.shape)}
    return CheckReport("g_formula", disc <= tol, disc, tol, details=details)


# ---------------------------------------------------------------------------
# weak Poincare constants


@dataclass
class DiscreteWPI:
    component: int
    gap: float
    rate: RateFunction
    r: np.ndarray
    alpha_curve: np.ndarray
    extra: dict = field(default_factory=dict)


def _cutoff_family(nodes: np.ndarray) -> list:
    """Smooth cutoffs tanh((x - c)/s) over centres and widths spanning the box."""
    R = np.max(np.abs(nodes))
    out = []
    for c in np.linspace(-0.8 * R, 0.8 * R, 9):
        for s in R * np.geomspace(1e-2, 1.0, 7):
            out.append(np.tanh((nodes - c) / s))
    for k in range(1, 6):
        out.append(np.clip(nodes, -R * k / 6, R * k / 6))
    return out


def discrete_wpi(ops: DiscreteOperatorSet, component: int, r_grid=None) -> DiscreteWPI:
    """Discrete weak Poincare rate for ``component`` 1 (form |A pi_1 f|^2) or 2
    (form <-S_y f, f>): Constant(1/gap), clamped at 1, plus the sampled curve
    sup_f (Var f - r osc(f)^2) / energy(f)."""
    if component == 1:
        ax = ops.grid.ax
        op = ops.G0
        w, nodes = ax.w, ax.nodes
    elif component == 2:
        ay = ops.grid.ay
        op = -ops.Sy.toarray()
        w, nodes = ay.w, ay.nodes
    else:
        raise ValueError("component must be 1 or 2")
    gap, vec = smallest_nonzero_eig(op, w)
    if not gap > 0:
        raise linalg.LinAlgError("no positive spectral gap")
    r = np.geomspace(1e-6, 1.0, 61) if r_grid is None else np.asarray(r_grid, dtype=float)
    fam = _cutoff_family(nodes) + [vec]
    curve = np.full(len(r), -np.inf)
    for f in fam:
        f = f - np.sum(w * f)
        var = float(np.sum(w * f * f))
        en = float(np.sum(w * f * (op @ f)))
        if en <= 0 or var <= 0:
            continue
        osc2 = float(np.ptp(f)) ** 2
        curve = np.maximum(curve, (var - r * osc2) / en)
    extra = {}
    if component == 1:
        tgap, _ = smallest_nonzero_eig(-ops.Th.toarray(), ops.grid.ax.w)
        extra["marginal_gap"] = tgap
        extra["star_M_ratio"] = star_m_ratios(ops)
    return DiscreteWPI(component, gap, RateFunction("constant", max(1.0, 1.0 / gap)), r, curve, extra)


def star_m_ratios(ops: DiscreteOperatorSet, basis: int = 8) -> list:
    """|A pi_1 f|^2 / mu1(|Dx f|^2) over a cosine basis (constant Q^2 |v2|^2)."""
    x = ops.grid.ax.nodes
    wx = ops.grid.ax.w
    out = []
    for k in range(1, basis + 1):
        u = np.cos(k * math.pi * (x - x[0]) / (x[-1] - x[0]))
        num = ops.norm(ops.A0(u)) ** 2
        den = float(np.sum(wx * (ops.Dx @ u) ** 2))
        out.append(num / den)
    return out


# ---------------------------------------------------------------------------
# subordination


def subordination_check(ops: DiscreteOperatorSet, alpha: RateFunction | None = None, trials: int = 1000,
                        seed: int = 0) -> CheckReport:
    """|f|^2 <= (1 + alpha(r)) <(1 + G0)^{-1} G0 f, f> + r osc(f)^2 for random
    mean-zero f of x and r on a log grid (phi(s) = s / (1 + s))."""
    wx = ops.grid.ax.w
    gap, vec = smallest_nonzero_eig(ops.G0, wx)
    if alpha is None:
        alpha = RateFunction("constant", 1.0 / gap)  # sharpest constant rate
    rng = np.random.default_rng(seed)
    nx = len(wx)
    worst, worst_case = -math.inf, None
    sub = lambda u: linalg.cho_solve(ops.chol, wx * (ops.G0 @ u))
    for k in range(trials):
        if k % 3 == 0:
            f = rng.standard_normal(nx)
        elif k % 3 == 1:
            f = np.cumsum(rng.standard_normal(nx))
        else:
            f = vec + 0.1 * rng.standard_normal() * np.cumsum(rng.standard_normal(nx)) / nx
        f = f - np.sum(wx * f)
        r = float(10 ** rng.uniform(-8, 1))
        lhs = float(np.sum(wx * f * f))
        a = float(alpha(r))
        rhs = (1 + a) * float(np.sum(wx * f * sub(f))) + r * float(np.ptp(f)) ** 2
        m = (lhs - rhs) / lhs
        if m > worst:
            worst, worst_case = m, (f, r)
    # gap eigenvector as r -> 0: equality up to rounding
    f = vec - np.sum(wx * vec)
    eq = (float(np.sum(wx * f * f)) - (1 + float(alpha(1e-300))) * float(np.sum(wx * f * sub(f)))) / float(np.sum(wx * f * f))
    details = {"gap": gap, "alpha": alpha.describe(), "trials": trials, "eigvec_margin": eq}
    passed = worst <= SLACK
    if not passed:
        details["violating_f"] = worst_case[0].tolist()
        details["violating_r"] = worst_case[1]
    return CheckReport("subordination", passed, worst, SLACK, details=details)


# ---------------------------------------------------------------------------
# hypocoercive decay


def epsilon_choice(N: float, alpha1: float, alpha2: float) -> float:
    return 1.0 / (2 * N * N * (alpha1 + 1) * alpha2)


def kappa_choice(N: float, alpha1: float, alpha2: float) -> float:
    return 1.0 / (6 * N**4 * alpha2 * (alpha1 + 1) ** 2)


def I_eps(ops: DiscreteOperatorSet, f, eps: float) -> float:
    return 0.5 * ops.inner(f, f) + eps * ops.inner(ops.B(f), f)


def random_smooth(ops: DiscreteOperatorSet, rng: np.random.Generator, modes: int = 6) -> np.ndarray:
    """Mean-zero random field sum c_ij cos(i pi s) cos(j pi t), c_ij ~ N(0, 1),
    on the rescaled box coordinates s, t in [0, 1]."""
    x, y = ops.grid.ax.nodes, ops.grid.ay.nodes
    cx = np.cos(np.pi * np.outer(np.arange(modes), (x - x[0]) / (x[-1] - x[0])))
    cy = np.cos(np.pi * np.outer(np.arange(modes), (y - y[0]) / (y[-1] - y[0])))
    c = rng.standard_normal((modes, modes))
    return ops.deflate((cx.T @ c @ cy).ravel())


def evolve(ops: DiscreteOperatorSet, f0: np.ndarray, t_max: float, rtol: float = 1e-10, atol: float | None = None,
           t_eval=None):
    """f_t = exp(tL) f0 by the adaptive BDF integrator with the sparse
    generator as Jacobian. Returns (times, states as columns); without
    ``t_eval`` every accepted step is returned."""
    L = ops.L.tocsc()
    f0 = np.asarray(f0, dtype=float)
    atol = 1e-12 * max(float(np.max(np.abs(f0))), 1e-300) if atol is None else atol
    sol = solve_ivp(lambda t, y: L @ y, (0.0, float(t_max)), f0, method="BDF", jac=L, rtol=rtol, atol=atol,
                    t_eval=t_eval)
    if not sol.success:
        raise FloatingPointError(f"ODE integration failed: {sol.message}")
    return sol.t, sol.y


def evolve_expm(ops: DiscreteOperatorSet, f0: np.ndarray, times) -> np.ndarray:
    """Dense matrix exponential reference (small grids only)."""
    L = ops.L.toarray()
    return np.stack([linalg.expm(t * L) @ f0 for t in times], 1)


def hypocoercive_decay(ops: DiscreteOperatorSet, alpha1, alpha2, f0s, t_max: float | None = None,
                       N: float | None = None, tol: float = 1e-8, rtol: float = 1e-10) -> CheckReport:
    """Instantiate the Gronwall argument along ODE trajectories: (i) the
    sandwich (1-eps)/2 |f|^2 <= I_eps(f) <= (1+eps)/2 |f|^2, (ii) the bound
    |f_t|^2 <= 3 exp(-kappa t) |f_0|^2 and (iii) monotone I_eps, checked at
    every accepted integrator step on [0, t_max] (default 20 / kappa).

    ``alpha1``/``alpha2`` are constants or constant RateFunctions."""
    a1 = alpha1.c if isinstance(alpha1, RateFunction) else float(alpha1)
    a2 = alpha2.c if isinstance(alpha2, RateFunction) else float(alpha2)
    N = estimate_N(ops) if N is None else N
    eps = epsilon_choice(N, a1, a2)
    kappa = kappa_choice(N, a1, a2)
    t_max = 20 / kappa if t_max is None else t_max
    f0s = [ops.deflate(np.asarray(f, dtype=float)) for f in f0s]
    worst = {"bound": -math.inf, "sandwich": -math.inf, "monotone": -math.inf}
    where = {}
    steps = 0
    for k, f0 in enumerate(f0s):
        n0 = ops.inner(f0, f0)
        ts, F = evolve(ops, f0, t_max, rtol=rtol)
        steps += len(ts)
        nf = np.einsum("ij,ij,i->j", F, F, ops.w)
        bf = ops.B_form(F)
        I = 0.5 * nf + eps * bf
        m = {
            "bound": (nf - 3 * np.exp(-kappa * ts) * n0) / n0,
            "sandwich": np.maximum((1 - eps) / 2 * nf - I, I - (1 + eps) / 2 * nf) / n0,
            "monotone": np.concatenate([[-math.inf], np.diff(I)]) / n0,
        }
        for key, v in m.items():
            j = int(np.argmax(v))
            if v[j] > worst[key]:
                worst[key] = float(v[j])
                where[key] = {"trajectory": k, "t": float(ts[j])}
    measured = max(worst.values())
    details = {
        "N": N, "alpha1": a1, "alpha2": a2, "eps": eps, "kappa": kappa, "t_max": t_max,
        "margins": worst, "worst_at": where, "n_initial": len(f0s), "steps": steps, "rtol": rtol,
    }
    return CheckReport("hypocoercive_decay", measured <= tol, measured, tol, details=details)


def sandwich_margin(ops: DiscreteOperatorSet, eps: float, trials: int = 100, seed: int = 0) -> float:
    """max over random f of the violation of (1-eps)/2 |f|^2 <= I_eps(f) <= (1+eps)/2 |f|^2."""
    rng = np.random.default_rng(seed)
    worst = -math.inf
    for _ in range(trials):
        f = rng.standard_normal(ops.w.size)
        nf = ops.inner(f, f)
        I = I_eps(ops, f, eps)
        worst = max(worst, ((1 - eps) / 2 * nf - I) / nf, (I - (1 + eps) / 2 * nf) / nf)
    return worst
