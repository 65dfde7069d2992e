"""Experiment runners behind the command line: each takes a validated
configuration, writes its tables into an output directory and returns an
ExperimentReport."""
from __future__ import annotations

import datetime as _dt
import json
import math
from pathlib import Path

import numpy as np

from . import __version__
from . import operators as op
from .config import ExperimentConfig
from .potentials import (
    check_growth,
    check_vv3,
    gradient_fd_error,
    make_potential,
    moment_check,
)
from .rates import compare_case
from .report import CheckReport, ExperimentReport, stable_hash, write_csv
from .sampling import ProductMeasure, osc, standard_observables
from .sde import SdeSystem, classify_decay, decay_curve, stationarity_check


def _now() -> str:
    return _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")


def new_report(cfg: ExperimentConfig) -> ExperimentReport:
    return ExperimentReport(cfg.kind, stable_hash(cfg.hashable()), __version__, started=_now())


# ---------------------------------------------------------------------------


def run_rates(cfg: ExperimentConfig, out: Path) -> ExperimentReport:
    p = cfg.params
    rep = new_report(cfg)
    for c in p.cases:
        cmp = compare_case(c.case, c.params, p.t_min, p.t_max, p.points, p.c1, p.c2)
        ph = stable_hash({"case": c.case, "params": c.params, "c1": p.c1, "c2": p.c2})
        rows = [[t, math.exp(a), math.exp(b), math.exp(h), c.case, ph]
                for t, a, b, h in zip(cmp.times, cmp.log_implicit, cmp.log_closed, cmp.log_hw)]
        write_csv(out / f"rates_{c.case}_{ph}.csv", "rates", rows)
        tag = f"{c.case}[{ph}]"
        rep.add(f"{tag}.class_numeric", cmp.numeric.cls)
        rep.add(f"{tag}.class_closed_form", cmp.closed.cls, provenance="theory")
        rep.add(f"{tag}.exponent_numeric", cmp.numeric.exponent)
        rep.add(f"{tag}.exponent_closed_form", cmp.closed.exponent, provenance="theory")
        rep.add(f"{tag}.class_match", cmp.numeric.cls == cmp.closed.cls, passed=cmp.numeric.cls == cmp.closed.cls)
        err = cmp.exponent_error
        rep.add(f"{tag}.exponent_error", err, p.exponent_tol, passed=err <= p.exponent_tol)
    return rep


# ---------------------------------------------------------------------------


def _observables(names):
    table = {o.tag: o for o in standard_observables()}
    missing = [n for n in names if n not in table]
    if missing:
        raise ValueError(f"unknown observable(s) {missing}; available {sorted(table)}")
    return [table[n] for n in names]


def run_simulate(cfg: ExperimentConfig, out: Path) -> ExperimentReport:
    p = cfg.params
    rep = new_report(cfg)
    v1, v2 = make_potential(p.v1), make_potential(p.v2)
    system = SdeSystem(v1, v2, p.Q)
    obs = _observables(p.observables)
    times = np.round(np.arange(0.0, p.t_max + 0.5 * p.dt, p.dt), 12)
    meas = system.measure()
    batch = meas.sample(min(p.n, 1 << 16), cfg.seed, cfg.threads)
    for o in obs:
        osc(o, batch)  # raises on a violated bound
    if p.dump_samples:
        x, y = meas.sample(p.dump_samples, cfg.seed, cfg.threads)
        width = max(x.shape[1], y.shape[1])
        cols = ["component"] + [f"c{i}" for i in range(width)]
        pad = lambda a: np.pad(a, ((0, 0), (0, width - a.shape[1])), constant_values=np.nan)
        rows = [[1, *r] for r in pad(x)] + [[2, *r] for r in pad(y)]
        write_csv(out / "samples.csv", "samples", rows, cols)
    dc = decay_curve(system, obs, times, p.n, cfg.seed, h=p.h, threads=cfg.threads)
    rep.meta["system"] = system.describe()
    for k, o in enumerate(obs):
        write_csv(out / f"simulate_{o.tag}.csv", "simulate", dc.rows(k))
        fit = classify_decay(dc.times, dc.var[k], dc.se[k])
        ok = None
        if p.expect is not None:
            ok = fit.cls == p.expect and (p.expect != "exponential" or fit.significant)
        rep.add(f"{o.tag}.class", fit.cls, passed=ok)
        rep.add(f"{o.tag}.rate", fit.rate, stochastic=True, se=fit.rate_se)
        rep.add(f"{o.tag}.var0", float(dc.var[k][0]), stochastic=True, se=float(dc.se[k][0]))
    if p.stationarity is not None:
        st = p.stationarity
        chk = stationarity_check(system, st.moments, st.T, st.n or p.n, cfg.seed, h=p.h, threads=cfg.threads)
        rep.add_check(chk, stochastic=True, se=1.0)  # a maximum of z-scores
    return rep


# ---------------------------------------------------------------------------


def _lab_system(s, n):
    v1, v2 = make_potential(s.v1), make_potential(s.v2)
    return op.build_system(v1, v2, n, Q=s.Q)


def run_operator_lab(cfg: ExperimentConfig, out: Path) -> ExperimentReport:
    p = cfg.params
    rep = new_report(cfg)
    rep.meta["resolution"] = [p.n, p.refine]
    checks = []

    def record(rep_c: CheckReport, prefix: str, ops, **flags):
        rep.add(f"{prefix}.{rep_c.name}", rep_c.measured, rep_c.threshold, rep_c.provenance, bool(rep_c.passed),
                **flags)
        margins = rep_c.details.get("margins", {"measured": rep_c.measured})
        checks.append({"check": f"{prefix}.{rep_c.name}", "resolution": list(ops.shape),
                       "potentials": [ops.v1.describe(), ops.v2.describe()], "margins": margins,
                       "pass": bool(rep_c.passed)})
        vec = rep_c.details.get("violating_vector") or rep_c.details.get("violating_f")
        if vec is not None:
            write_csv(out / f"violation_{prefix}_{rep_c.name}.csv", "vector", enumerate(vec))

    for i, s in enumerate(p.systems):
        name = s.name or f"system{i}"
        ops = _lab_system(s, p.n)
        st = op.structure_report(ops, seed=cfg.seed)
        for key in ("S_pi1", "pi1_A_pi1", "A_antisymmetry", "S_symmetry", "pi1_B", "B_pi1"):
            ok = st[key] <= 1e-12
            record(CheckReport(key, ok, st[key], 1e-12), name, ops)
        N, routes = op.estimate_N(ops, with_routes=True)
        for k, v in routes.items():
            rep.add(f"{name}.N_route.{k}", v, refinement_sensitive=True)
        rep.add(f"{name}.N", N, refinement_sensitive=True)
        record(op.verify_b_bounds(ops, p.trials, cfg.seed, N=N), name, ops)
        sa = op.check_sa_relation(ops, tol=p.identity_tol)
        gf = op.check_g_formula(ops, tol=p.identity_tol)
        record(sa, name, ops, refinement_sensitive=True)
        record(gf, name, ops, refinement_sensitive=True)
        rep.add(f"{name}.K_deviation", op.k_deviation(ops), refinement_sensitive=True)
        w1, w2 = op.discrete_wpi(ops, 1), op.discrete_wpi(ops, 2)
        rep.add(f"{name}.gap_G0", w1.gap, refinement_sensitive=True)
        rep.add(f"{name}.gap_T", w1.extra["marginal_gap"], refinement_sensitive=True)
        rep.add(f"{name}.gap_Sy", w2.gap, refinement_sensitive=True)
        rep.add(f"{name}.alpha1", w1.rate.c, refinement_sensitive=True)
        rep.add(f"{name}.alpha2", w2.rate.c, refinement_sensitive=True)
        rep.add(f"{name}.eps", op.epsilon_choice(N, w1.rate.c, w2.rate.c), refinement_sensitive=True)
        rep.add(f"{name}.kappa", op.kappa_choice(N, w1.rate.c, w2.rate.c), refinement_sensitive=True)
        record(op.subordination_check(ops, trials=p.subordination_pairs, seed=cfg.seed), name, ops)
        if p.decay_initial:
            rng = np.random.default_rng(cfg.seed)
            f0s = [op.random_smooth(ops, rng) for _ in range(p.decay_initial)]
            record(op.hypocoercive_decay(ops, w1.rate, w2.rate, f0s, N=N), name, ops)
        if p.refine:
            fine = _lab_system(s, p.refine)
            for label, coarse_c, fn in (("sa", sa, op.check_sa_relation), ("g", gf, op.check_g_formula)):
                fine_c = fn(fine, tol=p.identity_tol)
                ratio = coarse_c.measured / fine_c.measured if fine_c.measured > 0 else math.inf
                ok = ratio >= p.refinement_factor
                record(CheckReport(f"{label}_refinement", ok, ratio, p.refinement_factor,
                                   details={"coarse": coarse_c.measured, "fine": fine_c.measured}), name, fine)
    (out / "checks.json").write_text(json.dumps(checks, indent=2, sort_keys=True, default=float))
    return rep


# ---------------------------------------------------------------------------


def run_check_assumptions(cfg: ExperimentConfig, out: Path) -> ExperimentReport:
    p = cfg.params
    rep = new_report(cfg)
    v1, v2 = make_potential(p.v1), make_potential(p.v2)
    for label, v in (("V1", v1), ("V2", v2)):
        rep.add(f"{label}.normalizing_constant", v.normalizing_constant(), provenance="measured")
        g = check_growth(v, p.tau, p.M, p.samples, p.radius)
        rep.add(f"{label}.growth", g.measured, g.threshold, passed=bool(g.passed))
        pts = np.random.default_rng(cfg.seed).uniform(-3, 3, (64, v.dim))
        rep.add(f"{label}.gradient_fd_error", gradient_fd_error(v, pts))
    vv3 = check_vv3(v2.profile, v2.dim)
    rep.add("V2.vv3_sup_H", vv3.measured, passed=bool(vv3.passed))
    rep.add("V2.N", moment_check(v2, 2), provenance="measured")
    rep.add("V2.moment4", moment_check(v2, 4), provenance="measured")
    system = SdeSystem(v1, v2, p.Q)
    sig = float(np.linalg.svd(system.Q @ system.Q.T, compute_uv=False).min())
    rep.add("QQt_min_singular_value", sig, 1e-12, passed=sig > 1e-12)
    ProductMeasure(v1, v2)  # radial tables must resolve both tails
    return rep


RUNNERS = {
    "rates": run_rates,
    "simulate": run_simulate,
    "operator-lab": run_operator_lab,
    "check-assumptions": run_check_assumptions,
}


def run(cfg: ExperimentConfig, out: Path | str | None = None) -> ExperimentReport:
    out = Path(cfg.out if out is None else out)
    out.mkdir(parents=True, exist_ok=True)
    rep = RUNNERS[cfg.kind](cfg, out)
    rep.finished = _now()
    (out / "config.json").write_text(cfg.dumps())
    rep.save(out / "report.json")
    return rep
