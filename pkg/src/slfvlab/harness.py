"""Declarative experiment harness with deterministic artifacts.

An ExperimentSpec names one of six experiment kinds and carries its
settings as plain data; run_experiment dispatches to the engines, collects
row tables, and writes report.json plus one CSV per table. Every replicate
draws from a counter-based stream keyed by (seed, label, replicate), and
reductions happen in replicate order with compensated summation, so the
artifacts are byte-identical whatever the worker count.
"""
from __future__ import annotations

import math
import os
import time
from dataclasses import dataclass, field as dc_field
from multiprocessing import get_context

import numpy as np

from . import analytic, dual, oracle
from .core import (
    FixedRadius,
    ScalingParams,
    TestFunction,
    VariableRadius,
    ball_normalized_kappa,
    dump_json,
    fixed_ladder,
    gaussian_hump,
    limit_params_fixed,
    limit_params_variable,
    load_json,
    quartic_bump,
    real_to_json,
    replicate_stream,
    variable_ladder,
)
from .forward import ForwardKernel, PiecewiseInitial, density_block, run_forward
from .stats import MeanReport, mean_report

EXPERIMENT_KINDS = (
    "DualityTest",
    "CoalescenceScan",
    "ForwardLadder",
    "ExponentialMartingaleLadder",
    "OracleCompare",
    "AnalyticChecks",
)


# ---------------------------------------------------------------------------
# Spec plumbing
# ---------------------------------------------------------------------------

def law_from_dict(d: dict):
    kind = d.get("type")
    if kind == "fixed":
        return FixedRadius(radius=d["radius"], impact=d["impact"])
    if kind == "variable":
        return VariableRadius(alpha=d["alpha"], gamma=d["gamma"])
    raise ValueError(f"unknown law type {kind!r}")


def params_from_dict(d: dict) -> ScalingParams:
    return ScalingParams(n_rate=d["n_rate"], m_space=d["m_space"],
                         j_impact=d["j_impact"], k_density=d["k_density"],
                         dimension=d.get("dimension", 1))


def phi_from_dict(d: dict | None) -> TestFunction:
    if d is None:
        return quartic_bump()
    shape = d.get("shape", "quartic")
    if shape == "quartic":
        return quartic_bump(center=d.get("center", 0.0),
                            radius=d.get("radius", 0.5),
                            amplitude=d.get("amplitude", 1.0))
    if shape == "gaussian":
        return gaussian_hump(center=d.get("center", 0.0),
                             sigma=d.get("sigma", 0.2),
                             amplitude=d.get("amplitude", 1.0))
    raise ValueError(f"unknown test-function shape {shape!r}")


@dataclass
class ExperimentSpec:
    """One experiment: a kind, a seed, replicate count, and kind settings."""

    name: str
    kind: str
    seed: int = 0
    replicates: int = 1000
    settings: dict = dc_field(default_factory=dict)

    def validate(self) -> None:
        if self.kind not in EXPERIMENT_KINDS:
            raise ValueError(f"unknown experiment kind {self.kind!r}; "
                             f"expected one of {EXPERIMENT_KINDS}")
        if self.replicates < 1:
            raise ValueError("replicates must be at least 1")
        s = self.settings
        if "m_values" in s:
            ms = list(s["m_values"])
            if any(b <= a for a, b in zip(ms, ms[1:])):
                raise ValueError("ladder m_values must be strictly increasing")
        if "theta" in s:
            beta = s.get("beta", 1.0)
            if not (0.0 < s["theta"] < beta):
                raise ValueError("moment exponent theta must lie in (0, beta)")
        if "law" in s:
            law_from_dict(s["law"])

    def to_dict(self) -> dict:
        return {"name": self.name, "kind": self.kind, "seed": self.seed,
                "replicates": self.replicates, "settings": self.settings}

    @staticmethod
    def from_dict(d: dict) -> "ExperimentSpec":
        spec = ExperimentSpec(name=d["name"], kind=d["kind"],
                              seed=d.get("seed", 0),
                              replicates=d.get("replicates", 1000),
                              settings=d.get("settings", {}))
        spec.validate()
        return spec

    @staticmethod
    def from_file(path) -> "ExperimentSpec":
        return ExperimentSpec.from_dict(load_json(path))


@dataclass
class StatReport:
    """Machine-readable outcome: row tables, failures, and a pass flag."""

    name: str
    kind: str
    seed: int
    passed: bool
    failures: list
    summary: dict
    tables: dict
    wall_time: float
    spec_dict: dict = dc_field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"name": self.name, "kind": self.kind, "seed": self.seed,
                "passed": self.passed, "failures": self.failures,
                "summary": self.summary, "tables": self.tables,
                "spec": self.spec_dict,
                "wall_time_seconds": round(self.wall_time, 3)}


def _fmt_cell(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return real_to_json(v)
    return str(v)


def write_csv(path, rows) -> None:
    """Plain CSV with shortest-round-trip floats; header from the first row."""
    if not rows:
        with open(path, "w") as fh:
            fh.write("\n")
        return
    cols = list(rows[0].keys())
    lines = [",".join(cols)]
    for row in rows:
        lines.append(",".join(_fmt_cell(row[c]) for c in cols))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def write_artifacts(report: StatReport, out_dir) -> None:
    os.makedirs(out_dir, exist_ok=True)
    dump_json(report.to_dict(), os.path.join(out_dir, "report.json"))
    for table_name, rows in report.tables.items():
        write_csv(os.path.join(out_dir, f"{table_name}.csv"), rows)


def _parallel_blocks(worker, arg_blocks, workers: int):
    """Map worker over blocks, in-process when workers <= 1."""
    if workers <= 1 or len(arg_blocks) <= 1:
        return [worker(a) for a in arg_blocks]
    ctx = get_context("fork")
    with ctx.Pool(min(workers, len(arg_blocks))) as pool:
        return pool.map(worker, arg_blocks)


def _split_range(n: int, blocks: int):
    edges = np.linspace(0, n, min(blocks, n) + 1).astype(int)
    return [(int(a), int(b)) for a, b in zip(edges[:-1], edges[1:]) if b > a]


# ---------------------------------------------------------------------------
# Moment diagnostic
# ---------------------------------------------------------------------------

def moment_diagnostic(sup_values, theta: float, beta: float) -> MeanReport:
    """E[sup_t <X_t, phi>^(1+theta)] from per-path running suprema.

    Only moments strictly below 1 + beta stay bounded under the stable
    branching limit, so theta outside (0, beta) is a spec error, not a
    number to report.
    """
    if not (0.0 < theta < beta):
        raise ValueError("moment exponent theta must lie in (0, beta)")
    vals = np.asarray(sup_values, dtype=float) ** (1.0 + theta)
    return mean_report(vals)


# ---------------------------------------------------------------------------
# DualityTest
# ---------------------------------------------------------------------------

def _run_duality(spec: ExperimentSpec, workers: int, budget):
    s = spec.settings
    params = params_from_dict(s["params"])
    law = law_from_dict(s["law"])
    w0 = PiecewiseInitial(breaks=tuple(s["w0"]["breaks"]),
                          values=tuple(s["w0"]["values"]))
    times = list(s.get("times", (0.25, 1.0)))
    lineages = list(s.get("lineages", (1, 2)))
    points = s.get("points")
    z_max = float(s.get("z_max", 4.0))
    engine = s.get("engine", "marked")
    rows = []
    failures = []
    for k in lineages:
        pts = points[str(k)] if isinstance(points, dict) else points[:k]
        for t in times:
            rep = dual.duality_gap(k, w0, pts, t, spec.replicates, law, params,
                                   spec.seed, engine=engine,
                                   label=f"{spec.name}-k{k}-t{t}")
            row = {"lineages": k, "time": t,
                   "forward_mean": rep.forward.mean,
                   "forward_stderr": rep.forward.stderr,
                   "dual_mean": rep.dual.mean,
                   "dual_stderr": rep.dual.stderr,
                   "gap": rep.gap, "stderr": rep.pooled_stderr,
                   "z": rep.z, "passed": abs(rep.z) <= z_max}
            rows.append(row)
            if not row["passed"]:
                failures.append(f"duality k={k} t={t}: |z|={abs(rep.z):.2f} "
                                f"> {z_max}")
    summary = {"max_abs_z": max(abs(r["z"]) for r in rows), "z_max": z_max}
    return {"duality": rows}, failures, summary


# ---------------------------------------------------------------------------
# CoalescenceScan
# ---------------------------------------------------------------------------

def _run_coalescence(spec: ExperimentSpec, workers: int, budget):
    s = spec.settings
    law = law_from_dict(s["law"])
    rungs = [(params_from_dict(r), law, float(r["t_end"]))
             for r in s["rungs"]]
    beta = s.get("beta")
    band = float(s.get("band_factor", 2.0))
    rows = dual.coalescence_probability(rungs, spec.replicates, spec.seed,
                                        beta=beta,
                                        initial_radius=s.get("initial_radius"),
                                        label=spec.name)
    failures = []
    scaled = [r["scaled_p"] for r in rows]
    ratio = max(scaled) / min(scaled) if min(scaled) > 0 else math.inf
    if ratio > band:
        failures.append(f"scaled coalescence spread {ratio:.3f} exceeds "
                        f"band factor {band}")
    for r in rows:
        r["passed"] = ratio <= band
    summary = {"scaled_spread": ratio, "band_factor": band}
    return {"coalescence": rows}, failures, summary


# ---------------------------------------------------------------------------
# ForwardLadder (fixed radius, finite variance)
# ---------------------------------------------------------------------------

def _forward_block(args):
    (pdict, ldict, phi_dict, x0, lo, hi, t_end, seed, label, rep_lo, rep_hi,
     max_events) = args
    params = params_from_dict(pdict)
    law = law_from_dict(ldict)
    phi = phi_from_dict(phi_dict)
    kernel = ForwardKernel(params, law, phi)
    init = density_block(x0, params.k_density, lo, hi)
    out = []
    for rep in range(rep_lo, rep_hi):
        rng = replicate_stream(seed, label, rep)
        led = run_forward(params, law, init, phi, [t_end], rng,
                          kernel=kernel, max_events=max_events)
        out.append((led.value[0] + led.compensator[-1], led.mass[-1],
                    float(led.events)))
    return out


def _block_pairing(grid, x0: float, lo: float, hi: float) -> float:
    """<x0 1_[lo,hi] dx, g> by cell-clipped quadrature on the grid."""
    xs = grid.xs
    frac = np.clip((np.minimum(hi, xs + 0.5 * grid.h)
                    - np.maximum(lo, xs - 0.5 * grid.h)) / grid.h, 0.0, 1.0)
    return x0 * grid.h * float(np.dot(frac, grid.values))


def _first_moment_grids(phi: TestFunction, t_end: float, m_diff: float,
                        law, params: ScalingParams, lo: float, hi: float):
    """The heat flow and the rung-exact jump flow of phi on one grid.

    E<X_t, phi> closes linearly: each event moves mass by the two-ball
    smoothing, so the first moment evolves under the single-jump
    semigroup exactly. Its gap to the heat semigroup is the rung's
    first-moment error, free of Monte Carlo noise.
    """
    pad = 8.0 * math.sqrt(max(m_diff * t_end, 1e-12)) + 4.0 / params.m_space
    glo = min(lo, phi.support_center - phi.support_radius) - pad
    ghi = max(hi, phi.support_center + phi.support_radius) + pad
    g = analytic.grid_from_function(phi.value, glo, ghi, 16001)
    heat = analytic.heat_semigroup(g, t_end, m_diff)
    jump = analytic.compound_poisson_semigroup(g, t_end, law, params)
    return heat, jump


def _run_forward_ladder(spec: ExperimentSpec, workers: int, budget):
    s = spec.settings
    law = law_from_dict(s["law"])
    rungs = fixed_ladder(s["m_values"], s["c1"], s["c2"], law,
                         s.get("dimension", 1))
    phi_dict = s.get("phi")
    phi = phi_from_dict(phi_dict)
    t_end = float(s["t_end"])
    x0 = float(s.get("x0", 0.2))
    lo = float(s.get("lo", -1.0))
    hi = float(s.get("hi", 1.0))
    var_tol = float(s.get("variance_tolerance", 0.15))
    z_max = float(s.get("z_max", 4.0))
    max_events = budget or 20_000_000
    lp = limit_params_fixed(s["c1"], s["c2"], law, s.get("dimension", 1))
    z0 = x0 * (hi - lo)
    feller_ref = 2.0 * lp.kappa * z0 * t_end
    rows = []
    failures = []
    for rung in rungs:
        p = rung.params
        label = f"{spec.name}-m{p.m_space}"
        heat, jump = _first_moment_grids(phi, t_end, lp.m_diff, law, p, lo, hi)
        ref_heat = _block_pairing(heat, x0, lo, hi)
        ref_jump = _block_pairing(jump, x0, lo, hi)
        pdict = {"n_rate": p.n_rate, "m_space": p.m_space,
                 "j_impact": p.j_impact, "k_density": p.k_density,
                 "dimension": p.dimension}
        ldict = dict(s["law"])
        blocks = [(pdict, ldict, phi_dict, x0, lo, hi, t_end, spec.seed,
                   label, a, b, max_events)
                  for a, b in _split_range(spec.replicates, workers)]
        chunks = _parallel_blocks(_forward_block, blocks, workers)
        triples = [t for chunk in chunks for t in chunk]
        est = mean_report([t[0] for t in triples])
        masses = np.array([t[1] for t in triples])
        mass_var = float(np.var(masses, ddof=1))
        var_ratio = mass_var / feller_ref
        rows.append({"m_space": p.m_space, "n_rate": p.n_rate,
                     "j_impact": p.j_impact, "k_density": p.k_density,
                     "estimate": est.mean, "stderr": est.stderr,
                     "first_moment_exact": ref_jump,
                     "heat_reference": ref_heat,
                     "gap": abs(ref_jump - ref_heat),
                     "mc_z": est.z_against(ref_jump),
                     "mass_variance": mass_var, "feller_reference": feller_ref,
                     "variance_ratio": var_ratio,
                     "mean_events": float(np.mean([t[2] for t in triples]))})
    gaps = [r["gap"] for r in rows]
    if any(b >= a for a, b in zip(gaps, gaps[1:])):
        failures.append(f"first-moment gap not strictly decreasing: {gaps}")
    worst_z = max(abs(r["mc_z"]) for r in rows)
    if worst_z > z_max:
        failures.append(f"simulation off its own first-moment semigroup: "
                        f"|z|={worst_z:.2f} > {z_max}")
    top = rows[-1]["variance_ratio"]
    if abs(top - 1.0) > var_tol:
        failures.append(f"mass variance ratio {top:.3f} outside "
                        f"1 +- {var_tol} at largest rung")
    for r in rows:
        r["passed"] = not failures
    summary = {"gaps": gaps, "worst_mc_z": worst_z,
               "variance_ratio_largest": top,
               "m_diff": lp.m_diff, "kappa": lp.kappa}
    return {"forward_ladder": rows}, failures, summary


# ---------------------------------------------------------------------------
# ExponentialMartingaleLadder (variable radius, stable branching)
# ---------------------------------------------------------------------------

def _exp_block(args):
    (pdict, ldict, beta, phi_dict, x0, lo, hi, t_end, n_records, seed, label,
     rep_lo, rep_hi, max_events) = args
    params = params_from_dict(pdict)
    law = law_from_dict(ldict)
    phi = phi_from_dict(phi_dict)
    kernel = ForwardKernel(params, law, phi, beta=beta, track_exp=True)
    init = density_block(x0, params.k_density, lo, hi)
    record = list(np.linspace(0.0, t_end, n_records))
    out = []
    for rep in range(rep_lo, rep_hi):
        rng = replicate_stream(seed, label, rep)
        led = run_forward(params, law, init, phi, record, rng, beta=beta,
                          kernel=kernel, max_events=max_events)
        vals = led.value
        out.append((math.exp(-vals[-1]), math.exp(-vals[0]),
                    led.int_exp_lap[-1], led.int_exp_stab[-1],
                    max(vals), vals[-1], float(led.events)))
    return out


def exponential_martingale_test(params: ScalingParams, law: VariableRadius,
                                beta: float, phi: dict | None, x0: float,
                                lo: float, hi: float, t_end: float,
                                replicates: int, seed: int, *,
                                m_diff: float, kappa: float,
                                n_records: int = 9, label: str = "expmart",
                                workers: int = 1,
                                max_events: int = 20_000_000) -> dict:
    """Mean and z of the exponential-martingale residual on one rung.

    The residual per path is e^(-V_T) - e^(-V_0) + (m/2) I_lap - kappa
    I_stab, whose expectation vanishes exactly under the limit dynamics;
    at a finite rung the bias measures how far the rung's jump generator
    still is from the stable one. Returns the row dict plus raw columns
    for reuse (exp(-V_T) for duality residuals, running sup for moment
    diagnostics).
    """
    if not isinstance(law, VariableRadius):
        raise TypeError("exponential-martingale ladders use the power-law "
                        "radius mechanism")
    pdict = {"n_rate": params.n_rate, "m_space": params.m_space,
             "j_impact": params.j_impact, "k_density": params.k_density,
             "dimension": params.dimension}
    ldict = {"type": "variable", "alpha": law.alpha, "gamma": law.gamma}
    blocks = [(pdict, ldict, beta, phi, x0, lo, hi, t_end, n_records, seed,
               label, a, b, max_events)
              for a, b in _split_range(replicates, workers)]
    chunks = _parallel_blocks(_exp_block, blocks, workers)
    cols = [t for chunk in chunks for t in chunk]
    resid = [c[0] - c[1] + 0.5 * m_diff * c[2] - kappa * c[3] for c in cols]
    rep = mean_report(resid)
    return {
        "resid_mean": rep.mean, "resid_stderr": rep.stderr,
        "z": rep.z_against(0.0),
        "exp_vt": [c[0] for c in cols],
        "sup_value": [c[4] for c in cols],
        "v_t": [c[5] for c in cols],
        "mean_events": float(np.mean([c[6] for c in cols])),
    }


def _dual_exponent_pairing(phi: TestFunction, t_end: float, law, params,
                           beta: float, x0: float, lo: float, hi: float, *,
                           dt: float, h: float) -> float:
    """<X_0, v(t_end)> with v the rung-exact dual exponent of phi."""
    pad = phi.support_radius + 1.5 * (1.0 / params.m_space) + 0.5
    glo = min(lo, phi.support_center - pad) - 0.5
    ghi = max(hi, phi.support_center + pad) + 0.5
    n = int(round((ghi - glo) / h)) + 1
    g = analytic.grid_from_function(phi.value, glo, ghi, n)
    sol = analytic.solve_v_equation(g, t_end, law, params, beta, dt=dt)
    v = sol.final()
    xs = v.xs
    frac = np.clip((np.minimum(hi, xs + 0.5 * v.h)
                    - np.maximum(lo, xs - 0.5 * v.h)) / v.h, 0.0, 1.0)
    return x0 * v.h * float(np.dot(frac, v.values))


def _run_exp_martingale(spec: ExperimentSpec, workers: int, budget):
    s = spec.settings
    law = law_from_dict(s["law"])
    beta = float(s["beta"])
    rungs = variable_ladder(s["m_values"], s["eta"], s["c1"], s["c2"], law,
                            beta, s.get("dimension", 1))
    phi_dict = s.get("phi")
    phi = phi_from_dict(phi_dict)
    t_end = float(s["t_end"])
    x0 = float(s.get("x0", 0.5))
    lo = float(s.get("lo", -1.0))
    hi = float(s.get("hi", 1.0))
    theta = float(s.get("theta", beta / 2.0))
    dt = float(s.get("dt", 1e-3))
    h = float(s.get("h", 2e-3))
    max_events = budget or 20_000_000
    lp = limit_params_variable(s["c1"], s["c2"], law, s.get("dimension", 1),
                               beta)
    kappa_ball = ball_normalized_kappa(lp, s.get("dimension", 1))
    rows = []
    failures = []
    for i, rung in enumerate(rungs):
        p = rung.params
        reps = spec.replicates * (i + 1) if s.get("grow_replicates") else \
            spec.replicates
        res = exponential_martingale_test(
            p, law, beta, phi_dict, x0, lo, hi, t_end, reps,
            spec.seed, m_diff=lp.m_diff, kappa=kappa_ball,
            label=f"{spec.name}-m{p.m_space}", workers=workers,
            max_events=max_events)
        _, jump = _first_moment_grids(phi, t_end, lp.m_diff, law, p, lo, hi)
        ev_exact = _block_pairing(jump, x0, lo, hi)
        lap = np.array(res["exp_vt"])
        cv = np.array(res["v_t"]) - ev_exact
        cvc = cv - cv.mean()
        denom = float(np.dot(cvc, cvc))
        lam = -float(np.dot(lap - lap.mean(), cvc)) / denom if denom > 0 \
            else 0.0
        lap_rep = mean_report(lap + lam * cv)
        dual_ref = math.exp(-_dual_exponent_pairing(
            phi, t_end, law, p, beta, x0, lo, hi, dt=dt, h=h))
        mom = moment_diagnostic(res["sup_value"], theta, beta)
        rows.append({"m_space": p.m_space, "n_rate": p.n_rate,
                     "j_impact": p.j_impact, "k_density": p.k_density,
                     "replicates": reps,
                     "resid_mean": res["resid_mean"],
                     "resid_stderr": res["resid_stderr"],
                     "abs_z": abs(res["z"]),
                     "laplace_mc": lap_rep.mean,
                     "laplace_mc_stderr": lap_rep.stderr,
                     "laplace_dual": dual_ref,
                     "duality_residual": abs(lap_rep.mean - dual_ref),
                     "first_moment_z": mean_report(res["v_t"]).z_against(
                         ev_exact),
                     "moment_1ptheta": mom.mean,
                     "moment_stderr": mom.stderr,
                     "mean_events": res["mean_events"]})
    zs = [r["abs_z"] for r in rows]
    if any(b >= a for a, b in zip(zs, zs[1:])):
        failures.append(f"martingale |z| not strictly decreasing: {zs}")
    dres = [r["duality_residual"] for r in rows]
    if any(b >= a for a, b in zip(dres, dres[1:])):
        failures.append(f"duality residual not strictly decreasing: {dres}")
    moms = [r["moment_1ptheta"] for r in rows]
    for r in rows:
        r["passed"] = not failures
    summary = {"abs_z": zs, "duality_residuals": dres,
               "moment_values": moms, "theta": theta}
    return {"exp_martingale": rows}, failures, summary


# ---------------------------------------------------------------------------
# OracleCompare
# ---------------------------------------------------------------------------

def _run_oracle(spec: ExperimentSpec, workers: int, budget):
    s = spec.settings
    beta = float(s.get("beta", 0.5))
    kappa = float(s.get("kappa", 1.0))
    z0 = float(s.get("z0", 1.0))
    t = float(s.get("t", 1.0))
    thetas = tuple(s.get("thetas", (0.5, 1.0, 2.0)))
    epsilons = list(s.get("epsilons", (0.02, 0.01, 0.005)))
    z_max = float(s.get("z_max", 3.0))
    rows = []
    for eps in epsilons:
        for r in oracle.stable_total_mass_reference(
                beta, kappa, z0, t, spec.replicates, thetas=thetas,
                epsilon=eps, seed=spec.seed, label=f"{spec.name}-eps{eps}"):
            r["gap"] = abs(r["estimate"] - r["reference"])
            rows.append(r)
    failures = []
    smallest = [r for r in rows if r["epsilon"] == epsilons[-1]]
    worst = max(abs(r["z"]) for r in smallest)
    if worst > z_max:
        failures.append(f"CSBP mass law |z|={worst:.2f} > {z_max} at "
                        f"epsilon={epsilons[-1]}")
    for r in rows:
        r["passed"] = not failures
    summary = {"worst_z_smallest_eps": worst, "z_max": z_max}
    return {"oracle": rows}, failures, summary


# ---------------------------------------------------------------------------
# AnalyticChecks
# ---------------------------------------------------------------------------

def _run_analytic(spec: ExperimentSpec, workers: int, budget):
    s = spec.settings
    betas = list(s.get("betas", (0.1, 0.25, 0.5, 0.75, 0.9)))
    kappa_tol = float(s.get("kappa_tol", 1e-6))
    rows = []
    failures = []
    for b in betas:
        quad_val = analytic.stable_exponent_integral(b)
        closed = math.gamma(1.0 - b) / (b * (1.0 + b))
        err = abs(quad_val - closed)
        ok = err <= kappa_tol
        rows.append({"check": f"kappa0_beta_{b}", "value": quad_val,
                     "reference": closed, "error": err, "passed": ok})
        if not ok:
            failures.append(f"kappa0({b}) off by {err:.2e}")
    rep = analytic.dawson_inequalities(beta=s.get("dawson_beta", 0.5))
    ok_a = rep.part_a_violations == 0
    rows.append({"check": "quadratic_remainder_nonneg",
                 "value": float(rep.part_a_violations), "reference": 0.0,
                 "error": float(rep.part_a_violations), "passed": ok_a})
    if not ok_a:
        failures.append(f"{rep.part_a_violations} sign violations in the "
                        "quadratic remainder bound")
    c1_floor = float(s.get("c1_floor", 0.43))
    ok_c1 = rep.c1 >= c1_floor
    rows.append({"check": "tail_constant_c1", "value": rep.c1,
                 "reference": c1_floor, "error": max(0.0, c1_floor - rep.c1),
                 "passed": ok_c1})
    if not ok_c1:
        failures.append(f"tail constant c1={rep.c1:.4f} below {c1_floor}")
    ratio_err = abs(rep.small_x_ratio_limit - 0.5)
    ok_ratio = ratio_err <= 5e-4
    rows.append({"check": "small_x_taylor_ratio",
                 "value": rep.small_x_ratio_limit, "reference": 0.5,
                 "error": ratio_err, "passed": ok_ratio})
    if not ok_ratio:
        failures.append("small-x remainder ratio drifted from 1/2")
    summary = {"betas": betas, "c1": rep.c1, "c2": rep.c2}
    return {"analytic": rows}, failures, summary


# ---------------------------------------------------------------------------
# Dispatch
# ---------------------------------------------------------------------------

_RUNNERS = {
    "DualityTest": _run_duality,
    "CoalescenceScan": _run_coalescence,
    "ForwardLadder": _run_forward_ladder,
    "ExponentialMartingaleLadder": _run_exp_martingale,
    "OracleCompare": _run_oracle,
    "AnalyticChecks": _run_analytic,
}


def run_experiment(spec: ExperimentSpec, *, out_dir=None, workers: int = 1,
                   budget_events: int | None = None) -> StatReport:
    """Validate, dispatch, and optionally write report.json plus CSVs."""
    spec.validate()
    start = time.monotonic()
    tables, failures, summary = _RUNNERS[spec.kind](spec, max(1, workers),
                                                    budget_events)
    report = StatReport(name=spec.name, kind=spec.kind, seed=spec.seed,
                        passed=not failures, failures=failures,
                        summary=summary, tables=tables,
                        wall_time=time.monotonic() - start,
                        spec_dict=spec.to_dict())
    if out_dir is not None:
        write_artifacts(report, out_dir)
    return report
