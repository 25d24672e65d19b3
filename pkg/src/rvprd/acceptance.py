"""Invariant suite: eleven numbered checks run by ``rvprd selftest`` and the test suite.

Expensive default-resolution runs are shared between checks through ``Campaign``.
"""
from dataclasses import dataclass, field
import json
import math
import os
from pathlib import Path
import subprocess
import sys
import tempfile
import time

import numpy as np

from .config import RunConfig
from .diagnostics import (CheckResult, chain_residuals, convergence_report, dissipation_residual,
                          envelope_check, field_bound_check, mass_check, monotone_energy)
from .dynamics import picard_floor, picard_solve, resolve, run
from .envelope import envelope_for_datum, ode_blowup_time
from .field_solver import field_direct_oracle, solve_field_spectral
from .io import fmt, MOMENT_COLUMNS
from .phase_space import Field, Grid, bump, bump_derivative
from .singular_operator import C_CZ, apply_H_quadrature, apply_H_spectral

SWEEP = (0.0, 0.1, 0.5, 1.0)
ORDER_FACTOR = 3.5


def radial_profile(grid, radius, power):
    """bump(r/R)^power and its gradient on the grid nodes."""
    X, Y, Z = grid.mesh()
    r = np.sqrt(X * X + Y * Y + Z * Z)
    b = bump(r / radius)
    rs = np.where(r > 0, r, 1.0)
    d = power * b ** (power - 1) * bump_derivative(r / radius) / radius / rs
    return b ** power, np.stack([d * X, d * Y, d * Z])


def enclosed_charge(radii, radius, power, nodes=20):
    """int_0^s 4 pi u^2 bump(u/R)^power du at each s.

    Gauss-Legendre on every gap between consecutive distinct radii, then a
    cumulative sum; the gaps are at most one grid spacing wide.
    """
    s = np.unique(np.minimum(radii, radius))
    lo = np.r_[0.0, s[:-1]]
    xg, wg = np.polynomial.legendre.leggauss(nodes)
    mid, half = 0.5 * (s + lo), 0.5 * (s - lo)
    u = mid[:, None] + half[:, None] * xg[None, :]
    f = 4.0 * math.pi * u * u * bump(u / radius) ** power
    table = np.cumsum(half * (f @ wg))
    return table[np.searchsorted(s, np.minimum(radii, radius))]


def _render(records):
    lines = [",".join(MOMENT_COLUMNS)]
    lines += [",".join(fmt(v) for v in r.row()) for r in records]
    return "\n".join(lines) + "\n"


@dataclass
class Campaign:
    """Default-resolution runs shared across checks, keyed by their configuration."""
    base: RunConfig = field(default_factory=lambda: RunConfig(field_check=True))
    cache: dict = field(default_factory=dict)

    def dt0(self):
        return resolve(self.base.replace(epsilon=1.0)).dt

    def run(self, **changes):
        cfg = self.base.replace(**changes)
        key = cfg.to_json()
        if key not in self.cache:
            t0 = time.perf_counter()
            res = run(cfg)
            res.seconds = time.perf_counter() - t0
            res.final = None  # keep only the records; particle states are large
            self.cache[key] = res
        return self.cache[key]

    def sweep_run(self, eps, level=0, mode="rvprd"):
        if level == 0:
            return self.run(epsilon=eps, mode=mode)
        return self.run(epsilon=eps, mode=mode, dt=self.dt0() / 2 ** level, field_check=False)


def check_h_eigen():
    t0 = time.perf_counter()
    g = Grid(1.0, 64)
    _, dphi = radial_profile(g, 0.5, 6)
    j = Field(g, dphi)
    rel = (apply_H_spectral(j) - j * C_CZ).l2() / j.l2()
    g48 = Grid(1.0, 48)
    j48 = Field(g48, radial_profile(g48, 0.5, 6)[1])
    S = apply_H_spectral(j48)
    quad = (apply_H_quadrature(j48, 4 * g48.h) - S).l2() / S.l2()
    secs = time.perf_counter() - t0
    ok = rel <= 1e-4 and quad <= 3e-2 and secs <= 30
    return CheckResult("1_H_eigenrelation", "pass" if ok else "fail", rel,
                       detail={"spectral_rel_l2": rel, "quadrature_vs_spectral": quad, "seconds": secs})


def random_current(grid, rng):
    """Smooth compact vector field: a few random bumps inside |x| < L/2."""
    X, Y, Z = grid.mesh()
    j = np.zeros((3,) + X.shape)
    for _ in range(rng.integers(1, 4)):
        R = rng.uniform(0.1, 0.2) * grid.L
        c = rng.uniform(-1, 1, 3) * (0.5 * grid.L - R) / math.sqrt(3)
        r = np.sqrt((X - c[0]) ** 2 + (Y - c[1]) ** 2 + (Z - c[2]) ** 2)
        b = bump(r / R) ** int(rng.integers(1, 4))
        j += rng.normal(size=3)[:, None, None, None] * b
    return Field(grid, j)


def check_l2_bound(count=10, seed=0):
    rng = np.random.default_rng(seed)
    g = Grid(1.0, 32)
    worst = 0.0
    for _ in range(count):
        j = random_current(g, rng)
        worst = max(worst, apply_H_spectral(j).l2() / (C_CZ * j.l2()))
    ok = worst <= 1.0 + 1e-10
    return CheckResult("2_H_L2_bound", "pass" if ok else "fail", worst, detail={"max_ratio": worst})


def check_shell(seed=0, points=64):
    g = Grid(1.0, 64)
    rho_v, _ = radial_profile(g, 0.5, 6)
    E = solve_field_spectral(Field(g, rho_v)).values
    r = g.radius()
    X, Y, Z = g.mesh()
    Q = enclosed_charge(r.ravel(), 0.5, 6).reshape(r.shape)
    away = r > 2 * g.h
    exact = np.zeros_like(E)
    for a, c in enumerate((X, Y, Z)):
        exact[a][away] = Q[away] * c[away] / r[away] ** 3
    shell = float(np.abs(E - exact)[:, away].max() / np.sqrt((exact ** 2).sum(axis=0)).max())

    g32 = Grid(1.0, 32)
    rho32 = Field(g32, radial_profile(g32, 0.5, 6)[0])
    E32 = solve_field_spectral(rho32)
    idx = np.random.default_rng(seed).integers(2, 30, size=(points, 3))
    direct = field_direct_oracle(rho32, g32.axis[idx])
    grid_vals = E32.values[:, idx[:, 0], idx[:, 1], idx[:, 2]].T
    dsum = float(np.linalg.norm(direct - grid_vals, axis=1).max() / E32.sup())
    ok = shell <= 1e-4 and dsum <= 1e-2
    return CheckResult("3_shell_theorem", "pass" if ok else "fail", shell,
                       detail={"shell_rel_linf": shell, "direct_sum_rel": dsum})


def check_field_bound(c):
    worst = 0.0
    ok = True
    for eps in SWEEP:
        res = field_bound_check(c.sweep_run(eps).records)
        worst = max(worst, res.max_residual)
        ok &= res.passed
    return CheckResult("4_field_sup_bound", "pass" if ok else "fail", worst, detail={"max_ratio": worst})


def check_mass(c):
    dev = max(mass_check(c.sweep_run(eps).records).max_residual for eps in SWEEP)
    return CheckResult("5_mass", "pass" if dev <= 1e-14 else "fail", dev)


def _factors(errors):
    return [errors[i] / errors[i + 1] if errors[i + 1] > 0 else math.inf for i in range(len(errors) - 1)]


def check_dissipation(c):
    detail = {}
    ok = True
    worst = 0.0
    secs = 0.0
    for eps in SWEEP[1:]:
        errs, mono = [], []
        for level in range(3):
            res = c.sweep_run(eps, level)
            r = dissipation_residual(res.records, eps)
            errs.append(float(np.abs(r).max()))
            mono.append(monotone_energy(res.records, eps)[0])
            secs += res.seconds
        f = _factors(errs)
        ok &= min(f) >= ORDER_FACTOR and max(mono) <= 1.0
        worst = max(worst, errs[0])
        detail[f"eps={eps}"] = {"max_residual": errs, "factors": f, "max_normalised_increase": max(mono)}
    detail["seconds"] = secs
    ok &= secs <= 300
    order = min(min(v["factors"]) for k, v in detail.items() if k.startswith("eps"))
    return CheckResult("6_dissipation_law", "pass" if ok else "fail", worst, math.log2(order), detail)


def check_chain(c, eps=1.0):
    errs = []
    for level in range(3):
        recs = c.sweep_run(eps, level).records
        errs.append([float(x.max()) for x in chain_residuals(recs, eps, recs[0].M)])
    errs = np.array(errs)
    factors = [_factors(errs[:, k]) for k in range(3)]
    worst = min(min(f) for f in factors)
    ok = worst >= ORDER_FACTOR
    return CheckResult("7_dipole_chain", "pass" if ok else "fail", float(errs[0].max()), math.log2(worst),
                       {"residuals": errs.tolist(), "factors": factors})


def check_envelope(c):
    env = envelope_for_datum(c.base.datum.build())
    ok = True
    margin = math.inf
    for eps in SWEEP:
        rep = envelope_check(c.sweep_run(eps).records, env)
        ok &= rep.passed
        margin = min(margin, float(rep.p_margin.min()), float(rep.x_margin.min()))
    a_ode = ode_blowup_time(env)
    rel = abs(a_ode - env.a) / env.a
    ok &= rel <= 1e-6
    return CheckResult("8_envelope", "pass" if ok else "fail", rel,
                       detail={"min_margin": margin, "a": env.a, "a_ode": a_ode, "a_rel_diff": rel})


def check_picard(c):
    cfg = c.base.replace(epsilon=1.0)
    rep = picard_solve(cfg)
    alpha = np.array(rep.alpha)
    floor = picard_floor(rep)
    summ = convergence_report(rep)
    dec = all(alpha[n + 1] < alpha[n] if alpha[n] > floor else alpha[n + 1] <= floor
              for n in range(2, min(8, len(alpha) - 1)))
    res = summ.residuals[2:summ.resolved]
    dominated = bool(np.all(res[np.isfinite(res)] <= 1e-12))
    sym = picard_solve(RunConfig(m=6, grid={"n": 32}, epsilon=1.0, datum={"layout": "identical"}))
    exact = all(a == 0.0 for a in sym.alpha[2:])
    # Picard limit against the time-stepped run at the Picard horizon
    D2r = c.run(epsilon=1.0, T=rep.T, field_check=False).records[-1].dipoles.D2
    d2_rel = float(np.linalg.norm(rep.D2[-1] - D2r) / np.linalg.norm(D2r))
    ok = dec and dominated and not summ.super_envelope and exact and d2_rel <= 1e-2
    return CheckResult("9_picard_contraction", "pass" if ok else "fail", float(alpha[2]) if len(alpha) > 2 else 0.0,
                       detail={"alpha": alpha.tolist(), "floor": floor, "fitted_C3T": summ.fitted_C3T,
                               "decreasing": dec, "envelope_dominates": dominated,
                               "super_envelope": summ.super_envelope, "symmetric_exact": exact,
                               "D2_rel_vs_run": d2_rel})


def check_modes(c):
    texts = [_render(c.sweep_run(0.0).records), _render(c.sweep_run(0.0, mode="reduction21").records),
             _render(c.sweep_run(0.0, mode="vlasov_poisson").records)]
    same = texts[0] == texts[1] == texts[2]
    recs = c.sweep_run(1.0, mode="reduction21").records
    worst, r = monotone_energy(recs, 1.0)
    ok = same and worst <= 1.0
    return CheckResult("10_mode_coincidence", "pass" if ok else "fail", float(np.abs(r).max()),
                       detail={"identical": same, "max_normalised_increase": worst})


def check_threads(threads=(1, 2, 8), config=None):
    cfg = config or RunConfig(epsilon=1.0)
    outputs = []
    with tempfile.TemporaryDirectory() as tmp:
        path = Path(tmp) / "config.json"
        path.write_text(cfg.to_json())
        for i, count in enumerate(threads + threads[:1]):
            out = Path(tmp) / f"out{i}"
            env = {**os.environ, "RVPRD_THREADS": str(count)}
            proc = subprocess.run([sys.executable, "-m", "rvprd.cli", "solve", "--config", str(path), "--out", str(out)],
                                  env=env, capture_output=True, text=True)
            if proc.returncode not in (0, 1):
                return CheckResult("11_determinism", "fail", math.nan, detail={"stderr": proc.stderr[-2000:]})
            outputs.append((out / "moments.csv").read_bytes())
    same = all(o == outputs[0] for o in outputs)
    return CheckResult("11_determinism", "pass" if same else "fail", 0.0 if same else 1.0,
                       detail={"threads": list(threads), "runs": len(outputs), "identical": same})


def describe(res):
    d = json.dumps(res.detail, default=lambda v: None if v is None else float(v))
    return f"[{res.status.upper()}] {res.check}: max_residual={res.max_residual:.3e} {d}"


def run_all(progress=print):
    c = Campaign()
    checks = [check_h_eigen, check_l2_bound, check_shell, lambda: check_field_bound(c), lambda: check_mass(c),
              lambda: check_dissipation(c), lambda: check_chain(c), lambda: check_envelope(c),
              lambda: check_picard(c), lambda: check_modes(c), check_threads]
    results = []
    for fn in checks:
        res = fn()
        results.append(res)
        if progress is not None:
            progress(describe(res))
    return results
