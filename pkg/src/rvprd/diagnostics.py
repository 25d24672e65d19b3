"""Energies, identity residuals and pass/fail reports computed from record series."""
from dataclasses import dataclass, field, asdict
import math

import numpy as np


class CadenceError(ValueError):
    pass


@dataclass
class CheckResult:
    check: str
    status: str
    max_residual: float
    order_estimate: float | None = None
    detail: dict = field(default_factory=dict)

    @property
    def passed(self):
        return self.status == "pass"

    def to_json(self):
        d = {"check": self.check, "status": self.status, "max_residual": _finite(self.max_residual),
             "order_estimate": _finite(self.order_estimate)}
        return d


def _finite(v):
    if v is None:
        return None
    v = float(v)
    return v if math.isfinite(v) else None


def schott_energy(E_kin, E_field, D1, D2, eps, M):
    """E_kin + E_field - eps D1.D2 + (eps^2 M / 2) |D2|^2."""
    D1 = np.asarray(D1, dtype=float)
    D2 = np.asarray(D2, dtype=float)
    return float(E_kin + E_field - eps * float(D1 @ D2) + 0.5 * eps * eps * M * float(D2 @ D2))


def _spacing(series):
    if len(series) < 3:
        raise CadenceError(f"need at least 3 records, got {len(series)}")
    t = np.array([r.t for r in series])
    dt = np.diff(t)
    if not np.allclose(dt, dt[0], rtol=1e-9, atol=0.0) or dt[0] <= 0:
        raise CadenceError("records are not uniformly spaced in time")
    return t, float(dt[0])


def dissipation_residual(series, eps):
    """r_k = (E(t_{k+1}) - E(t_k))/dt + eps |D2(t_{k+1/2})|^2, D2 midpoint by averaging.

    E is the energy column of the records: the modified energy for rvprd and the
    plain energy for the 2+1 reduction.
    """
    _, dt = _spacing(series)
    E = np.array([r.E_schott for r in series])
    D2 = np.array([r.dipoles.D2 for r in series])
    mid = 0.5 * (D2[1:] + D2[:-1])
    return np.diff(E) / dt + eps * (mid * mid).sum(axis=1)


def chain_residuals(series, eps, M):
    """Centred-difference residuals of D' = D1, D1' = D2 + eps M D3, D2' = D3 (max norm)."""
    _, dt = _spacing(series)
    D = np.array([r.dipoles.D for r in series])
    D1 = np.array([r.dipoles.D1 for r in series])
    D2 = np.array([r.dipoles.D2 for r in series])
    D3 = np.array([r.dipoles.D3 for r in series])

    def cd(a):
        return (a[2:] - a[:-2]) / (2.0 * dt)
    r0 = np.abs(cd(D) - D1[1:-1]).max(axis=1)
    r1 = np.abs(cd(D1) - (D2 + eps * M * D3)[1:-1]).max(axis=1)
    r2 = np.abs(cd(D2) - D3[1:-1]).max(axis=1)
    return r0, r1, r2


def order_estimate(errors):
    """Improvement factors and observed orders for errors at dt, dt/2, dt/4, ..."""
    e = np.asarray(errors, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        factors = e[:-1] / e[1:]
    orders = np.log2(factors)
    return factors, orders


@dataclass
class EnvelopeReport:
    passed: bool
    p_margin: np.ndarray
    x_margin: np.ndarray
    first_failure: int | None


def envelope_check(series, envelope):
    """max|p_i| <= P(t) and max|x_i| <= X(t) on every record; margins are P - max|p|, X - max|x|."""
    t = np.array([r.t for r in series])
    P = np.asarray(envelope.P(t), dtype=float).reshape(-1)
    X = np.asarray(envelope.X(t), dtype=float).reshape(-1)
    pm = P - np.array([r.max_p for r in series])
    xm = X - np.array([r.max_x for r in series])
    bad = np.nonzero((pm < 0) | (xm < 0))[0]
    return EnvelopeReport(not bad.size, pm, xm, int(bad[0]) if bad.size else None)


@dataclass
class ConvergenceSummary:
    exact: bool
    fitted_C3T: float
    log_C: float
    ratios: np.ndarray
    envelope: np.ndarray
    residuals: np.ndarray
    super_envelope: bool
    floor: float
    resolved: int


def factorial_envelope(n, log_C, C3T, T):
    """C (C3 T)^(n-1) / (n-1)! * T, evaluated for n >= 1."""
    n = np.asarray(n, dtype=float)
    return np.exp(log_C + (n - 1) * math.log(C3T) - np.array([math.lgamma(k) for k in n]) + math.log(T))


def convergence_report(report, T=None, floor=None):
    """Fit alpha_n (n >= 1) to C (C3 T)^(n-1)/(n-1)! T as an upper envelope.

    C3 T is taken as the largest n*alpha_{n+1}/alpha_n over the first resolved
    ratios (n = 1, 2); C is then the smallest constant making the envelope
    dominate every resolved alpha_n.  Values at or below ``floor`` are treated
    as converged to rounding and excluded from the fit.
    """
    from .dynamics import picard_floor
    alpha = np.asarray(report.alpha, dtype=float)
    T = report.T if T is None else T
    floor = picard_floor(report) if floor is None else floor
    if len(alpha) < 4:
        raise ValueError("convergence_report needs at least 4 iterations")
    if not np.any(alpha[1:] > 0):
        return ConvergenceSummary(True, 0.0, -math.inf, np.zeros(len(alpha) - 1), np.zeros(len(alpha)),
                                  np.zeros(len(alpha)), False, floor, 0)
    n = np.arange(len(alpha))
    with np.errstate(divide="ignore", invalid="ignore"):
        ratios = alpha[1:] / alpha[:-1]
    resolved = alpha > floor
    nres = int(np.argmin(resolved[1:])) + 1 if not resolved[1:].all() else len(alpha)
    cand = [k * ratios[k] for k in (1, 2) if k + 1 < nres]
    C3T = max(cand) if cand else (ratios[1] if nres > 2 else 1.0)
    C3T = max(C3T, np.finfo(float).tiny)
    idx = np.arange(1, nres)
    base = factorial_envelope(idx, 0.0, C3T, T)
    log_C = float(np.max(np.log(alpha[idx]) - np.log(base))) if idx.size else 0.0
    env = np.full(len(alpha), np.nan)
    env[1:] = factorial_envelope(n[1:], log_C, C3T, T)
    res = np.full(len(alpha), np.nan)
    res[idx] = np.log(alpha[idx]) - np.log(env[idx])
    # growth beyond the envelope: a resolved ratio above 1.5 * C3T / n for n >= 3
    sup = any(ratios[k] > 1.5 * C3T / k for k in range(3, nres - 1))
    return ConvergenceSummary(False, float(C3T), log_C, ratios, env, res, bool(sup), floor, nres)


def mass_check(series, tol=1e-14):
    M = np.array([r.M for r in series])
    dev = float(np.abs(M / M[0] - 1.0).max()) if M.size and M[0] else 0.0
    return CheckResult("mass", "pass" if dev <= tol else "fail", dev)


def field_bound_check(series, slack=1.01):
    """max_node |E| <= B on every record carrying the node-field check."""
    rows = [(r.field_max, r.field_bound) for r in series if math.isfinite(r.field_max)]
    if not rows:
        return CheckResult("field_bound", "skip", float("nan"))
    ratio = max(fm / fb if fb > 0 else (0.0 if fm == 0 else math.inf) for fm, fb in rows)
    return CheckResult("field_bound", "pass" if ratio <= slack else "fail", ratio)


def envelope_result(series, envelope):
    rep = envelope_check(series, envelope)
    worst = float(min(rep.p_margin.min(), rep.x_margin.min())) if len(series) else 0.0
    return CheckResult("envelope", "pass" if rep.passed else "fail", worst,
                       detail={"first_failure": rep.first_failure})


def monotone_energy(series, eps):
    """Energy steps bounded by the residual scale: E_{k+1} - E_k <= dt max|r|.

    Returns the largest normalised increase (E_{k+1} - E_k)/(dt max|r|) and
    the residuals; the series is monotone up to residual scale iff it is <= 1.
    """
    _, dt = _spacing(series)
    r = dissipation_residual(series, eps)
    E = np.array([x.E_schott for x in series])
    scale = float(np.abs(r).max()) * dt
    rounding = 64 * np.finfo(float).eps * float(np.abs(E).max())
    worst = float((np.diff(E) / max(scale + rounding, np.finfo(float).tiny)).max())
    return worst, r


def dissipation_result(series, eps):
    if len(series) < 3:
        return CheckResult("dissipation", "skip", float("nan"))
    worst, r = monotone_energy(series, eps)
    return CheckResult("dissipation", "pass" if worst <= 1.0 else "fail", float(np.abs(r).max()),
                       detail={"max_normalised_increase": worst})


def chain_result(series, eps, M):
    if len(series) < 3:
        return CheckResult("chain", "skip", float("nan"))
    res = [float(x.max()) for x in chain_residuals(series, eps, M)]
    ok = all(math.isfinite(v) for v in res)
    return CheckResult("chain", "pass" if ok else "fail", max(res), detail={"components": res})


def run_checks(series, envelope, eps):
    """Checks attached to a single run: mass, node-field bound, envelope, energy, dipole chain."""
    out = [mass_check(series), field_bound_check(series), envelope_result(series, envelope)]
    M = series[0].M if series else 0.0
    out += [dissipation_result(series, eps), chain_result(series, eps, M)]
    return out


def all_passed(results):
    return all(r.status != "fail" for r in results)
