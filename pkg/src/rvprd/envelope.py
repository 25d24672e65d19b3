"""Support envelope: the maximal solution of P' = C3 (P^2 + P^4), P(0) = R0.

Separating variables gives the implicit form
    1/R0 - 1/P - (arctan P - arctan R0) = C3 t,
which is monotone in P, so P(t) follows by bracketing root search.  The
blow-up time is a = (1/R0 + arctan R0 - pi/2) / C3 and
X(t) = R0 + int_0^t P = R0 + [ln(P/R0) - ln((1+P^2)/(1+R0^2))/2] / C3.
"""
from dataclasses import dataclass
import math

import numpy as np
from scipy import integrate, optimize

C_CZ = 4.0 * math.pi


def envelope_constants(sup_norm, l1_norm):
    """(C1, C2, C3) from the pair sup and L1 norms of the initial datum."""
    c1 = 3.0 * (2.0 * math.pi) ** 1.5 * sup_norm ** (2.0 / 3.0) * l1_norm ** (1.0 / 3.0)
    c2 = 2.0 * C_CZ * sup_norm * l1_norm
    return c1, c2, max(c1, c2)


def _G(P, R0):
    return 1.0 / R0 - 1.0 / P - (math.atan(P) - math.atan(R0))


@dataclass(frozen=True)
class SupportEnvelope:
    R0: float
    C1: float
    C2: float
    C3: float

    @property
    def a(self):
        if self.C3 == 0.0:
            return math.inf
        return (1.0 / self.R0 + math.atan(self.R0) - 0.5 * math.pi) / self.C3

    def P(self, t):
        """Envelope momentum radius; accepts scalars or arrays, inf at t >= a."""
        t_arr = np.asarray(t, dtype=float)
        out = np.empty_like(t_arr)
        for i, ti in np.ndenumerate(t_arr):
            out[i] = self._P_scalar(float(ti))
        return out if t_arr.ndim else float(out)

    def _P_scalar(self, t):
        if t < 0:
            raise ValueError("envelope is defined for t >= 0")
        if self.C3 == 0.0 or t == 0.0:
            return self.R0
        if t >= self.a:
            return math.inf
        target = self.C3 * t
        # G(P) increases from 0 at R0 to C3*a as P -> inf; bracket by doubling
        hi = 2.0 * self.R0
        while _G(hi, self.R0) < target:
            hi *= 2.0
            if hi > 1e300:
                return math.inf
        return optimize.brentq(lambda P: _G(P, self.R0) - target, self.R0, hi,
                               xtol=1e-15 * hi, rtol=4 * np.finfo(float).eps, maxiter=500)

    def X(self, t):
        t_arr = np.asarray(t, dtype=float)
        if self.C3 == 0.0:
            out = self.R0 * (1.0 + t_arr)
            return out if t_arr.ndim else float(out)
        P = np.asarray(self.P(t_arr), dtype=float)
        R0 = self.R0
        with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
            out = R0 + (np.log(P / R0) - 0.5 * np.log((1.0 + P * P) / (1.0 + R0 * R0))) / self.C3
        return out if t_arr.ndim else float(out)

    def table(self, T, count=101):
        t = np.linspace(0.0, T, count)
        return t, np.asarray(self.P(t)), np.asarray(self.X(t))


def support_envelope(sup_norm, l1_norm, R0):
    """Envelope from pair norms (sum over both species) and support radius R0."""
    if sup_norm < 0 or l1_norm < 0 or R0 <= 0:
        raise ValueError("norms must be non-negative and R0 positive")
    c1, c2, c3 = envelope_constants(sup_norm, l1_norm)
    return SupportEnvelope(float(R0), c1, c2, c3)


def envelope_for_datum(datum):
    return support_envelope(datum.pair_sup(), datum.pair_l1(), datum.support_radius)


def ode_blowup_time(envelope, threshold=1e4, rtol=1e-13, atol=1e-14):
    """Independent estimate of the blow-up time by integrating the ODE directly.

    Integrates in the variable Q = 1/P (which reaches 0 at blow-up) with DOP853
    and stops at Q = 1/threshold; the remaining time to Q = 0 is the tail
    integral int_0^Q q^2 / (C3 (1 + q^2)) dq.
    """
    C3, R0 = envelope.C3, envelope.R0
    if C3 == 0.0:
        return math.inf

    def rhs(t, y):
        Q = y[0]
        return [-C3 * (1.0 + Q * Q) / (Q * Q)]

    def hit(t, y):
        return y[0] - 1.0 / threshold
    hit.terminal = True
    hit.direction = -1
    sol = integrate.solve_ivp(rhs, (0.0, 10.0 * envelope.a + 10.0), [1.0 / R0], method="DOP853",
                              events=hit, rtol=rtol, atol=atol)
    if not sol.t_events[0].size:
        raise RuntimeError("ODE integration did not reach the blow-up threshold")
    t_hit = sol.t_events[0][0]
    Q = 1.0 / threshold
    # remaining time: int_0^Q q^2/(C3 (1+q^2)) dq
    return t_hit + (Q - math.atan(Q)) / C3
