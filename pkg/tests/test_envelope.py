import math

import numpy as np
from hypothesis import given, settings, strategies as st

from rvprd.envelope import SupportEnvelope, envelope_for_datum, envelope_constants, ode_blowup_time, support_envelope
from rvprd.phase_space import InitialDatum


def test_default_constants():
    env = envelope_for_datum(InitialDatum())
    assert env.R0 == 1.25
    assert math.isclose(env.C1, 1.0665178, rel_tol=1e-6)
    assert math.isclose(env.C2, 0.0144524, rel_tol=1e-5)
    assert env.C3 == env.C1
    assert math.isclose(env.a, 0.117447, rel_tol=1e-5)


def test_constant_formulas():
    c1, c2, c3 = envelope_constants(2.0, 3.0)
    assert math.isclose(c1, 3 * (2 * math.pi) ** 1.5 * 2 ** (2 / 3) * 3 ** (1 / 3), rel_tol=1e-15)
    assert math.isclose(c2, 8 * math.pi * 6, rel_tol=1e-15)
    assert c3 == max(c1, c2)


def test_zero_constant_limit():
    env = support_envelope(0.0, 0.0, 2.0)
    assert env.a == math.inf
    assert env.P(5.0) == 2.0
    assert env.X(3.0) == 8.0


def test_blowup_time_matches_ode():
    env = envelope_for_datum(InitialDatum())
    assert abs(ode_blowup_time(env) - env.a) <= 1e-6 * env.a


def test_initial_values_and_blowup():
    env = envelope_for_datum(InitialDatum())
    assert env.P(0.0) == env.R0 and env.X(0.0) == env.R0
    assert env.P(env.a) == math.inf
    # near blow-up P^3 ~ 1 / (3 C3 (a - t))
    gap = 1e-7 * env.a
    assert math.isclose(env.P(env.a - gap), (3 * env.C3 * gap) ** (-1 / 3), rel_tol=1e-3)


@settings(max_examples=30, deadline=None)
@given(st.floats(0.01, 5.0), st.floats(0.1, 10.0), st.floats(0.0, 0.98))
def test_implicit_relation_and_shape(C3, R0, frac):
    env = SupportEnvelope(R0, C3, 0.0, C3)
    t = frac * env.a
    P = env.P(t)
    lhs = 1 / R0 - 1 / P - (math.atan(P) - math.atan(R0))
    assert math.isclose(lhs, C3 * t, rel_tol=1e-9, abs_tol=1e-12)
    ts = np.linspace(0.0, max(t, 1e-9), 7)
    Ps = env.P(ts)
    assert np.all(np.diff(Ps) > 0) or t == 0.0
    assert np.all(np.diff(Ps, 2) >= -1e-9 * Ps.max())
    assert np.all(np.diff(env.X(ts)) >= 0)


def test_x_is_integral_of_p():
    env = envelope_for_datum(InitialDatum())
    from scipy import integrate
    T = 0.5 * env.a
    val = integrate.quad(lambda s: env.P(s), 0, T, epsabs=1e-13, epsrel=1e-12)[0]
    assert math.isclose(env.X(T), env.R0 + val, rel_tol=1e-10)
