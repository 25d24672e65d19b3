import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from rvprd.phase_space import (DomainOverflowError, Field, Grid, GridMismatchError, InitialDatum,
                               ParticleEnsemble, ResourceError, bare_mass, bump, deposit_moments,
                               evaluate_datum, sample_particles)


def test_bump_values():
    assert bump(np.array(0.0)) == 1.0
    assert bump(np.array(1.0)) == 0.0
    assert bump(np.array(1.5)) == 0.0
    assert math.isclose(float(bump(np.array(0.5))), math.exp(1 - 1 / 0.75), rel_tol=1e-15)


@given(st.floats(-3, 3))
def test_bump_range(s):
    v = float(bump(np.array(s)))
    assert 0.0 <= v <= 1.0
    if abs(s) >= 1:
        assert v == 0.0


def test_datum_point_values():
    d = InitialDatum()
    cx, cp = d.centers(1)
    assert evaluate_datum(d, cx, cp, 1) == d.amplitude
    edge = cx + np.array([d.rx, 0, 0])
    assert evaluate_datum(d, edge, cp, 1) == 0.0
    half = cx + np.array([0, d.rx / 2, 0])
    expected = d.amplitude * math.exp(1 - 1 / (1 - 0.25))
    assert math.isclose(float(evaluate_datum(d, half, cp, 1)), expected, rel_tol=1e-14)
    assert math.isclose(expected, d.amplitude * math.exp(-1 / 3), rel_tol=1e-14)


def test_datum_vanishes_outside_support_radius():
    d = InitialDatum()
    R0 = d.support_radius
    rng = np.random.default_rng(1)
    for species in (1, -1):
        u = rng.normal(size=(200, 3))
        u /= np.linalg.norm(u, axis=1)[:, None]
        x = u * R0 * rng.uniform(1.0, 2.0, (200, 1))
        p = rng.normal(size=(200, 3))
        assert np.all(evaluate_datum(d, x, p, species) == 0.0)
        assert np.all(evaluate_datum(d, p, x, species) == 0.0)


def test_mirror_and_layouts():
    d = InitialDatum()
    cx, cp = d.centers(-1)
    assert np.allclose(cx, -np.asarray(d.center_x)) and np.allclose(cp, -np.asarray(d.center_p))
    assert InitialDatum(layout="single").species_amplitude(-1) == 0.0
    with pytest.raises(ValueError):
        InitialDatum(layout="bogus")


def test_zero_datum_gives_empty_ensemble():
    e = sample_particles(InitialDatum().scaled(0.0), 1, 6)
    assert len(e) == 0 and e.mass == 0.0


def test_sampling_is_deterministic():
    a = sample_particles(InitialDatum(), -1, 6)
    b = sample_particles(InitialDatum(), -1, 6)
    assert np.array_equal(a.x, b.x) and np.array_equal(a.p, b.p) and np.array_equal(a.w, b.w)


def test_sampling_budget_and_minimum():
    with pytest.raises(ResourceError):
        sample_particles(InitialDatum(), 1, 12, budget=1000)
    with pytest.raises(ValueError):
        sample_particles(InitialDatum(), 1, 3)


@pytest.mark.slow
def test_total_weight_matches_l1_norm():
    d = InitialDatum()
    errs = []
    for m in (8, 16):
        e = sample_particles(d, 1, m)
        errs.append(abs(e.mass / d.l1_norm(1) - 1.0))
    assert errs[1] <= 1e-3
    assert errs[1] < errs[0]
    M = bare_mass(sample_particles(d, 1, 16), sample_particles(d, -1, 16))
    assert abs(M / d.pair_l1() - 1.0) <= 1e-3


def test_bare_mass_of_empty():
    z = ParticleEnsemble(1, np.zeros((0, 3)), np.zeros((0, 3)), np.zeros(0))
    assert bare_mass(z, ParticleEnsemble(-1, np.zeros((0, 3)), np.zeros((0, 3)), np.zeros(0))) == 0.0


def test_grid_geometry():
    g = Grid(2.0, 17)
    assert g.h == 0.25 and g.axis[0] == -2.0 and g.axis[-1] == 2.0
    with pytest.raises(ValueError):
        Grid(1.0, 4)


def test_field_arithmetic_requires_same_grid():
    a = Field(Grid(1.0, 16), np.ones((16, 16, 16)))
    b = Field(Grid(2.0, 16), np.ones((16, 16, 16)))
    with pytest.raises(GridMismatchError):
        a + b
    assert (a * 2.0).sup() == 2.0


def test_empty_deposit_is_zero():
    g = Grid(1.0, 16)
    e = ParticleEnsemble(1, np.zeros((0, 3)), np.zeros((0, 3)), np.zeros(0))
    rho, j = deposit_moments(e, g)
    assert not rho.values.any() and not j.values.any()


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 200), st.integers(0, 2 ** 32 - 1), st.sampled_from([2, 4, 5]))
def test_deposit_preserves_totals(count, seed, order):
    g = Grid(1.0, 16)
    rng = np.random.default_rng(seed)
    lim = g.L - 2 * g.h
    x = rng.uniform(-lim, lim, (count, 3))
    p = rng.normal(size=(count, 3))
    w = rng.uniform(0.1, 1.0, count)
    rho, j = deposit_moments(ParticleEnsemble(1, x, p, w), g, order=order)
    h3 = g.h ** 3
    assert math.isclose(h3 * rho.values.sum(), w.sum(), rel_tol=1e-12)
    assert np.allclose(h3 * j.values.reshape(3, -1).sum(axis=1), (w[:, None] * p).sum(axis=0),
                       rtol=1e-12, atol=1e-12 * np.abs(w[:, None] * p).sum())


def test_deposit_rejects_outside_particles():
    g = Grid(1.0, 16)
    e = ParticleEnsemble(1, np.array([[0.99, 0, 0]]), np.zeros((1, 3)), np.ones(1))
    with pytest.raises(DomainOverflowError):
        deposit_moments(e, g)
