import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from rvprd.acceptance import radial_profile, random_current
from rvprd.field_solver import solve_field_spectral
from rvprd.phase_space import Field, Grid
from rvprd.singular_operator import (C_CZ, ResolutionError, apply_H_quadrature, apply_H_spectral, d3_total,
                                     low_moments)


def zero(grid, k=3):
    return Field(grid, np.zeros((k,) + (grid.n,) * 3))


def test_zero_current():
    g = Grid(1.0, 16)
    assert not apply_H_spectral(zero(g)).values.any()
    assert not apply_H_quadrature(zero(g), 2 * g.h).values.any()


def test_gradient_eigenrelation():
    g = Grid(1.0, 64)
    j = Field(g, radial_profile(g, 0.5, 6)[1])
    assert (apply_H_spectral(j) - j * C_CZ).l2() / j.l2() <= 1e-4


def test_divergence_free_is_annihilated():
    g = Grid(1.0, 64)
    _, dA = radial_profile(g, 0.5, 6)
    j = Field(g, np.stack([dA[1], -dA[0], np.zeros_like(dA[0])]))
    assert apply_H_spectral(j).l2() / j.l2() <= 1e-4


def test_quadrature_agrees_with_spectral():
    g = Grid(1.0, 48)
    j = Field(g, radial_profile(g, 0.5, 6)[1])
    S = apply_H_spectral(j)
    assert (apply_H_quadrature(j, 4 * g.h) - S).l2() / S.l2() <= 3e-2


def test_constant_ball_centre_value():
    # the principal-value kernel sums to zero over any cubically symmetric set
    g = Grid(1.0, 33)
    c = np.array([1.0, -2.0, 0.5])
    ball = (g.radius() < 0.4).astype(float)
    j = Field(g, c[:, None, None, None] * ball)
    for rich in (True, False):
        H = apply_H_quadrature(j, 2 * g.h, richardson=rich).values[:, 16, 16, 16]
        assert np.allclose(H, 4 * math.pi / 3 * c, rtol=1e-12, atol=1e-12)


def test_quadrature_resolution_guard():
    g = Grid(1.0, 16)
    with pytest.raises(ResolutionError):
        apply_H_quadrature(zero(g), g.h)


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 2 ** 32 - 1))
def test_l2_bound_and_symmetry(seed):
    g = Grid(1.0, 16)
    rng = np.random.default_rng(seed)
    j, k = random_current(g, rng), random_current(g, rng)
    Hj, Hk = apply_H_spectral(j), apply_H_spectral(k)
    assert Hj.l2() <= C_CZ * j.l2() * (1 + 1e-10)
    # H is a non-negative self-adjoint multiplier on the padded lattice; cropping keeps <Hj, j> >= 0
    assert (Hj.values * j.values).sum() >= -1e-12 * Hj.l2() * j.l2() / g.h ** 3
    a, b = rng.normal(size=2)
    lin = apply_H_spectral(j * a + k * b).values
    assert np.allclose(lin, a * Hj.values + b * Hk.values, atol=1e-12 * np.abs(lin).max())


def test_d3_vanishes_for_identical_species():
    g = Grid(1.0, 32)
    rho = Field(g, radial_profile(g, 0.4, 2)[0])
    j = Field(g, radial_profile(g, 0.4, 3)[1])
    assert np.abs(d3_total(rho, rho, j, j)).max() == 0.0


def test_d3_closed_form_on_gradient():
    g = Grid(1.0, 64)
    phi, dphi = radial_profile(g, 0.5, 6)
    X = g.mesh()[0]
    rho_p = Field(g, phi * (1 + X))
    j_m = Field(g, dphi)
    D3 = d3_total(rho_p, zero(g, 1), zero(g), j_m)
    ref = 8 * math.pi * g.h ** 3 * (rho_p.values * dphi).reshape(3, -1).sum(axis=1)
    assert np.linalg.norm(D3 - ref) <= 1e-3 * np.linalg.norm(ref)


def test_d3_l2_bound():
    g = Grid(1.0, 32)
    rng = np.random.default_rng(5)
    for _ in range(3):
        rp, rm = (Field(g, np.abs(random_current(g, rng).values[:1])) for _ in range(2))
        jp, jm = random_current(g, rng), random_current(g, rng)
        D3 = d3_total(rp, rm, jp, jm)
        bound = 2 * C_CZ * (rp.l2() * jm.l2() + rm.l2() * jp.l2())
        assert np.linalg.norm(D3) <= bound


def test_low_moments_zero_and_parity():
    g = Grid(1.0, 32)
    z1, z3 = zero(g, 1), zero(g)
    m = low_moments(z1, z1, z3, z3, z3)
    assert not np.concatenate([m.D, m.D1, m.D2, m.D3]).any()
    rho = Field(g, radial_profile(g, 0.4, 2)[0])
    E = solve_field_spectral(rho)
    m = low_moments(rho, z1, z3, z3, E)
    scale = g.h ** 3 * rho.values.sum()
    assert np.abs(m.D).max() <= 1e-15 * scale and not m.D1.any()
    assert np.abs(m.D2).max() <= 1e-12 * scale * E.sup()


def test_dipole_translation():
    g = Grid(1.0, 32)
    shift = 4 * g.h
    X = g.mesh()[0]
    r_shift = np.sqrt((X - shift) ** 2 + g.mesh()[1] ** 2 + g.mesh()[2] ** 2)
    from rvprd.phase_space import bump
    base = Field(g, bump(g.radius() / 0.3) ** 2)
    moved = Field(g, bump(r_shift / 0.3) ** 2)
    z1, z3 = zero(g, 1), zero(g)
    q = g.h ** 3 * base.values.sum()
    D0 = low_moments(base, z1, z3, z3, z3).D
    D1 = low_moments(moved, z1, z3, z3, z3).D
    assert np.allclose(D1 - D0, [shift * q, 0, 0], atol=1e-13)
