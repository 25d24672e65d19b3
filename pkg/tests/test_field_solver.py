import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from rvprd.acceptance import enclosed_charge, radial_profile
from rvprd.field_solver import (SupportViolationError, field_direct_oracle, field_sup_bound, interpolate_field,
                                potential, potential_values, read_snapshot, solve_field_spectral,
                                write_snapshot)
from rvprd.phase_space import Field, Grid


def radial_field(grid, radius=0.5, power=6):
    rho = Field(grid, radial_profile(grid, radius, power)[0])
    return rho


def shell_exact(points, radius=0.5, power=6):
    r = np.linalg.norm(points, axis=-1)
    Q = enclosed_charge(r, radius, power)
    return Q[:, None] * points / r[:, None] ** 3


def test_zero_density_gives_zero_field():
    g = Grid(1.0, 16)
    E = solve_field_spectral(Field(g, np.zeros((16, 16, 16))))
    assert not E.values.any()
    assert field_sup_bound(Field(g, np.zeros((16, 16, 16)))) == 0.0


def test_identical_species_cancel():
    g = Grid(1.0, 32)
    rho = radial_field(g)
    E = solve_field_spectral(rho - rho)
    assert np.abs(E.values).max() == 0.0


def test_shell_theorem_potential_and_field():
    g = Grid(1.0, 64)
    rho = radial_field(g)
    E = solve_field_spectral(rho).values
    X = np.stack(g.mesh(), axis=-1)
    away = g.radius() > 2 * g.h
    pts = X[away]
    exact = shell_exact(pts)
    err = np.abs(np.moveaxis(E, 0, -1)[away] - exact).max() / np.linalg.norm(exact, axis=1).max()
    assert err <= 1e-4


def test_potential_is_positive_for_positive_density():
    g = Grid(1.0, 32)
    u = potential(radial_field(g)).values
    assert u.min() > 0


def test_support_violation():
    g = Grid(1.0, 16)
    v = np.zeros((16, 16, 16))
    v[0, 0, 0] = 1.0
    with pytest.raises(SupportViolationError):
        solve_field_spectral(Field(g, v))


def test_direct_oracle_monopole():
    g = Grid(1.0, 17)
    v = np.zeros((17, 17, 17))
    v[8, 8, 8] = 2.0 / g.h ** 3
    d = 0.375
    out = field_direct_oracle(Field(g, v), np.array([[d, 0.0, 0.0]]))
    assert np.allclose(out, [[2.0 / d ** 2, 0.0, 0.0]], rtol=1e-14, atol=0)


def test_direct_oracle_zero():
    g = Grid(1.0, 16)
    assert not field_direct_oracle(Field(g, np.zeros((16, 16, 16))), np.zeros((3, 3))).any()


def test_direct_oracle_agrees_with_spectral():
    g = Grid(1.0, 32)
    rho = radial_field(g)
    E = solve_field_spectral(rho)
    for seed in range(4):
        idx = np.random.default_rng(seed).integers(2, 30, size=(20, 3))
        d = field_direct_oracle(rho, g.axis[idx])
        s = E.values[:, idx[:, 0], idx[:, 1], idx[:, 2]].T
        assert np.linalg.norm(d - s, axis=1).max() / E.sup() <= 1e-2


def test_interpolation_constant_and_affine():
    g = Grid(1.0, 16)
    X, Y, Z = g.mesh()
    pts = np.random.default_rng(0).uniform(-0.7, 0.7, (50, 3))
    for order in (2, 4, 5):
        c = interpolate_field(Field(g, np.full((1, 16, 16, 16), 3.5)), pts, order)
        assert np.allclose(c, 3.5, rtol=1e-14)
        a = interpolate_field(Field(g, X[None]), pts, order)
        assert np.allclose(a[:, 0], pts[:, 0], atol=1e-14)


def test_interpolated_field_converges_second_order():
    errs = []
    pts = np.random.default_rng(2).uniform(-0.4, 0.4, (40, 3))
    for n in (32, 64):
        g = Grid(1.0, n)
        E = solve_field_spectral(radial_field(g))
        errs.append(np.abs(interpolate_field(E, pts, 2) - shell_exact(pts)).max())
    assert errs[0] / errs[1] >= 3.5


def test_sup_bound_holds_and_scales():
    g = Grid(1.0, 32)
    rho = radial_field(g)
    E = solve_field_spectral(rho)
    B = field_sup_bound(rho)
    assert E.sup() <= B
    assert math.isclose(field_sup_bound(rho * 3.0), 3.0 * B, rel_tol=1e-12)


@settings(max_examples=10, deadline=None)
@given(st.floats(0.1, 10.0), st.floats(0.1, 10.0))
def test_field_is_linear(a, b):
    g = Grid(1.0, 16)
    r1 = radial_field(g, 0.4, 2)
    X = g.mesh()[0]
    r2 = Field(g, r1.values * np.where(np.abs(X) < 0.5, X, 0.0))
    lhs = solve_field_spectral(r1 * a + r2 * b).values
    rhs = a * solve_field_spectral(r1).values + b * solve_field_spectral(r2).values
    assert np.allclose(lhs, rhs, rtol=1e-12, atol=1e-12 * np.abs(rhs).max())


def test_snapshot_roundtrip(tmp_path):
    g = Grid(1.5, 16)
    v = np.random.default_rng(0).normal(size=(3, 16, 16, 16))
    write_snapshot(Field(g, v, 0.25), tmp_path / "E")
    back = read_snapshot(tmp_path / "E")
    assert np.array_equal(back.values, v) and back.time == 0.25 and back.grid == g
    raw = np.fromfile(tmp_path / "E.bin", dtype="<f8")
    assert raw[0] == v[0, 0, 0, 0] and raw[1] == v[1, 0, 0, 0]


def test_central_potential_matches_padded_inside_half_domain():
    g = Grid(3.0, 32)
    X, Y, Z = g.mesh()
    box = np.maximum(np.maximum(np.abs(X), np.abs(Y)), np.abs(Z))
    rho = np.random.default_rng(5).normal(size=X.shape) * (box < 0.5 * g.L)
    padded = potential_values(rho, g)[0]
    central = potential_values(rho, g, central=True)[0]
    inside = box < 0.5 * g.L
    assert np.abs(padded - central)[inside].max() <= 1e-13 * np.abs(padded).max()
