"""The singular operator H, the damping functional D3 and the low dipole moments.

H(j) = -grad div (N * j) with N the Newtonian potential; in Fourier space it
is the multiplier 4*pi*xi xi^T/|xi|^2, i.e. 4*pi times the projection onto
gradients.  The principal-value lattice sum is kept as an independent oracle.
"""
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
import scipy.fft as sfft

from .phase_space import Field, _same_grid
from .field_solver import check_half_domain
from . import field_solver

C_CZ = 4.0 * np.pi


class ResolutionError(ValueError):
    pass


@dataclass
class DipoleSet:
    D: np.ndarray = field(default_factory=lambda: np.zeros(3))
    D1: np.ndarray = field(default_factory=lambda: np.zeros(3))
    D2: np.ndarray = field(default_factory=lambda: np.zeros(3))
    D3: np.ndarray = field(default_factory=lambda: np.zeros(3))
    t: float = 0.0

    def as_tuple(self):
        return tuple(np.concatenate([self.D, self.D1, self.D2, self.D3]))


@lru_cache(maxsize=4)
def _padded_wavenumbers(n, h):
    k = 2.0 * np.pi * sfft.fftfreq(2 * n, d=h)
    kr = 2.0 * np.pi * sfft.rfftfreq(2 * n, d=h)
    return k[:, None, None], k[None, :, None], kr[None, None, :]


def apply_H_spectral(j):
    """Multiplier 4*pi*xi(xi.j^)/|xi|^2 on the zero-padded grid; xi = 0 maps to 0."""
    if j.components != 3:
        raise ValueError("H acts on vector fields")
    grid = j.grid
    check_half_domain(j.values, grid, "current")
    n = grid.n
    s = (2 * n,) * 3
    w = field_solver.FFT_WORKERS
    kx, ky, kz = _padded_wavenumbers(n, float(grid.h))
    jh = [sfft.rfftn(c, s=s, workers=w) for c in j.values]
    k2 = kx * kx + ky * ky + kz * kz
    k2[0, 0, 0] = 1.0
    div = (kx * jh[0] + ky * jh[1] + kz * jh[2]) * (C_CZ / k2)
    div[0, 0, 0] = 0.0
    out = np.stack([sfft.irfftn(kk * div, s=s, workers=w)[:n, :n, :n] for kk in (kx, ky, kz)])
    return Field(grid, out, j.time)


@lru_cache(maxsize=8)
def _pv_kernel_hat(n, h, eta):
    # h^3 |z|^-3 (id - 3 z z^T/|z|^2) on lattice offsets with |z| > eta
    o = np.r_[0:n, -n:0] * h
    Z = np.meshgrid(o, o, o, indexing="ij")
    r2 = Z[0] ** 2 + Z[1] ** 2 + Z[2] ** 2
    keep = r2 > eta * eta
    r2s = np.where(keep, r2, 1.0)
    base = np.where(keep, h ** 3 / (r2s * np.sqrt(r2s)), 0.0)
    out = {}
    for a in range(3):
        for b in range(a, 3):
            kern = base * ((a == b) - 3.0 * Z[a] * Z[b] / r2s)
            out[a, b] = sfft.rfftn(kern, workers=field_solver.FFT_WORKERS)
    return out


def _apply_pv(j, eta):
    grid = j.grid
    n = grid.n
    s = (2 * n,) * 3
    w = field_solver.FFT_WORKERS
    K = _pv_kernel_hat(n, float(grid.h), float(eta))
    jh = [sfft.rfftn(c, s=s, workers=w) for c in j.values]
    out = []
    for a in range(3):
        acc = sum(K[min(a, b), max(a, b)] * jh[b] for b in range(3))
        out.append(sfft.irfftn(acc, s=s, workers=w)[:n, :n, :n])
    return np.stack(out) + (4.0 * np.pi / 3.0) * j.values


def apply_H_quadrature(j, eta, richardson=True):
    """Truncated principal-value lattice sum plus (4*pi/3) j.

    With ``richardson`` the sums at eta and eta/2 are combined to cancel the
    leading eta^2 truncation term.
    """
    grid = j.grid
    if eta < 2.0 * grid.h * (1.0 - 1e-12):
        raise ResolutionError(f"eta={eta:.6g} is below 2h={2.0 * grid.h:.6g}")
    if j.components != 3:
        raise ValueError("H acts on vector fields")
    coarse = _apply_pv(j, eta)
    if not richardson:
        return Field(grid, coarse, j.time)
    fine = _apply_pv(j, 0.5 * eta)
    return Field(grid, (4.0 * fine - coarse) / 3.0, j.time)


def d3_total(rho_p, rho_m, j_p, j_m):
    """2 h^3 sum[rho+ H(j-) - rho- H(j+)] with the spectral H."""
    _same_grid(rho_p, rho_m, j_p, j_m)
    h3 = rho_p.grid.h ** 3
    a = (rho_p.values * apply_H_spectral(j_m).values).reshape(3, -1).sum(axis=1)
    b = (rho_m.values * apply_H_spectral(j_p).values).reshape(3, -1).sum(axis=1)
    return 2.0 * h3 * (a - b)


def low_moments(rho_p, rho_m, j_p, j_m, E):
    """Dipole hierarchy from deposited species moments and the field of rho+ - rho-."""
    _same_grid(rho_p, rho_m, j_p, j_m, E)
    grid = rho_p.grid
    h3 = grid.h ** 3
    X = np.stack(grid.mesh())
    D = h3 * ((X * rho_p.values).reshape(3, -1).sum(axis=1) - (X * rho_m.values).reshape(3, -1).sum(axis=1))
    D1 = h3 * (j_p.values.reshape(3, -1).sum(axis=1) - j_m.values.reshape(3, -1).sum(axis=1))
    D2 = h3 * (E.values * (rho_p.values + rho_m.values)).reshape(3, -1).sum(axis=1)
    return DipoleSet(D, D1, D2, d3_total(rho_p, rho_m, j_p, j_m), rho_p.time)
