"""Free-space electrostatics on a node grid.

The Newtonian potential u = rho * 1/|x| and the field E = -grad u are
computed by zero-padded FFT convolutions (domain doubled per axis), or, for
sources and targets inside the half-domain, by an unpadded periodic one.  The
1/|x| kernel is truncated beyond the domain diagonal: its Fourier transform
8*pi*sin^2(Lt|k|/2)/|k|^2 is smooth, so sampling it on a 4x oversampled grid
gives spectrally accurate lattice values without any regularisation at the
origin.  The gradient kernel is differentiated spectrally on the same
oversampled grid before cropping.
"""
import json
from functools import lru_cache
from pathlib import Path

import numpy as np
import scipy.fft as sfft

from .phase_space import Field, Grid, check_inside
from . import kernels

FFT_WORKERS = 1


class SupportViolationError(ValueError):
    pass


def _padded_index(n):
    return np.r_[0:n, 3 * n:4 * n]


@lru_cache(maxsize=4)
def _kernel_hat(n, h):
    """rfftn of the lattice Green's function and of its negative gradient
    on the (2n)^3 padded grid, shape (4, 2n, 2n, n+1)."""
    M = 4 * n
    Lt = np.sqrt(3.0) * n * h
    k = 2.0 * np.pi * sfft.fftfreq(M, d=h)
    kd = k.copy()
    kd[M // 2] = 0.0
    idx = _padded_index(n)
    k2yz = k[:, None] ** 2 + k[None, :] ** 2
    out = []
    for comp in range(4):
        slab = np.empty((M, 2 * n, 2 * n))
        for ix in range(M):
            K2 = k2yz + k[ix] ** 2
            with np.errstate(divide="ignore", invalid="ignore"):
                Gh = 8.0 * np.pi * np.sin(0.5 * Lt * np.sqrt(K2)) ** 2 / K2
            if ix == 0:
                Gh[0, 0] = 2.0 * np.pi * Lt ** 2
            if comp == 2:
                Gh = -1j * kd[:, None] * Gh
            elif comp == 3:
                Gh = -1j * kd[None, :] * Gh
            slab[ix] = sfft.ifft2(Gh, workers=FFT_WORKERS).real[np.ix_(idx, idx)]
        if comp == 1:
            g = sfft.ifft(-1j * kd[:, None, None] * slab, axis=0, workers=FFT_WORKERS).real
        else:
            g = sfft.ifft(slab, axis=0, workers=FFT_WORKERS).real
        out.append(sfft.rfftn(g[idx] / h ** 3, workers=FFT_WORKERS))
    return np.stack(out)


def check_half_domain(values, grid, what="density"):
    """Raise unless every nonzero node lies strictly inside [-L/2, L/2]^3."""
    v = np.asarray(values)
    if v.ndim == 4:
        mask = np.any(v != 0.0, axis=0)
    else:
        mask = v != 0.0
    if not mask.any():
        return
    a = grid.axis
    half = 0.5 * grid.L
    for ax in range(3):
        other = tuple(i for i in range(3) if i != ax)
        used = np.nonzero(mask.any(axis=other))[0]
        if np.abs(a[used]).max() >= half:
            raise SupportViolationError(
                f"{what} is nonzero at |x_{'xyz'[ax]}| = {np.abs(a[used]).max():.6g}, "
                f"outside the half-domain |x| < {half:.6g}")


def _rfftn_padded(c):
    # rfftn of c zero-padded to twice its size, skipping transforms of zero rows
    n = c.shape[0]
    w = FFT_WORKERS
    out = sfft.rfft(c, n=2 * n, axis=2, workers=w)
    out = sfft.fft(out, n=2 * n, axis=1, workers=w)
    return sfft.fft(out, n=2 * n, axis=0, workers=w)


def _crop(uh, n):
    # inverse of the padded transform, restricted to the first n^3 block
    w = FFT_WORKERS
    out = sfft.ifft(uh, axis=0, workers=w)[:n]
    out = sfft.ifft(out, axis=1, workers=w)[:, :n]
    return sfft.irfft(out, n=2 * n, axis=2, workers=w)[:, :, :n]


def _density_hat(values, grid):
    v = np.asarray(values, dtype=float)
    if v.ndim == 3:
        v = v[None]
    return [_rfftn_padded(c) * grid.h ** 3 for c in v]


@lru_cache(maxsize=4)
def _central_kernel_hat(n, h):
    # lattice kernel at minimum-image offsets in [-n/2, n/2), unpadded
    g = sfft.irfftn(_kernel_hat(n, h)[0], s=(2 * n,) * 3, workers=FFT_WORKERS)
    j = np.r_[0:n // 2, 2 * n - n // 2:2 * n]
    return sfft.rfftn(g[np.ix_(j, j, j)], workers=FFT_WORKERS)


def potential_values(values, grid, central=False):
    """Newtonian potential (no 4*pi, no sign) of each component, cropped to the grid.

    With ``central=True`` the convolution is periodic on the n^3 grid itself.
    Node offsets inside the half-domain [-L/2, L/2]^3 are below n/2 per axis,
    so for densities supported there the result is exact on those nodes (and
    meaningless outside them) at an eighth of the transform cost.
    """
    v = np.asarray(values, dtype=float)
    if v.ndim == 3:
        v = v[None]
    if central:
        G = _central_kernel_hat(grid.n, float(grid.h))
        w = FFT_WORKERS
        return np.stack([sfft.irfftn(G * sfft.rfftn(c, workers=w), s=c.shape, workers=w) * grid.h ** 3
                         for c in v])
    G = _kernel_hat(grid.n, float(grid.h))[0]
    return np.stack([_crop(G * c, grid.n) for c in _density_hat(v, grid)])


def field_values(values, grid, with_potential=False):
    """-grad u on the grid for a scalar density (and u itself if asked)."""
    K = _kernel_hat(grid.n, float(grid.h))
    rh = _density_hat(values, grid)[0]
    E = np.stack([_crop(K[a + 1] * rh, grid.n) for a in range(3)])
    if with_potential:
        return E, _crop(K[0] * rh, grid.n)
    return E


def potential(rho):
    """Newtonian potential u(x) = sum_y h^3 rho(y)/|x-y| as a Field."""
    check_half_domain(rho.values, rho.grid)
    return Field(rho.grid, potential_values(rho.values, rho.grid), rho.time)


def solve_field_spectral(rho, return_potential=False):
    """E = -grad u for the Newtonian potential u of a scalar density."""
    if rho.components != 1:
        raise ValueError("solve_field_spectral expects a scalar density")
    check_half_domain(rho.values, rho.grid)
    E, u = field_values(rho.values, rho.grid, with_potential=True)
    E = Field(rho.grid, E, rho.time)
    if return_potential:
        return E, Field(rho.grid, u, rho.time)
    return E


# integral of 1/|u| over the unit cube centred at the origin
CUBE_INVERSE_DISTANCE = 2.380077363979557


def field_direct_oracle(rho, points, chunk=256):
    """Direct Coulomb sum over occupied nodes.

    A node within h/100 of the evaluation point is skipped; its cell then
    contributes -(c h^2 / 3) grad rho to leading order, which is added back with
    grad rho from central differences at that node.
    """
    grid = rho.grid
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    v = rho.values[0]
    occ = np.nonzero(v)
    if occ[0].size == 0:
        return np.zeros_like(pts)
    a = grid.axis
    h = grid.h
    ys = np.column_stack([a[occ[0]], a[occ[1]], a[occ[2]]])
    q = h ** 3 * v[occ]
    out = np.empty_like(pts)
    for s in range(0, pts.shape[0], chunk):
        d = pts[s:s + chunk, None, :] - ys[None, :, :]
        r = np.sqrt((d * d).sum(axis=2))
        with np.errstate(divide="ignore", invalid="ignore"):
            c = np.where(r > 1e-2 * h, q / r ** 3, 0.0)
        out[s:s + chunk] = np.einsum("qn,qnk->qk", c, d)
    idx = np.rint((pts + grid.L) / h).astype(int)
    on_node = (np.abs(pts - a[np.clip(idx, 0, grid.n - 1)]) <= 1e-2 * h).all(axis=1)
    on_node &= ((idx >= 1) & (idx <= grid.n - 2)).all(axis=1)
    if on_node.any():
        grad = np.stack(np.gradient(v, h))
        i = idx[on_node]
        out[on_node] -= CUBE_INVERSE_DISTANCE * h * h / 3.0 * grad[:, i[:, 0], i[:, 1], i[:, 2]].T
    return out


def interpolate_field(field, x, order=2):
    """Tensor-kernel interpolation of node values at points x (shape (3,) or (N, 3))."""
    grid = field.grid
    pts = np.asarray(x, dtype=float)
    single = pts.ndim == 1
    pts = np.atleast_2d(pts)
    h = grid.h
    check_inside(pts, -grid.L + 2 * h, grid.L - 2 * h, field.time)
    out = kernels.gather(pts, field.values, grid.L, h, order)
    return out[0] if single else out


def field_sup_bound(rho):
    """3 (2 pi)^(2/3) ||rho||_1^(1/3) ||rho||_inf^(2/3) with discrete norms."""
    v = np.abs(rho.values)
    l1 = rho.grid.h ** 3 * v.sum()
    return float(3.0 * (2.0 * np.pi) ** (2.0 / 3.0) * np.cbrt(l1) * v.max() ** (2.0 / 3.0)) if v.size else 0.0


def write_snapshot(field, path):
    """Write ``<path>.bin`` (little-endian float64, node-major) and ``<path>.json``."""
    path = Path(path)
    data = np.ascontiguousarray(np.moveaxis(field.values, 0, -1), dtype="<f8")
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        data.tofile(path.with_suffix(".bin"))
        meta = {"extent": field.grid.L, "nodes": field.grid.n,
                "components": field.components, "time": field.time}
        path.with_suffix(".json").write_text(json.dumps(meta))
    except OSError as exc:
        raise OSError(f"cannot write snapshot {path}: {exc}") from exc


def read_snapshot(path):
    path = Path(path)
    meta = json.loads(path.with_suffix(".json").read_text())
    n, k = meta["nodes"], meta["components"]
    data = np.fromfile(path.with_suffix(".bin"), dtype="<f8").reshape(n, n, n, k)
    return Field(Grid(meta["extent"], n), np.moveaxis(data, -1, 0).copy(), meta["time"])
