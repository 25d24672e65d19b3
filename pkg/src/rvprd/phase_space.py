"""Two-species phase-space data: initial densities, quadrature particles and
their deposited velocity moments."""
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy import integrate

from . import kernels


class DomainOverflowError(RuntimeError):
    def __init__(self, index, time, position=None, message=None):
        self.index = int(index)
        self.time = float(time)
        self.position = position
        super().__init__(message or f"particle {self.index} left the safe domain at t={self.time:.6g}"
                         + ("" if position is None else f" (x={np.asarray(position).tolist()})"))


class ResourceError(RuntimeError):
    pass


class GridMismatchError(ValueError):
    pass


def bump(s):
    """exp(1 - 1/(1 - s^2)) on |s| < 1, zero elsewhere; bump(0) = 1."""
    s = np.asarray(s, dtype=float)
    out = np.zeros_like(s)
    inside = np.abs(s) < 1.0
    out[inside] = np.exp(1.0 - 1.0 / (1.0 - s[inside] ** 2))
    return out


def bump_derivative(s):
    s = np.asarray(s, dtype=float)
    out = np.zeros_like(s)
    inside = np.abs(s) < 1.0
    si = s[inside]
    out[inside] = -2.0 * si / (1.0 - si ** 2) ** 2 * np.exp(1.0 - 1.0 / (1.0 - si ** 2))
    return out


def _ball_integral(radius):
    # integral of bump(|x|/radius) over R^3
    val, _ = integrate.quad(lambda r: 4.0 * np.pi * r * r * np.exp(1.0 - 1.0 / (1.0 - r * r)),
                            0.0, 1.0, epsabs=1e-15, epsrel=1e-13, limit=200)
    return val * radius ** 3


@dataclass(frozen=True)
class Grid:
    """Uniform node grid on the cube [-L, L]^3."""
    L: float
    n: int

    def __post_init__(self):
        if self.n < 8:
            raise ValueError(f"grid needs at least 8 nodes per axis, got {self.n}")
        if not self.L > 0:
            raise ValueError(f"grid extent must be positive, got {self.L}")

    @property
    def h(self):
        return 2.0 * self.L / (self.n - 1)

    @property
    def axis(self):
        return -self.L + self.h * np.arange(self.n)

    def mesh(self):
        a = self.axis
        return np.meshgrid(a, a, a, indexing="ij")

    def radius(self):
        X, Y, Z = self.mesh()
        return np.sqrt(X * X + Y * Y + Z * Z)


@dataclass
class Field:
    """Node values of a scalar (k=1) or vector (k=3) field, shape (k, n, n, n)."""
    grid: Grid
    values: np.ndarray
    time: float = 0.0

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        n = self.grid.n
        if v.shape == (n, n, n):
            v = v[None]
        if v.ndim != 4 or v.shape[1:] != (n, n, n):
            raise GridMismatchError(f"values of shape {v.shape} do not fit a {n}^3 grid")
        self.values = v

    @property
    def components(self):
        return self.values.shape[0]

    def __add__(self, other):
        _same_grid(self, other)
        return Field(self.grid, self.values + other.values, self.time)

    def __sub__(self, other):
        _same_grid(self, other)
        return Field(self.grid, self.values - other.values, self.time)

    def __mul__(self, scalar):
        return Field(self.grid, self.values * scalar, self.time)

    __rmul__ = __mul__

    def __neg__(self):
        return Field(self.grid, -self.values, self.time)

    def integral(self):
        return self.grid.h ** 3 * self.values.reshape(self.components, -1).sum(axis=1)

    def l1(self):
        return self.grid.h ** 3 * np.abs(self.values).sum()

    def l2(self):
        return np.sqrt(self.grid.h ** 3 * (self.values ** 2).sum())

    def sup(self):
        if self.components == 1:
            return float(np.abs(self.values).max())
        return float(np.sqrt((self.values ** 2).sum(axis=0)).max())


ScalarField = Field
VectorField = Field


def _same_grid(*fields):
    g = fields[0].grid
    for f in fields[1:]:
        if f.grid != g:
            raise GridMismatchError(f"fields live on different grids: {g} vs {f.grid}")


@dataclass(frozen=True)
class InitialDatum:
    """Smooth compactly supported two-species density built from the bump profile.

    Species ``+`` is A*bump(|x-cx|/rx)*bump(|p-cp|/rp).  The ``layout`` decides
    species ``-``: ``mirror`` centres it at (-cx, -cp), ``identical`` copies
    species ``+`` and ``single`` sets it to zero.
    """
    amplitude: float = 0.01
    spatial_radius: float = 1.0
    momentum_radius: float | None = None
    center_x: tuple = (0.25, 0.0, 0.0)
    center_p: tuple = (0.0, 0.25, 0.0)
    layout: str = "mirror"

    def __post_init__(self):
        if self.layout not in ("mirror", "identical", "single"):
            raise ValueError(f"unknown species layout {self.layout!r}")
        if self.amplitude < 0:
            raise ValueError("amplitude must be non-negative")

    @property
    def rx(self):
        return float(self.spatial_radius)

    @property
    def rp(self):
        return float(self.spatial_radius if self.momentum_radius is None else self.momentum_radius)

    def centers(self, species):
        cx = np.asarray(self.center_x, dtype=float)
        cp = np.asarray(self.center_p, dtype=float)
        if species == -1 and self.layout == "mirror":
            return -cx, -cp
        return cx, cp

    def species_amplitude(self, species):
        if species == -1 and self.layout == "single":
            return 0.0
        return float(self.amplitude)

    @cached_property
    def support_radius(self):
        """Smallest R0 with f = 0 whenever |x| >= R0 or |p| >= R0 (about the origin)."""
        cx = np.linalg.norm(self.center_x)
        cp = np.linalg.norm(self.center_p)
        return float(max(cx + self.rx, cp + self.rp))

    @cached_property
    def _ball(self):
        return _ball_integral(1.0)

    def sup_norm(self, species):
        return self.species_amplitude(species)

    def l1_norm(self, species):
        return self.species_amplitude(species) * self._ball ** 2 * self.rx ** 3 * self.rp ** 3

    def pair_sup(self):
        return self.sup_norm(1) + self.sup_norm(-1)

    def pair_l1(self):
        return self.l1_norm(1) + self.l1_norm(-1)

    @cached_property
    def sobolev_bound(self):
        # first-order W^{inf,1} bound: sup f + sup|grad_x f| + sup|grad_p f|
        s = np.linspace(0.0, 1.0, 20001)
        dmax = np.abs(bump_derivative(s)).max()
        a = max(self.species_amplitude(1), self.species_amplitude(-1))
        return float(a * (1.0 + dmax / self.rx + dmax / self.rp))

    def scaled(self, factor):
        return InitialDatum(self.amplitude * factor, self.spatial_radius, self.momentum_radius,
                            tuple(self.center_x), tuple(self.center_p), self.layout)


def evaluate_datum(datum, x, p, species):
    cx, cp = datum.centers(species)
    sx = np.linalg.norm(np.asarray(x, dtype=float) - cx, axis=-1) / datum.rx
    sp = np.linalg.norm(np.asarray(p, dtype=float) - cp, axis=-1) / datum.rp
    return datum.species_amplitude(species) * bump(sx) * bump(sp)


@dataclass
class ParticleEnsemble:
    """Quadrature particles of one species; weights never change during a run."""
    sign: int
    x: np.ndarray
    p: np.ndarray
    w: np.ndarray
    cell_volume: float = 0.0

    def __post_init__(self):
        if self.sign not in (1, -1):
            raise ValueError("species sign must be +1 or -1")
        self.x = np.ascontiguousarray(self.x, dtype=float).reshape(-1, 3)
        self.p = np.ascontiguousarray(self.p, dtype=float).reshape(-1, 3)
        self.w = np.ascontiguousarray(self.w, dtype=float).reshape(-1)

    def __len__(self):
        return self.w.shape[0]

    @property
    def mass(self):
        return float(self.w.sum())

    def copy(self):
        return ParticleEnsemble(self.sign, self.x.copy(), self.p.copy(), self.w.copy(), self.cell_volume)


def _lattice(center, radius, m):
    offsets = np.linspace(-radius, radius, m)
    pts = np.stack(np.meshgrid(offsets, offsets, offsets, indexing="ij"), axis=-1).reshape(-1, 3)
    return pts + np.asarray(center, dtype=float), (offsets[1] - offsets[0]) ** 3


def sample_particles(datum, species, m, budget=20_000_000):
    """Tensor-lattice quadrature of one species over its support box.

    Nodes run lexicographically over (x-lattice, p-lattice) indices; nodes with
    f < 1e-14*A are dropped.
    """
    if m < 4:
        raise ValueError(f"sampling needs m >= 4 nodes per axis, got {m}")
    if m ** 6 > budget:
        raise ResourceError(f"m={m} gives {m ** 6} lattice nodes, over the particle budget {budget}")
    cx, cp = datum.centers(species)
    xs, vx = _lattice(cx, datum.rx, m)
    ps, vp = _lattice(cp, datum.rp, m)
    amp = datum.species_amplitude(species)
    fx = bump(np.linalg.norm(xs - cx, axis=1) / datum.rx)
    fp = bump(np.linalg.norm(ps - cp, axis=1) / datum.rp)
    cell = vx * vp
    if amp == 0.0:
        return ParticleEnsemble(species, np.zeros((0, 3)), np.zeros((0, 3)), np.zeros(0), cell)
    f = amp * np.outer(fx, fp)
    keep = f >= 1e-14 * datum.amplitude
    ix, ip = np.nonzero(keep)
    return ParticleEnsemble(species, xs[ix], ps[ip], f[ix, ip] * cell, cell)


def check_inside(x, lo, hi, time=0.0, offset=0):
    if x.shape[0] == 0:
        return
    bad = np.any((x < lo) | (x > hi), axis=1)
    if bad.any():
        i = int(np.argmax(bad))
        raise DomainOverflowError(offset + i, time, x[i],
                                  f"particle {offset + i} at {x[i].tolist()} is outside "
                                  f"[{lo:.6g}, {hi:.6g}]^3 at t={time:.6g}")


def deposit_moments(ensemble, grid, order=2, time=0.0):
    """Charge and current density of one species on ``grid``.

    Returns (rho, j) with h^3 * sum(rho) equal to the total weight.
    """
    h = grid.h
    check_inside(ensemble.x, -grid.L + 2 * h, grid.L - 2 * h, time)
    vals = np.column_stack([ensemble.w, ensemble.w[:, None] * ensemble.p]) if len(ensemble) else np.zeros((0, 4))
    dep = kernels.deposit(ensemble.x, vals, grid.L, h, grid.n, order) / h ** 3
    return Field(grid, dep[:1], time), Field(grid, dep[1:], time)


def bare_mass(plus, minus):
    return float(plus.w.sum() + minus.w.sum())
