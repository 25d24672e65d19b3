"""Time stepping of the two-species particle system, Picard iteration on
characteristics and run orchestration.

Discretisation.  Particles carry quartic B-spline shapes W (C3, so D3 is C1
along trajectories and centred differences of the dipoles converge at second
order uniformly in time).  With
rho_s = h^-3 sum w W(.; x_i) and phi = G * (rho_+ - rho_-) the particle field is
E_h(x) = -grad sum_n phi(n) W(n; x), so the field energy W = h^3/2 sum rho phi
and D2 = sum_i w_i E_h(x_i) are exact functions of the particle positions.
The damping vector is the exact time derivative of that D2 along x' = p,

    D3 = -sum_i w_i [Hess Phi(x_i) + s_i Gamma(x_i)] p_i,

where Gamma = grad of the interpolated potential psi = G * R of the summed
shape gradients R = h^-3 sum w grad W.  With these definitions
D' = D1, D1' = D2 + eps M D3, D2' = D3 and d/dt E_S = -eps |D2|^2 hold for the
semi-discrete system, so the residuals of a run only see time-step error.

The kick keeps positions fixed; D3 is then linear in the momenta and obeys
D3' = g + eps A D3, which is integrated exactly with a matrix exponential.
"""
from dataclasses import dataclass, field, replace
import math

import numpy as np
from scipy.linalg import expm

from . import kernels
from .envelope import envelope_for_datum
from .field_solver import field_sup_bound, field_values, potential_values
from .phase_space import (DomainOverflowError, Field, Grid, ParticleEnsemble,
                          bare_mass, check_inside, sample_particles)
from .singular_operator import DipoleSet

MODES = ("rvprd", "reduction21", "vlasov_poisson")


class HorizonError(ValueError):
    def __init__(self, message, a):
        self.a = a
        super().__init__(message)


class PicardDivergenceError(RuntimeError):
    def __init__(self, message, report):
        self.report = report
        super().__init__(message)


@dataclass
class RunSetup:
    datum: object
    envelope: object
    grid: Grid
    T: float
    dt: float
    steps: int
    mode: str
    epsilon: float
    cadence: int

    @property
    def eps_eff(self):
        return 0.0 if self.mode == "vlasov_poisson" else self.epsilon


def domain_extent(X, n):
    """Smallest L with particles inside [-L/2 + 3h, L/2 - 3h] (5% margin) for |x| <= X."""
    return 1.05 * X / (0.5 - 6.0 / (n - 1))


def resolve(config, horizon_fraction=0.5):
    """Fill in T, L and dt from the envelope of the configured datum."""
    datum = config.datum.build()
    env = envelope_for_datum(datum)
    a = env.a
    T = config.T if config.T is not None else (horizon_fraction * a if math.isfinite(a) else 1.0)
    if T >= a and not config.override_horizon:
        raise HorizonError(f"horizon T={T:.6g} reaches the envelope blow-up time a={a:.6g}; "
                           "pass --override-horizon to run anyway", a)
    n = config.grid.n
    X = env.X(T) if T < a else math.inf
    if config.grid.L is None:
        if not math.isfinite(X):
            raise HorizonError(f"T={T:.6g} >= a={a:.6g}: grid.L must be given explicitly", a)
        L = domain_extent(X, n)
    else:
        L = config.grid.L
        if T < a and not L > 1.25 * X:
            raise ValueError(f"grid.L={L:.6g} must exceed 1.25*X(T)={1.25 * X:.6g}")
    grid = Grid(L, n)
    dt = config.dt if config.dt is not None else min(0.01, 0.1 * grid.h / env.P(0.0))
    steps = math.ceil(T / dt - 1e-9) if T > 0 else 0
    if steps:
        dt = T / steps
    return RunSetup(datum, env, grid, T, dt, steps, config.mode, config.epsilon, config.cadence)


@dataclass
class ForceEval:
    """Grid and particle quantities at one set of positions."""
    rho: np.ndarray
    phi: np.ndarray
    E: tuple
    hess: tuple
    gam: tuple
    D2: np.ndarray
    W: float


def _deposit_both(x, w, grid):
    if x.shape[0] == 0:
        return np.zeros((4, grid.n, grid.n, grid.n))
    return kernels.deposit(x, w, grid.L, grid.h, grid.n, order=kernels.FORCE_ORDER, grad="both") / grid.h ** 3


def _check_positions(plus, minus, grid, t):
    # the five-node stencil reaches 2.5h; keep the density inside |x| < L/2
    lim = 0.5 * grid.L - 3.0 * grid.h
    check_inside(plus.x, -lim, lim, t)
    check_inside(minus.x, -lim, lim, t, offset=len(plus))


def compute_forces(plus, minus, grid, t=0.0, derivatives=True):
    _check_positions(plus, minus, grid, t)
    dp = _deposit_both(plus.x, plus.w, grid)
    dm = _deposit_both(minus.x, minus.w, grid)
    rho = dp[0] - dm[0]
    R = dp[1:] + dm[1:]
    h3 = grid.h ** 3
    if derivatives:
        pot = potential_values(np.concatenate([rho[None], R]), grid, central=True)
        phi, psi = pot[0], pot[1:]
        fp = kernels.force_gather(plus.x, phi, psi, grid.L, grid.h)
        fm = kernels.force_gather(minus.x, phi, psi, grid.L, grid.h)
        E, hess, gam = (fp[0], fm[0]), (fp[1], fm[1]), (fp[2], fm[2])
    else:
        phi = potential_values(rho[None], grid, central=True)[0]
        E = (kernels.field_gather(plus.x, phi, grid.L, grid.h),
             kernels.field_gather(minus.x, phi, grid.L, grid.h))
        hess = gam = None
    D2 = -h3 * (R * phi).reshape(3, -1).sum(axis=1)
    W = 0.5 * h3 * float((rho * phi).sum())
    return ForceEval(rho, phi, E, hess, gam, D2, W)


def _d2_only(plus, minus, grid, t):
    _check_positions(plus, minus, grid, t)
    dp = _deposit_both(plus.x, plus.w, grid)
    dm = _deposit_both(minus.x, minus.w, grid)
    phi = potential_values((dp[0] - dm[0])[None], grid, central=True)[0]
    return -grid.h ** 3 * ((dp[1:] + dm[1:]) * phi).reshape(3, -1).sum(axis=1)


def damping_vector(plus, minus, forces):
    """D3 at the current momenta."""
    Hp, Gp = kernels.damping_sum(plus.w, plus.p, forces.hess[0], forces.gam[0])
    Hm, Gm = kernels.damping_sum(minus.w, minus.p, forces.hess[1], forces.gam[1])
    return -(Hp + Hm) - (Gp - Gm)


def _integrated_damping(A, g, y0, tau):
    """int_0^tau y for y' = A y + g, y(0) = y0, via an augmented exponential."""
    Maug = np.zeros((7, 7))
    Maug[0:3, 3:6] = np.eye(3)
    Maug[3:6, 3:6] = A
    Maug[3:6, 6] = g
    z = expm(Maug * tau) @ np.concatenate([np.zeros(3), y0, [1.0]])
    return z[0:3]


@dataclass
class SimState:
    t: float
    plus: ParticleEnsemble
    minus: ParticleEnsemble
    grid: Grid
    mode: str = "rvprd"
    epsilon: float = 0.0
    forces: ForceEval | None = None

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}")
        if not 0.0 <= self.epsilon <= 1.0:
            raise ValueError(f"epsilon={self.epsilon} is outside [0, 1]")

    @property
    def eps_eff(self):
        return 0.0 if self.mode == "vlasov_poisson" else self.epsilon

    def ensure_forces(self):
        if self.forces is None:
            self.forces = compute_forces(self.plus, self.minus, self.grid, self.t)
        return self.forces

    def fields(self):
        """Order-2 deposits rho+, rho-, j+, j- (for the field-level diagnostics)."""
        from .phase_space import deposit_moments
        rp, jp = deposit_moments(self.plus, self.grid, 2, self.t)
        rm, jm = deposit_moments(self.minus, self.grid, 2, self.t)
        return rp, rm, jp, jm


def _kick(plus, minus, forces, tau, eps):
    Ep, Em = forces.E
    if eps != 0.0:
        sp = kernels.species_sums(plus.w, plus.p, Ep, forces.hess[0], forces.gam[0])
        sm = kernels.species_sums(minus.w, minus.p, Em, forces.hess[1], forces.gam[1])
        y0 = -(sp[0] + sm[0]) - (sp[1] - sm[1])
        A = -(sp[2] - sm[2]) - (sp[3] + sm[3])
        g = -(sp[4] - sm[4]) - (sp[5] + sm[5])
        if g.any() or y0.any():
            Y = _integrated_damping(eps * A, g, y0, tau)
        else:
            Y = np.zeros(3)
        plus.p += tau * Ep + eps * Y
        minus.p -= tau * Em + eps * Y
    else:
        plus.p += tau * Ep
        minus.p -= tau * Em


def _shift(plus, minus, grid, tau, eps, t):
    # x+' = eps D2, x-' = -eps D2: a rigid relative translation, RK2 midpoint
    k1 = eps * _d2_only(plus, minus, grid, t)
    mid_p = replace(plus, x=plus.x + 0.5 * tau * k1)
    mid_m = replace(minus, x=minus.x - 0.5 * tau * k1)
    k2 = eps * _d2_only(mid_p, mid_m, grid, t)
    plus.x += tau * k2
    minus.x -= tau * k2


def step(state, dt):
    """One Strang kick-drift-kick step; returns a new state with fresh forces."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    forces = state.ensure_forces()
    plus, minus = state.plus.copy(), state.minus.copy()
    eps = state.eps_eff
    kick_eps = eps if state.mode == "rvprd" else 0.0
    _kick(plus, minus, forces, 0.5 * dt, kick_eps)
    if state.mode == "reduction21" and eps != 0.0:
        _shift(plus, minus, state.grid, 0.5 * dt, eps, state.t)
        plus.x += dt * plus.p
        minus.x += dt * minus.p
        _shift(plus, minus, state.grid, 0.5 * dt, eps, state.t + dt)
    else:
        plus.x += dt * plus.p
        minus.x += dt * minus.p
    new_forces = compute_forces(plus, minus, state.grid, state.t + dt)
    _kick(plus, minus, new_forces, 0.5 * dt, kick_eps)
    return SimState(state.t + dt, plus, minus, state.grid, state.mode, state.epsilon, new_forces)


@dataclass
class MomentRecord:
    t: float
    M: float
    dipoles: DipoleSet
    E_kin: float
    E_field: float
    E_schott: float
    max_x: float
    max_p: float
    field_max: float = float("nan")
    field_bound: float = float("nan")

    def row(self):
        d = self.dipoles
        return [self.t, self.M, *d.D, *d.D1, *d.D2, *d.D3,
                self.E_kin, self.E_field, self.E_schott, self.max_x, self.max_p]


def _kinetic(ens):
    if not len(ens):
        return 0.0
    return 0.5 * float(kernels.weighted_sum(ens.w, (ens.p * ens.p).sum(axis=1)[:, None])[0])


def _max_norm(*arrays):
    vals = [np.sqrt((a * a).sum(axis=1)).max() for a in arrays if a.shape[0]]
    return float(max(vals)) if vals else 0.0


def observe(state, field_check=True):
    """MomentRecord of the current state (plus the node-field bound check)."""
    from .diagnostics import schott_energy
    f = state.ensure_forces()
    plus, minus = state.plus, state.minus
    M = bare_mass(plus, minus)
    D = kernels.weighted_sum(plus.w, plus.x) - kernels.weighted_sum(minus.w, minus.x)
    D1 = kernels.weighted_sum(plus.w, plus.p) - kernels.weighted_sum(minus.w, minus.p)
    D3 = damping_vector(plus, minus, f)
    dip = DipoleSet(D, D1, f.D2.copy(), D3, state.t)
    ek = _kinetic(plus) + _kinetic(minus)
    eps = state.eps_eff
    if state.mode == "reduction21":
        es = ek + f.W
    else:
        es = schott_energy(ek, f.W, D1, f.D2, eps, M)
    rec = MomentRecord(state.t, M, dip, ek, f.W, es, _max_norm(plus.x, minus.x), _max_norm(plus.p, minus.p))
    if field_check:
        E = field_values(f.rho, state.grid)
        rec.field_max = float(np.sqrt((E * E).sum(axis=0)).max())
        rec.field_bound = field_sup_bound(Field(state.grid, f.rho))
    return rec


@dataclass
class RunResult:
    setup: RunSetup
    records: list
    final: SimState | None = None
    snapshots: list = field(default_factory=list)


def initial_state(setup, m, budget=20_000_000):
    plus = sample_particles(setup.datum, 1, m, budget)
    minus = sample_particles(setup.datum, -1, m, budget)
    return SimState(0.0, plus, minus, setup.grid, setup.mode, setup.epsilon)


def run(config, snapshot_dir=None, progress=None):
    """Integrate from 0 to T and return the MomentRecord series."""
    from .field_solver import write_snapshot
    setup = resolve(config)
    state = initial_state(setup, config.m, config.particle_budget)
    state.ensure_forces()
    result = RunResult(setup, [])

    def emit(s, k):
        result.records.append(observe(s, config.field_check))
        if snapshot_dir is not None and config.snapshots:
            from pathlib import Path
            base = Path(snapshot_dir)
            rho = Field(s.grid, s.forces.rho, s.t)
            E = Field(s.grid, field_values(s.forces.rho, s.grid), s.t)
            write_snapshot(rho, base / f"rho_{k:06d}")
            write_snapshot(E, base / f"E_{k:06d}")
            result.snapshots.append(k)

    emit(state, 0)
    for k in range(1, setup.steps + 1):
        state = step(state, setup.dt)
        state.t = k * setup.dt
        if k % setup.cadence == 0:
            emit(state, k)
        if progress is not None:
            progress(k, setup.steps)
    result.final = state
    return result


@dataclass
class PicardReport:
    T: float
    dt: float
    steps: int
    markers: int
    alpha: list = field(default_factory=list)
    field_diff: list = field(default_factory=list)
    d3_diff: list = field(default_factory=list)
    scale: float = 1.0
    times: np.ndarray | None = None
    D2: np.ndarray | None = None
    C3: float = float("nan")

    def rows(self):
        return [(n, self.alpha[n], self.field_diff[n], self.d3_diff[n]) for n in range(len(self.alpha))]


def _history_entry(plus, minus, grid, t):
    f = compute_forces(plus, minus, grid, t)
    return f.phi, f.rho, damping_vector(plus, minus, f), f.D2


def picard_solve(config, n_iters=None, progress=None):
    """Picard iteration on characteristics under frozen force histories.

    Iterate 0 is the identity map.  Iterate n integrates every particle with
    kick-drift-kick steps on the fixed time grid under the force history of
    iterate n-1 and records its own history.  alpha[n] is the sup over a
    strided marker subset and all grid times of |Z_{n+1} - Z_n| in (x, p).
    """
    if config.mode == "reduction21":
        raise ValueError("the Picard iteration is defined for the rvprd and vlasov_poisson modes")
    n_iters = config.picard.iterations if n_iters is None else n_iters
    if n_iters < 2:
        raise ValueError("picard_solve needs at least 2 iterations")
    setup = resolve(config, horizon_fraction=config.picard.horizon_fraction)
    base = initial_state(setup, config.m, config.particle_budget)
    grid, K, dt, eps = setup.grid, setup.steps, setup.dt, setup.eps_eff
    Np = len(base.plus)
    N = Np + len(base.minus)
    stride = max(1, math.ceil(N / config.picard.max_markers))
    marks = np.arange(0, N, stride)
    mp, mm = marks[marks < Np], marks[marks >= Np] - Np

    def markers(plus, minus):
        return np.concatenate([np.column_stack([plus.x[mp], plus.p[mp]]),
                               np.column_stack([minus.x[mm], minus.p[mm]])])

    Z0 = markers(base.plus, base.minus)
    prev_Z = np.repeat(Z0[None], K + 1, axis=0)
    phi0, rho0, d30, d20 = _history_entry(base.plus, base.minus, grid, 0.0)
    prev = ([phi0] * (K + 1), [rho0] * (K + 1), [d30] * (K + 1), [d20] * (K + 1))
    report = PicardReport(setup.T, dt, K, len(marks), scale=float(np.abs(Z0).max()),
                          times=dt * np.arange(K + 1), C3=setup.envelope.C3)
    rising = 0
    for it in range(1, n_iters + 1):
        plus, minus = base.plus.copy(), base.minus.copy()
        hist = ([], [], [], [])
        Z = np.empty_like(prev_Z)

        def record(k, t):
            for lst, val in zip(hist, _history_entry(plus, minus, grid, t)):
                lst.append(val)
            Z[k] = markers(plus, minus)

        record(0, 0.0)
        for k in range(K):
            phi_a, d3_a = prev[0][k], prev[2][k]
            plus.p += 0.5 * dt * (kernels.field_gather(plus.x, phi_a, grid.L, grid.h) + eps * d3_a)
            minus.p -= 0.5 * dt * (kernels.field_gather(minus.x, phi_a, grid.L, grid.h) + eps * d3_a)
            plus.x += dt * plus.p
            minus.x += dt * minus.p
            _check_positions(plus, minus, grid, (k + 1) * dt)
            phi_b, d3_b = prev[0][k + 1], prev[2][k + 1]
            plus.p += 0.5 * dt * (kernels.field_gather(plus.x, phi_b, grid.L, grid.h) + eps * d3_b)
            minus.p -= 0.5 * dt * (kernels.field_gather(minus.x, phi_b, grid.L, grid.h) + eps * d3_b)
            record(k + 1, (k + 1) * dt)
        diff = Z - prev_Z
        report.alpha.append(float(np.sqrt((diff * diff).sum(axis=2)).max()))
        fd = 0.0
        for k in range(K + 1):
            drho = hist[1][k] - prev[1][k]
            if drho.any():
                E = field_values(drho, grid)
                fd = max(fd, float(np.sqrt((E * E).sum(axis=0)).max()))
        report.field_diff.append(fd)
        report.d3_diff.append(float(max(np.linalg.norm(a - b) for a, b in zip(hist[2], prev[2]))))
        report.D2 = np.array(hist[3])
        if progress is not None:
            progress(it, n_iters)
        floor = picard_floor(report)
        if it >= 5 and report.alpha[-1] > floor and report.alpha[-1] > report.alpha[-2]:
            rising += 1
            if rising >= 3:
                raise PicardDivergenceError(
                    f"alpha increased for 3 consecutive iterations (last {report.alpha[-1]:.3e})", report)
        else:
            rising = 0
        prev, prev_Z = hist, Z
    return report


def picard_floor(report):
    """Rounding level below which successive iterates are indistinguishable."""
    return 64.0 * np.finfo(float).eps * max(report.scale, 1.0)
