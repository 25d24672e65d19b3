"""Numba kernels for particle/grid transfer with tensor-product B-splines.

Three shapes are supported: order 2 (triangular, two nodes per axis),
order 4 (cubic B-spline, four nodes per axis) and order 5 (quartic
B-spline, five nodes per axis); the particle dynamics use FORCE_ORDER.
Deposition splits the particles into a fixed number of contiguous chunks, each
scattered into its own grid in particle order, and sums the chunk grids in
chunk order.  The chunk count depends only on the grid size, so the result
does not depend on the number of worker threads.
"""
import numpy as np
import numba
from numba import njit, prange

# prefer OpenMP; an outdated TBB otherwise triggers a warning on first launch
numba.config.THREADING_LAYER_PRIORITY = ["omp", "workqueue", "tbb"]

STENCIL = {2: 2, 4: 4, 5: 5}
BLOCK = 1024
OFFSET = {2: 0, 4: 1, 5: 2}
FORCE_ORDER = 5
FS = STENCIL[FORCE_ORDER]
ZPAD = 8
CHUNK_BYTES = 1 << 27


@njit(inline="always", cache=True)
def _weights(t, order, w, d, dd):
    if order == 2:
        w[0] = 1.0 - t
        w[1] = t
        d[0] = -1.0
        d[1] = 1.0
        dd[0] = 0.0
        dd[1] = 0.0
    elif order == 4:
        s = 1.0 - t
        t2 = t * t
        t3 = t2 * t
        w[0] = s * s * s / 6.0
        w[1] = (3.0 * t3 - 6.0 * t2 + 4.0) / 6.0
        w[2] = (-3.0 * t3 + 3.0 * t2 + 3.0 * t + 1.0) / 6.0
        w[3] = t3 / 6.0
        d[0] = -0.5 * s * s
        d[1] = 0.5 * (3.0 * t2 - 4.0 * t)
        d[2] = 0.5 * (-3.0 * t2 + 2.0 * t + 1.0)
        d[3] = 0.5 * t2
        dd[0] = s
        dd[1] = 3.0 * t - 2.0
        dd[2] = 1.0 - 3.0 * t
        dd[3] = t
    else:
        s = 1.0 - t
        t2 = t * t
        t3 = t2 * t
        t4 = t3 * t
        w[0] = s * s * s * s / 24.0
        w[1] = (11.0 - 12.0 * t - 6.0 * t2 + 12.0 * t3 - 4.0 * t4) / 24.0
        w[2] = (11.0 + 12.0 * t - 6.0 * t2 - 12.0 * t3 + 6.0 * t4) / 24.0
        w[3] = (1.0 + 4.0 * t + 6.0 * t2 + 4.0 * t3 - 4.0 * t4) / 24.0
        w[4] = t4 / 24.0
        d[0] = -s * s * s / 6.0
        d[1] = (-3.0 - 3.0 * t + 9.0 * t2 - 4.0 * t3) / 6.0
        d[2] = (3.0 - 3.0 * t - 9.0 * t2 + 6.0 * t3) / 6.0
        d[3] = (1.0 + 3.0 * t + 3.0 * t2 - 4.0 * t3) / 6.0
        d[4] = t3 / 6.0
        dd[0] = 0.5 * s * s
        dd[1] = 0.5 * (-1.0 + 6.0 * t - 4.0 * t2)
        dd[2] = 0.5 * (-1.0 - 6.0 * t + 6.0 * t2)
        dd[3] = 0.5 * (1.0 + 2.0 * t - 4.0 * t2)
        dd[4] = 0.5 * t2


@njit(inline="always", cache=True)
def _force_weights(t, w, d, dd):
    # FORCE_ORDER weights padded with zero lanes up to ZPAD; storing the zeros
    # here lets the compiler drop those lanes from the unrolled z loops
    _weights(t, FORCE_ORDER, w, d, dd)
    for c in range(FS, ZPAD):
        w[c] = 0.0
        d[c] = 0.0
        dd[c] = 0.0


@njit(inline="always", cache=True)
def _locate(xa, L, h, order):
    u = (xa + L) / h
    if order == 5:
        u += 0.5
    base = np.floor(u)
    t = u - base
    first = np.int64(base)
    if order == 4:
        first -= 1
    elif order == 5:
        first -= 2
    return first, t


def deposit_chunks(n, ncomp):
    """Number of private grids a deposit is split into; depends on the grid only."""
    size = 8 * ncomp * n * (n + 3) * (n + ZPAD)
    return int(max(1, min(8, CHUNK_BYTES // size)))


@njit(parallel=True, cache=True)
def _deposit_chunks(x, vals, grad, L, h, order, out):
    # out[ch, comp, ix, iy, iz]; chunk ch takes a fixed contiguous particle range
    S = order
    nch = out.shape[0]
    ncomp = out.shape[1]
    N = x.shape[0]
    per = (N + nch - 1) // nch
    for ch in prange(nch):
        g = out[ch]
        wx = np.empty(5)
        dx = np.empty(5)
        ddx = np.empty(5)
        wy = np.empty(5)
        dy = np.empty(5)
        ddy = np.empty(5)
        wz = np.empty(5)
        dz = np.empty(5)
        ddz = np.empty(5)
        for i in range(ch * per, min(N, (ch + 1) * per)):
            fx, tx = _locate(x[i, 0], L, h, order)
            fy, ty = _locate(x[i, 1], L, h, order)
            fz, tz = _locate(x[i, 2], L, h, order)
            _weights(tx, order, wx, dx, ddx)
            _weights(ty, order, wy, dy, ddy)
            _weights(tz, order, wz, dz, ddz)
            if grad == 0:
                for a in range(S):
                    for b in range(S):
                        wab = wx[a] * wy[b]
                        for k in range(ncomp):
                            v = vals[i, k] * wab
                            for c in range(S):
                                g[k, fx + a, fy + b, fz + c] += v * wz[c]
            else:
                k0 = 1 if grad == 2 else 0
                v0 = vals[i, 0]
                v = v0 / h
                for a in range(S):
                    for b in range(S):
                        ia = fx + a
                        ib = fy + b
                        wab = v * wx[a] * wy[b]
                        c1 = v * dx[a] * wy[b]
                        c2 = v * wx[a] * dy[b]
                        if grad == 2:
                            c0 = v0 * wx[a] * wy[b]
                            for c in range(S):
                                g[0, ia, ib, fz + c] += c0 * wz[c]
                        for c in range(S):
                            g[k0, ia, ib, fz + c] += c1 * wz[c]
                            g[k0 + 1, ia, ib, fz + c] += c2 * wz[c]
                            g[k0 + 2, ia, ib, fz + c] += wab * dz[c]


@njit(parallel=True, cache=True, fastmath=True)
def _deposit_force(x, w, L, h, out):
    # _deposit_chunks specialised to grad="both" with the FORCE_ORDER shape
    nch = out.shape[0]
    N = x.shape[0]
    per = (N + nch - 1) // nch
    for ch in prange(nch):
        g = out[ch]
        Wt = np.empty((9, ZPAD))
        for i in range(ch * per, min(N, (ch + 1) * per)):
            fx, tx = _locate(x[i, 0], L, h, FORCE_ORDER)
            fy, ty = _locate(x[i, 1], L, h, FORCE_ORDER)
            fz, tz = _locate(x[i, 2], L, h, FORCE_ORDER)
            _force_weights(tx, Wt[0], Wt[1], Wt[2])
            _force_weights(ty, Wt[3], Wt[4], Wt[5])
            _force_weights(tz, Wt[6], Wt[7], Wt[8])
            v0 = w[i, 0]
            v = v0 / h
            for a in range(FS):
                ia = fx + a
                for b in range(FS):
                    ib = fy + b
                    c0 = v0 * Wt[0, a] * Wt[3, b]
                    c1 = v * Wt[1, a] * Wt[3, b]
                    c2 = v * Wt[0, a] * Wt[4, b]
                    c3 = v * Wt[0, a] * Wt[3, b]
                    for c in range(FS):
                        g[0, ia, ib, fz + c] += c0 * Wt[6, c]
                        g[1, ia, ib, fz + c] += c1 * Wt[6, c]
                        g[2, ia, ib, fz + c] += c2 * Wt[6, c]
                        g[3, ia, ib, fz + c] += c3 * Wt[7, c]


def deposit(x, vals, L, h, n, order=2, grad=False):
    """Scatter per-particle values onto the grid.

    Returns an array of shape (k, n, n, n) holding sum_i vals[i] * W(node; x_i).
    With ``grad=True`` the three components of sum_i vals[i, 0] * dW/dx_i are
    returned instead, and with ``grad="both"`` the value deposit of vals[:, 0]
    followed by those three components.  No volume normalisation is applied.
    """
    x = np.ascontiguousarray(x, dtype=np.float64)
    vals = np.ascontiguousarray(vals, dtype=np.float64)
    if vals.ndim == 1:
        vals = vals[:, None]
    mode = 2 if grad == "both" else int(bool(grad))
    ncomp = (vals.shape[1], 3, 4)[mode]
    if x.shape[0] == 0:
        return np.zeros((ncomp, n, n, n))
    # padded axes keep the component planes off power-of-two strides
    out = np.zeros((deposit_chunks(n, ncomp), ncomp, n, n + 3, n + ZPAD))
    if mode == 2 and order == FORCE_ORDER:
        _deposit_force(x, vals, float(L), float(h), out)
    else:
        _deposit_chunks(x, vals, mode, float(L), float(h), int(order), out)
    total = out[0]
    for k in range(1, out.shape[0]):
        total += out[k]
    return np.ascontiguousarray(total[:, :, :n, :n])


@njit(parallel=True, cache=True)
def _gather(x, fields, L, h, order, out):
    S = order
    ncomp = fields.shape[0]
    N = x.shape[0]
    for blk in prange((N + BLOCK - 1) // BLOCK):
        Wt = np.empty((9, 5))
        for i in range(blk * BLOCK, min(N, (blk + 1) * BLOCK)):
            fx, tx = _locate(x[i, 0], L, h, order)
            fy, ty = _locate(x[i, 1], L, h, order)
            fz, tz = _locate(x[i, 2], L, h, order)
            _weights(tx, order, Wt[0], Wt[1], Wt[2])
            _weights(ty, order, Wt[3], Wt[4], Wt[5])
            _weights(tz, order, Wt[6], Wt[7], Wt[8])
            for k in range(ncomp):
                acc = 0.0
                for a in range(S):
                    for b in range(S):
                        sz = 0.0
                        for c in range(S):
                            sz += fields[k, fx + a, fy + b, fz + c] * Wt[6, c]
                        acc += sz * Wt[0, a] * Wt[3, b]
                out[i, k] = acc


def gather(x, fields, L, h, order=2):
    """Interpolate grid components ``fields`` (k, n, n, n) to particle positions."""
    x = np.ascontiguousarray(x, dtype=np.float64)
    fields = np.ascontiguousarray(fields, dtype=np.float64)
    out = np.empty((x.shape[0], fields.shape[0]))
    if x.shape[0]:
        _gather(x, fields, float(L), float(h), int(order), out)
    return out


@njit(parallel=True, cache=True, fastmath=True)
def _force_gather(x, phi, psi, L, h, E, hess, gam):
    # FORCE_ORDER B-spline: E = -grad(interp phi), hess = Hessian(interp phi) as
    # (xx, yy, zz, xy, xz, yz), gam[b*3+a] = d_a(interp psi_b).
    N = x.shape[0]
    h2 = h * h
    for blk in prange((N + BLOCK - 1) // BLOCK):
        Wt = np.empty((9, ZPAD))
        for i in range(blk * BLOCK, min(N, (blk + 1) * BLOCK)):
            fx, tx = _locate(x[i, 0], L, h, FORCE_ORDER)
            fy, ty = _locate(x[i, 1], L, h, FORCE_ORDER)
            fz, tz = _locate(x[i, 2], L, h, FORCE_ORDER)
            _force_weights(tx, Wt[0], Wt[1], Wt[2])
            _force_weights(ty, Wt[3], Wt[4], Wt[5])
            _force_weights(tz, Wt[6], Wt[7], Wt[8])
            gx = gy = gz = 0.0
            hxx = hyy = hzz = hxy = hxz = hyz = 0.0
            g0 = g1 = g2 = g3 = g4 = g5 = g6 = g7 = g8 = 0.0
            for a in range(FS):
                ix = fx + a
                for b in range(FS):
                    iy = fy + b
                    s0 = s1 = s2 = 0.0
                    u0 = u1 = v0 = v1 = r0 = r1 = 0.0
                    for c in range(ZPAD):
                        iz = fz + c
                        wz = Wt[6, c]
                        dz = Wt[7, c]
                        f = phi[ix, iy, iz]
                        s0 += f * wz
                        s1 += f * dz
                        s2 += f * Wt[8, c]
                        q = psi[0, ix, iy, iz]
                        u0 += q * wz
                        u1 += q * dz
                        q = psi[1, ix, iy, iz]
                        v0 += q * wz
                        v1 += q * dz
                        q = psi[2, ix, iy, iz]
                        r0 += q * wz
                        r1 += q * dz
                    w_ab = Wt[0, a] * Wt[3, b]
                    dx_b = Wt[1, a] * Wt[3, b]
                    dy_a = Wt[0, a] * Wt[4, b]
                    gx += s0 * dx_b
                    gy += s0 * dy_a
                    gz += s1 * w_ab
                    hxx += s0 * Wt[2, a] * Wt[3, b]
                    hyy += s0 * Wt[0, a] * Wt[5, b]
                    hzz += s2 * w_ab
                    hxy += s0 * Wt[1, a] * Wt[4, b]
                    hxz += s1 * dx_b
                    hyz += s1 * dy_a
                    g0 += u0 * dx_b
                    g1 += u0 * dy_a
                    g2 += u1 * w_ab
                    g3 += v0 * dx_b
                    g4 += v0 * dy_a
                    g5 += v1 * w_ab
                    g6 += r0 * dx_b
                    g7 += r0 * dy_a
                    g8 += r1 * w_ab
            E[i, 0] = -gx / h
            E[i, 1] = -gy / h
            E[i, 2] = -gz / h
            hess[i, 0] = hxx / h2
            hess[i, 1] = hyy / h2
            hess[i, 2] = hzz / h2
            hess[i, 3] = hxy / h2
            hess[i, 4] = hxz / h2
            hess[i, 5] = hyz / h2
            gam[i, 0] = g0 / h
            gam[i, 1] = g1 / h
            gam[i, 2] = g2 / h
            gam[i, 3] = g3 / h
            gam[i, 4] = g4 / h
            gam[i, 5] = g5 / h
            gam[i, 6] = g6 / h
            gam[i, 7] = g7 / h
            gam[i, 8] = g8 / h


def _padded(f):
    # zero lanes past the stencil, and strides off powers of two
    n = f.shape[-1]
    out = np.zeros(f.shape[:-2] + (n + 3, n + ZPAD))
    out[..., :n, :n] = f
    return out


def force_gather(x, phi, psi, L, h):
    """-grad, Hessian of the interpolated phi and gradient of the interpolated psi."""
    x = np.ascontiguousarray(x, dtype=np.float64)
    N = x.shape[0]
    E = np.empty((N, 3))
    hess = np.empty((N, 6))
    gam = np.empty((N, 9))
    if N:
        _force_gather(x, _padded(phi), _padded(psi),
                      float(L), float(h), E, hess, gam)
    return E, hess, gam


@njit(parallel=True, cache=True, fastmath=True)
def _grad_gather(x, phi, L, h, E):
    N = x.shape[0]
    for blk in prange((N + BLOCK - 1) // BLOCK):
        Wt = np.empty((9, ZPAD))
        for i in range(blk * BLOCK, min(N, (blk + 1) * BLOCK)):
            fx, tx = _locate(x[i, 0], L, h, FORCE_ORDER)
            fy, ty = _locate(x[i, 1], L, h, FORCE_ORDER)
            fz, tz = _locate(x[i, 2], L, h, FORCE_ORDER)
            _force_weights(tx, Wt[0], Wt[1], Wt[2])
            _force_weights(ty, Wt[3], Wt[4], Wt[5])
            _force_weights(tz, Wt[6], Wt[7], Wt[8])
            gx = gy = gz = 0.0
            for a in range(FS):
                for b in range(FS):
                    s0 = s1 = 0.0
                    for c in range(ZPAD):
                        f = phi[fx + a, fy + b, fz + c]
                        s0 += f * Wt[6, c]
                        s1 += f * Wt[7, c]
                    gx += s0 * Wt[1, a] * Wt[3, b]
                    gy += s0 * Wt[0, a] * Wt[4, b]
                    gz += s1 * Wt[0, a] * Wt[3, b]
            E[i, 0] = -gx / h
            E[i, 1] = -gy / h
            E[i, 2] = -gz / h


def field_gather(x, phi, L, h):
    """-grad of the FORCE_ORDER spline interpolant of ``phi`` at the particles."""
    x = np.ascontiguousarray(x, dtype=np.float64)
    E = np.empty((x.shape[0], 3))
    if x.shape[0]:
        _grad_gather(x, _padded(phi), float(L), float(h), E)
    return E


@njit(cache=True)
def species_sums(w, p, E, hess, gam):
    """Sequential weighted sums used by the damping functional.

    Returns (Hp, Gp, H, G, HE, GE): sum w*Hess.p, sum w*Gam.p, sum w*Hess (3x3),
    sum w*Gam (3x3), sum w*Hess.E, sum w*Gam.E.
    """
    Hp = np.zeros(3)
    Gp = np.zeros(3)
    Hs = np.zeros((3, 3))
    Gs = np.zeros((3, 3))
    HE = np.zeros(3)
    GE = np.zeros(3)
    Hm = np.empty((3, 3))
    for i in range(w.shape[0]):
        wi = w[i]
        Hm[0, 0] = hess[i, 0]
        Hm[1, 1] = hess[i, 1]
        Hm[2, 2] = hess[i, 2]
        Hm[0, 1] = hess[i, 3]
        Hm[1, 0] = hess[i, 3]
        Hm[0, 2] = hess[i, 4]
        Hm[2, 0] = hess[i, 4]
        Hm[1, 2] = hess[i, 5]
        Hm[2, 1] = hess[i, 5]
        for b in range(3):
            hp = 0.0
            gp = 0.0
            he = 0.0
            ge = 0.0
            for a in range(3):
                g = gam[i, 3 * b + a]
                hp += Hm[b, a] * p[i, a]
                gp += g * p[i, a]
                he += Hm[b, a] * E[i, a]
                ge += g * E[i, a]
                Hs[b, a] += wi * Hm[b, a]
                Gs[b, a] += wi * g
            Hp[b] += wi * hp
            Gp[b] += wi * gp
            HE[b] += wi * he
            GE[b] += wi * ge
    return Hp, Gp, Hs, Gs, HE, GE


@njit(cache=True)
def damping_sum(w, p, hess, gam):
    """sum w*Hess.p and sum w*Gam.p (the momentum-dependent part of species_sums)."""
    Hp = np.zeros(3)
    Gp = np.zeros(3)
    for i in range(w.shape[0]):
        wi = w[i]
        px = p[i, 0]
        py = p[i, 1]
        pz = p[i, 2]
        Hp[0] += wi * (hess[i, 0] * px + hess[i, 3] * py + hess[i, 4] * pz)
        Hp[1] += wi * (hess[i, 3] * px + hess[i, 1] * py + hess[i, 5] * pz)
        Hp[2] += wi * (hess[i, 4] * px + hess[i, 5] * py + hess[i, 2] * pz)
        for b in range(3):
            Gp[b] += wi * (gam[i, 3 * b] * px + gam[i, 3 * b + 1] * py + gam[i, 3 * b + 2] * pz)
    return Hp, Gp


@njit(cache=True)
def weighted_sum(w, v):
    """Sequential compensated (Neumaier) sum_i w_i v_i for v of shape (N, k)."""
    out = np.zeros(v.shape[1])
    comp = np.zeros(v.shape[1])
    for i in range(w.shape[0]):
        for k in range(v.shape[1]):
            term = w[i] * v[i, k]
            s = out[k]
            total = s + term
            if abs(s) >= abs(term):
                comp[k] += (s - total) + term
            else:
                comp[k] += (term - total) + s
            out[k] = total
    return out + comp


def set_threads(count):
    """Cap numba worker threads (bounded by the pool size fixed at import)."""
    count = max(1, min(int(count), numba.config.NUMBA_NUM_THREADS))
    numba.set_num_threads(count)
    return count
