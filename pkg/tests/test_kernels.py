import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from rvprd import kernels


def _weights(t, order):
    w, d, dd = np.empty(5), np.empty(5), np.empty(5)
    kernels._weights.py_func(t, order, w, d, dd)
    k = kernels.STENCIL[order]
    return w[:k], d[:k], dd[:k]


@settings(max_examples=50, deadline=None)
@given(st.floats(0.0, 1.0, exclude_max=True), st.sampled_from([2, 4, 5]))
def test_weights_partition_unity_and_reproduce_linears(t, order):
    w, d, dd = _weights(t, order)
    nodes = np.arange(len(w)) - kernels.OFFSET[order]
    u = t - 0.5 if order == 5 else t
    assert abs(w.sum() - 1.0) <= 1e-14
    assert abs(d.sum()) <= 1e-14 and abs(dd.sum()) <= 1e-14
    assert abs((w * nodes).sum() - u) <= 1e-14
    assert abs((d * nodes).sum() - 1.0) <= 1e-14


@pytest.mark.parametrize("order", [4, 5])
def test_weight_derivatives_match_finite_differences(order):
    step = 1e-6
    for t in (0.1, 0.37, 0.8):
        wp, dp, _ = _weights(t + step, order)
        wm, dm, _ = _weights(t - step, order)
        _, d, dd = _weights(t, order)
        assert np.allclose((wp - wm) / (2 * step), d, atol=1e-8)
        assert np.allclose((dp - dm) / (2 * step), dd, atol=1e-8)


def test_quartic_shape_is_continuous_across_cells():
    # node j seen from the left cell (t -> 1) and from the right cell (t = 0)
    w1, d1, dd1 = _weights(1.0 - 1e-12, 5)
    w0, d0, dd0 = _weights(0.0, 5)
    assert np.allclose(w1[1:], w0[:-1], atol=1e-10)
    assert np.allclose(d1[1:], d0[:-1], atol=1e-10)
    assert np.allclose(dd1[1:], dd0[:-1], atol=1e-10)


def test_force_gather_derivatives_are_consistent():
    n, L = 16, 1.0
    h = 2 * L / (n - 1)
    rng = np.random.default_rng(3)
    phi = rng.normal(size=(n, n, n))
    psi = rng.normal(size=(3, n, n, n))
    x = rng.uniform(-0.4, 0.4, (20, 3))
    E, hess, gam = kernels.force_gather(x, phi, psi, L, h)
    assert np.allclose(E, kernels.field_gather(x, phi, L, h), rtol=1e-13, atol=1e-13)
    step = 1e-6
    pairs = [(0, 0), (1, 1), (2, 2), (0, 1), (0, 2), (1, 2)]
    for a in range(3):
        e = np.zeros(3)
        e[a] = step
        Ep, _, gp = kernels.force_gather(x + e, phi, psi, L, h)
        Em, _, gm = kernels.force_gather(x - e, phi, psi, L, h)
        dE = (Ep - Em) / (2 * step)
        for k, (i, j) in enumerate(pairs):
            if j == a:
                assert np.allclose(-dE[:, i], hess[:, k], rtol=1e-6, atol=1e-4)
        # Gamma[b, a] = d_a interp(psi_b): compare with the gather of psi_b
        for b in range(3):
            vp = kernels.gather(x + e, psi[b][None], L, h, kernels.FORCE_ORDER)[:, 0]
            vm = kernels.gather(x - e, psi[b][None], L, h, kernels.FORCE_ORDER)[:, 0]
            assert np.allclose((vp - vm) / (2 * step), gam[:, 3 * b + a], rtol=1e-6, atol=1e-4)


def test_compensated_weighted_sum():
    w = np.array([1.0, 1e-16, 1e-16, -1.0])
    v = np.ones((4, 1))
    assert kernels.weighted_sum(w, v)[0] == 2e-16
