import math

import numpy as np
import pytest

from heatprobe.kernel import KernelConfig, eval_green, l2_window
from heatprobe._quad import adaptive_gauss_legendre
from heatprobe.malliavin import (AnchorLadder, ContractError, QuadratureSet,
                                 bloc_scaling, eigen_scaling, make_anchor_ladder,
                                 one_point_matrix, parabolic_separation,
                                 propagate_derivatives, quadrature_nodes,
                                 two_point_matrix, two_point_scaling)
from heatprobe.malliavin import _scaling_paths
from heatprobe.solver import (GridSpec, RngSpec, bounded_smooth_model,
                              constant_model, linear_test_model, simulate)


def small_grid():
    return GridSpec(nx=16, T=0.125, dt=2 ** -10)  # lam = 1/4


def test_quadrature_weights_cover_the_time_axis():
    g = small_grid()
    quad = quadrature_nodes(g, 0.125, n_nodes=32)
    assert abs(quad.node_weights.sum() - 0.125) < 1e-12
    assert np.all(np.diff(quad.node_steps) > 0)
    assert quad.node_steps.min() >= 0
    # anchors insert exact stratum edges
    quad2 = quadrature_nodes(g, 0.125, n_nodes=32, anchors=[0.0625])
    assert abs(quad2.node_weights.sum() - 0.125) < 1e-12
    assert quad2.n_nodes >= quad.n_nodes


def test_derivative_zero_for_future_noise():
    g = small_grid()
    model = bounded_smooth_model(1)
    traj = simulate(g, model, RngSpec(master_seed=1), retain_noise=True)
    quad = quadrature_nodes(g, 0.125, n_nodes=16)
    slab = propagate_derivatives(traj, model, quad, stream_times=[0.0625])
    mid = g.time_index(0.0625)
    early = slab.snapshots[mid]
    future = quad.node_steps >= mid
    assert np.abs(early[future]).max() == 0.0
    assert np.abs(early[~future]).max() > 0.0


def test_missing_noise_is_contract_error():
    g = small_grid()
    model = bounded_smooth_model(1)
    traj = simulate(g, model, RngSpec(master_seed=1))
    with pytest.raises(ContractError):
        propagate_derivatives(traj, model, quadrature_nodes(g, 0.125, 8))


def test_constant_sigma_matches_matrix_power_oracle():
    g = GridSpec(nx=16, T=0.125, dt=2 ** -10)
    model = constant_model(2, [[1.0, 0.2], [-0.1, 0.9]], [0.1, -0.2])
    traj = simulate(g, model, RngSpec(master_seed=3), retain_noise=True)
    quad = quadrature_nodes(g, 0.125, n_nodes=8)
    slab = propagate_derivatives(traj, model, quad)

    nx, lam = g.nx, g.dt / g.dx ** 2
    A = np.zeros((nx + 1, nx + 1))
    idx = np.arange(nx + 1)
    A[idx, idx] = 1 - 2 * lam
    A[idx[:-1], idx[:-1] + 1] += lam
    A[idx[1:], idx[1:] - 1] += lam
    A[0, 1] += lam
    A[nx, nx - 1] += lam
    S = model.sigma(np.zeros(2))
    for q in (0, 3, 7):
        step = int(quad.node_steps[q])
        P = np.linalg.matrix_power(A, g.nt - step - 1)
        for v in (2, 9):
            for k in range(2):
                for i in range(2):
                    e = np.zeros(nx + 1)
                    e[v] = nx * S[i, k]
                    assert np.abs(slab.data[q, v, k, i] - P @ e).max() <= 1e-10


def test_bump_oracle_bounded_smooth():
    # Pathwise finite difference against the linearised propagation.
    from heatprobe.solver import _advance
    g = GridSpec(nx=32, T=0.25, dt=2 ** -13)
    model = bounded_smooth_model(1)
    rng = RngSpec(master_seed=6)
    traj = simulate(g, model, rng, retain_noise=True)
    nstar, vstar = 512, 12
    quad = QuadratureSet(t=0.25, node_steps=np.array([nstar]),
                         node_weights=np.array([0.25]), nx=32)
    slab = propagate_derivatives(traj, model, quad)

    h = 1e-5
    noise = traj.noise.copy()
    noise[nstar, vstar, 0] += h
    u = traj.values[0].copy()
    for n in range(g.nt):
        u = _advance(u, noise[n], g, model)
    bump = (u[:, 0] - traj.values[-1][:, 0]) / (h * math.sqrt(g.dt / g.nx))
    ref = slab.data[0, vstar, 0, 0]
    assert np.abs(bump - ref).max() <= 0.05 * np.abs(ref).max()


def test_one_point_matrix_linear_case():
    g = GridSpec.stable(32, 0.3)
    model = linear_test_model(2)
    quad = quadrature_nodes(g, 0.3, n_nodes=64)
    c_t = l2_window(KernelConfig(), 1e-10, 0.3, 0.5)
    gammas = []
    for p in range(4):
        traj = simulate(g, model, RngSpec(master_seed=5), p, retain_noise=True)
        gm = one_point_matrix(propagate_derivatives(traj, model, quad), 0.3, 0.5)
        assert gm.is_psd()
        assert gm.gamma[0, 1] == 0.0  # independent channels
        gammas.append(gm.gamma)
    G = np.mean(gammas, axis=0)
    assert abs(G[0, 0] - c_t) <= 0.03 * c_t
    assert abs(G[1, 1] - c_t) <= 0.03 * c_t


def test_elliptic_matrix_invertible_each_path():
    g = small_grid()
    model = bounded_smooth_model(2)
    quad = quadrature_nodes(g, 0.125, n_nodes=24)
    for p in range(5):
        traj = simulate(g, model, RngSpec(master_seed=31), p, retain_noise=True)
        gm = one_point_matrix(propagate_derivatives(traj, model, quad), 0.125, 0.5)
        assert gm.is_psd()
        assert np.linalg.det(gm.gamma) > 0


def test_two_point_matrix_contracts():
    g = small_grid()
    model = bounded_smooth_model(1)
    traj = simulate(g, model, RngSpec(master_seed=7), retain_noise=True)
    quad = quadrature_nodes(g, 0.125, n_nodes=24, anchors=[0.0625])
    slab = propagate_derivatives(traj, model, quad, stream_times=[0.0625])
    tp = two_point_matrix(slab, 0.0625, 0.5, 0.125, 0.25)
    assert tp.is_psd()
    one = one_point_matrix(slab, 0.0625, 0.5)
    assert np.allclose(tp.bloc(1), one.gamma, atol=1e-14)
    assert np.array_equal(tp.bloc(2), tp.bloc(3).T)
    with pytest.raises(ContractError):
        two_point_matrix(slab, 0.125, 0.25, 0.125, 0.25)


def test_two_point_gram_recursion_equals_dense_slab():
    g = GridSpec(nx=8, T=0.125, dt=2 ** -9)
    model = bounded_smooth_model(2)
    rng = RngSpec(master_seed=9)
    traj = simulate(g, model, rng, 3, retain_noise=True)
    dense = QuadratureSet(t=0.125, node_steps=np.arange(g.nt),
                          node_weights=np.full(g.nt, g.dt), nx=8)
    slab = propagate_derivatives(traj, model, dense, stream_times=[0.0625])
    tp = two_point_matrix(slab, 0.0625, 0.5, 0.125, 0.25)
    ladder = AnchorLadder(t0=0.125, x0=0.25, entries=((0.1, "time", 0.0625, 0.5),))
    rows = _scaling_paths(model, g, rng, [1, 3], ladder)
    assert np.abs(rows[1][(0.1, "time")] - tp.matrix).max() < 1e-12


def test_linear_two_point_bloc4_matches_kernel_oracle():
    # bloc (4) = squared H-norm of the kernel difference; the oracle is a
    # time quadrature of the two-time product identity.
    cfg = KernelConfig()
    g = GridSpec.stable(48, 0.3)
    model = linear_test_model(1)
    s = g.snap_time(0.26)
    t, x, y = 0.3, 0.5, g.snap_space(0.375)
    ladder = AnchorLadder(t0=t, x0=x, entries=((parabolic_separation(t, x, s, y),
                                                "mixed", s, y),))
    rows = _scaling_paths(model, g, RngSpec(master_seed=11), [0], ladder)
    bloc4 = rows[0][list(rows[0])[0]][1, 1]

    def head(r_arr):
        r_arr = np.atleast_1d(r_arr)
        return np.array([eval_green(cfg, 2 * (t - r), x, x) for r in r_arr])

    part1 = adaptive_gauss_legendre(
        lambda tau: 2 * tau * head(t - tau ** 2), 0.0, math.sqrt(t - s), tol=1e-8)

    def mid(r_arr):
        out = []
        for r in np.atleast_1d(r_arr):
            out.append(eval_green(cfg, 2 * (t - r), x, x)
                       + eval_green(cfg, 2 * (s - r), y, y)
                       - 2 * eval_green(cfg, (t - r) + (s - r), x, y))
        return np.array(out)

    part2 = adaptive_gauss_legendre(
        lambda tau: 2 * tau * mid(s - tau ** 2), 0.0, math.sqrt(s), tol=1e-8)
    oracle = part1 + part2
    assert abs(bloc4 - oracle) <= 0.05 * oracle
    # qualitative increment bound: the norm is of the order of the
    # parabolic separation
    delta = parabolic_separation(t, x, s, y)
    assert bloc4 <= 3.0 * delta


@pytest.fixture(scope="module")
def report():
    g = GridSpec(nx=64, T=0.5, dt=2 ** -14)
    model = bounded_smooth_model(1)
    ladder = make_anchor_ladder(g)
    return g, model, two_point_scaling(model, g, RngSpec(master_seed=12),
                                       48, ladder)


class TestScalingLadder:

    def test_psd_everywhere(self, report):
        _, _, rep = report
        assert rep.psd_violations == 0

    def test_bloc_exponents(self, report):
        g, model, rep = report
        fits, _ = bloc_scaling(model, g, None, report=rep)
        assert 0.85 <= fits["bloc4"].exponent <= 1.15
        assert 0.35 <= fits["bloc23"].exponent <= 0.65
        assert -0.1 <= fits["bloc1"].exponent <= 0.1

    def test_eigen_exponents(self, report):
        g, model, rep = report
        fits, _ = eigen_scaling(model, g, None, report=rep)
        assert 0.8 <= fits["lambda_min"].exponent <= 1.2
        assert -0.15 <= fits["topd_product"].exponent <= 0.15
        assert 0.8 <= fits["lambda_min_equal_time"].exponent <= 1.2

    def test_lambda_min_strictly_decreasing(self, report):
        _, _, rep = report
        scales, lam = rep.scale_means("lambda_min", classes=["time"])
        order = np.argsort(scales)
        assert np.all(np.diff(lam[order]) > 0)

    def test_derivative_norm_bounded_over_ladder(self, report):
        g, model, rep = report
        from heatprobe._fits import loglog_fit
        scales, b1 = rep.scale_means("bloc1")
        fit = loglog_fit(scales, b1)
        assert -0.1 <= fit.exponent <= 0.1


def test_anchor_ladder_snaps_and_validates():
    g = GridSpec(nx=64, T=0.5, dt=2 ** -14)
    ladder = make_anchor_ladder(g)
    for scale, cls, s, y in ladder.entries:
        g.time_index(s), g.space_index(y)
        assert abs(parabolic_separation(0.5, 0.5, s, y) - scale) < 1e-12
    assert len({e[:2] for e in ladder.entries}) == len(ladder.entries)
