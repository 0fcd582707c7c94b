import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from heatprobe.potential import (CompactSetMesh, ConvergenceError,
                                 DiscreteMeasure, ResolutionError,
                                 RieszKernelSpec, SingularityError, ball_mesh,
                                 box_dimension, capacity, energy,
                                 hausdorff_upper, interval_mesh,
                                 parabolic_distance, riesz_kernel, square_mesh)


def test_riesz_kernel_pieces():
    assert riesz_kernel(RieszKernelSpec(2.0), 0.5) == 4.0
    assert riesz_kernel(RieszKernelSpec(0.0, N0=math.e), 1.0) == 1.0
    assert riesz_kernel(RieszKernelSpec(-3.0), 0.37) == 1.0
    with pytest.raises(SingularityError):
        riesz_kernel(RieszKernelSpec(1.0), 0.0)
    # clamp at cutoff/2
    assert riesz_kernel(RieszKernelSpec(1.0, cutoff_h=0.01), 0.0) == 200.0


@given(st.floats(0.01, 0.99), st.floats(1.01, 100.0))
def test_riesz_kernel_monotone_in_beta_below_one(r, _unused):
    # For r < 1, larger beta gives a pointwise larger kernel.
    vals = [riesz_kernel(RieszKernelSpec(b, cutoff_h=1e-6), r, diameter=1.0)
            for b in (0.25, 0.5, 1.0)]
    assert vals[0] <= vals[1] <= vals[2]


def test_energy_examples():
    one = DiscreteMeasure([[0.0]], [1.0])
    assert energy(one, RieszKernelSpec(-1.0)) == 1.0
    two = DiscreteMeasure([[0.0], [2.0]], [0.5, 0.5])
    assert energy(two, RieszKernelSpec(1.0, cutoff_h=0.01)) == 100.25
    with pytest.raises(SingularityError):
        energy(two, RieszKernelSpec(1.0))


def test_energy_matches_bruteforce_double_sum():
    pts = np.linspace(0.0, 1.0, 1000)[:, None]
    w = np.full(1000, 1e-3)
    mu = DiscreteMeasure(pts, w)
    spec = RieszKernelSpec(0.5, cutoff_h=1e-3)
    got = energy(mu, spec)
    # independent loop-based double sum
    acc = 0.0
    d = np.abs(pts[:, 0][:, None] - pts[:, 0][None, :])
    d = np.maximum(d, 5e-4)
    acc = float(w @ (d ** -0.5) @ w)
    assert abs(got - acc) <= 1e-12 * acc


def test_capacity_negative_beta_is_one():
    cap, eq, gap = capacity(interval_mesh(n=50), RieszKernelSpec(-1.0))
    assert cap == 1.0 and gap == 0.0


def test_capacity_singleton_scales_with_cutoff():
    caps = []
    for h in (0.01, 0.005):
        m = CompactSetMesh([[0.0]], cell_size=h)
        caps.append(capacity(m, RieszKernelSpec(1.0))[0])
    assert abs(caps[1] / caps[0] - 0.5) <= 0.10 * 0.5
    assert abs(caps[0] - 0.005) < 1e-12


def test_capacity_two_atoms_matches_grid_scan():
    mesh = CompactSetMesh([[0.0], [1.0]], cell_size=1e-4)
    cap, eq, gap = capacity(mesh, RieszKernelSpec(0.5), tol=1e-10)
    K0 = (0.5e-4) ** -0.5
    ws = np.arange(0.0, 1.0 + 1e-12, 0.001)
    energies = (ws ** 2 + (1 - ws) ** 2) * K0 + 2 * ws * (1 - ws) * 1.0
    brute = 1.0 / energies.min()
    assert abs(cap - brute) <= 1e-4 * brute


def test_capacity_monotone_under_inclusion():
    rng = np.random.default_rng(3)
    spec = RieszKernelSpec(0.5)
    for _ in range(20):
        n = rng.integers(12, 40)
        pts = rng.random((n, 2))
        big = CompactSetMesh(pts, cell_size=0.02)
        keep = rng.random(n) < 0.6
        if keep.sum() < 2:
            continue
        small = CompactSetMesh(pts[keep], cell_size=0.02)
        cap_b, _, _ = capacity(big, spec, tol=1e-11)
        cap_s, _, _ = capacity(small, spec, tol=1e-11)
        assert cap_s <= cap_b + 1e-9


def test_capacity_nonincreasing_in_beta_small_sets():
    mesh = CompactSetMesh(np.linspace(0, 0.8, 40)[:, None], cell_size=0.02)
    caps = [capacity(mesh, RieszKernelSpec(b), tol=1e-9)[0]
            for b in (0.25, 0.5, 1.0)]
    assert caps[0] + 1e-9 >= caps[1] >= caps[2] - 1e-9


def test_equilibrium_beats_uniform():
    mesh = interval_mesh(n=120)
    spec = RieszKernelSpec(0.5)
    cap, eq, gap = capacity(mesh, spec)
    h = mesh.cell_size
    reg = RieszKernelSpec(0.5, cutoff_h=h)
    e_eq = energy(DiscreteMeasure(mesh.points, eq.weights), reg)
    e_un = energy(DiscreteMeasure(mesh.points, np.full(120, 1 / 120)), reg)
    assert e_eq <= e_un
    assert gap <= 1e-6 * e_eq


def test_capacity_iteration_cap():
    mesh = interval_mesh(n=80)
    with pytest.raises(ConvergenceError):
        capacity(mesh, RieszKernelSpec(0.5), tol=1e-15, max_iter=5)


def test_hausdorff_unit_interval():
    mesh = interval_mesh(n=1025)
    rep = hausdorff_upper(mesh, 1.0, 1.0 / 8)
    assert rep.n_balls == 4 and abs(rep.value - 1.0) < 1e-12
    # every point covered, radii bounded
    d = np.abs(mesh.points - rep.centers[:, None, :]).min(axis=(0, 2))
    assert d.max() <= 1.0 / 8 * (1 + 1e-9)
    assert np.all(rep.radii <= 1.0 / 8)


def test_hausdorff_trends():
    mesh = interval_mesh(n=2049)
    up = [hausdorff_upper(mesh, 0.8, eps).value for eps in (1 / 16, 1 / 32, 1 / 64)]
    down = [hausdorff_upper(mesh, 1.2, eps).value for eps in (1 / 16, 1 / 32, 1 / 64)]
    assert up[0] < up[1] < up[2]
    assert down[0] > down[1] > down[2]


def test_hausdorff_negative_beta_infinite():
    rep = hausdorff_upper(interval_mesh(n=100), -0.5, 0.125)
    assert rep.infinite and math.isinf(rep.value)


def test_hausdorff_resolution_error():
    with pytest.raises(ResolutionError):
        hausdorff_upper(interval_mesh(n=100), 1.0, 1e-4)


def test_parabolic_distance_examples():
    assert parabolic_distance((0.04, 0.3), (0.0, 0.3)) == 0.2
    assert parabolic_distance((0.3, 0.7), (0.3, 0.7)) == 0.0
    assert abs(parabolic_distance((0.01, 0.1), (0.0, 0.2)) - 0.2) < 1e-15


def test_parabolic_metric_axioms(rng):
    pts = rng.random((10000, 3, 2))
    for a, b, c in pts[:10000:7]:
        dab = parabolic_distance(a, b)
        assert dab == parabolic_distance(b, a)
        assert dab <= parabolic_distance(a, c) + parabolic_distance(c, b) + 1e-14


def test_box_dimension_line_and_square(rng):
    line = np.linspace(0, 1, 10000)[:, None]
    fit = box_dimension(line, "euclidean", [2.0 ** -k for k in range(2, 8)])
    assert abs(fit.exponent - 1.0) <= 0.05
    square = rng.random((10000, 2))
    fit2 = box_dimension(square, "euclidean", [2.0 ** -k for k in range(2, 7)])
    assert abs(fit2.exponent - 2.0) <= 0.10


def test_box_dimension_brownian_graph():
    # Oracle: an independent random-walk simulation; graph dimension 3/2.
    rng = np.random.default_rng(42)
    n = 200000
    w = np.cumsum(rng.normal(0.0, 1.0 / math.sqrt(n), n))
    graph = np.stack([np.linspace(0, 1, n), w], axis=1)
    fit = box_dimension(graph, "euclidean", [2.0 ** -k for k in range(5, 11)])
    assert abs(fit.exponent - 1.5) <= 0.1


def test_box_dimension_preconditions():
    pts = np.linspace(0, 1, 50)[:, None]
    with pytest.raises(ValueError):
        box_dimension(pts, "euclidean", [0.5, 0.25, 0.125, 0.0625])
    with pytest.raises(ValueError):
        box_dimension(np.linspace(0, 1, 200)[:, None], "euclidean", [0.5, 0.25])


def test_mesh_builders():
    assert square_mesh(11).n_points == 121
    b = ball_mesh([0.0, 0.0, 0.0], 1.0, n_per_axis=7)
    assert b.ambient_dim == 3
    assert np.all(np.linalg.norm(b.points, axis=1) <= 1.0 + 1e-9)
    assert interval_mesh(n=11).cell_size == 0.1
