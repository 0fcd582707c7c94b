import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from heatprobe.kernel import (DomainError, KernelConfig, envelope_constant,
                              eval_green, free_space, free_space_gap,
                              kernel_check_rows, kernel_mass, l2_window,
                              l2q_upper, local_l2_lower, semigroup_residual)

CFG = KernelConfig()


def image_sum_oracle(t, x, y, n_images=30):
    """Independent reimplementation of the reflection expansion."""
    total = 0.0
    for n in range(-n_images, n_images + 1):
        for arg in (x - y - 2 * n, x + y - 2 * n):
            total += math.exp(-arg * arg / (4 * t)) / math.sqrt(4 * math.pi * t)
    return total


def test_large_time_constant_mode():
    assert abs(eval_green(CFG, 10.0, 0.3, 0.7) - 1.0) <= 1e-12


def test_small_time_matches_image_oracle():
    got = eval_green(CFG, 0.01, 0.5, 0.5)
    assert abs(got - image_sum_oracle(0.01, 0.5, 0.5)) <= 1e-14 * got
    # dominant term
    assert abs(got - 1 / math.sqrt(4 * math.pi * 0.01)) < 1e-4


@given(st.floats(1e-6, 5.0), st.floats(0.0, 1.0), st.floats(0.0, 1.0))
def test_symmetry_exact(t, x, y):
    assert eval_green(CFG, t, x, y) == eval_green(CFG, t, y, x)


@given(st.floats(1e-4, 2.0), st.floats(0.0, 1.0), st.floats(0.0, 1.0))
def test_method_agreement(t, x, y):
    cos = eval_green(KernelConfig(method="cosine-series"), t, x, y)
    img = eval_green(KernelConfig(method="image-sum"), t, x, y)
    assert abs(cos - img) <= 10 * CFG.truncation_tol


def test_domain_errors():
    with pytest.raises(DomainError):
        eval_green(CFG, 0.0, 0.5, 0.5)
    with pytest.raises(DomainError):
        eval_green(CFG, -1.0, 0.5, 0.5)
    with pytest.raises(DomainError):
        eval_green(CFG, 1.0, 1.5, 0.5)


def test_mass_conservation():
    for t, x in [(0.05, 0.5), (1e-4, 0.01), (2.0, 0.9)]:
        assert abs(kernel_mass(CFG, t, x) - 1.0) <= 1e-8


def test_dirichlet_loses_mass():
    cfg = KernelConfig(boundary="dirichlet")
    assert kernel_mass(cfg, 0.5, 0.5) < 0.5
    # but stays essentially 1 deep inside at small times
    assert abs(kernel_mass(cfg, 1e-4, 0.5) - 1.0) <= 1e-8


def test_semigroup_identity():
    assert semigroup_residual(CFG, 0.2, 0.2, 0.1, 0.5, 0.5) <= 1e-6
    assert semigroup_residual(CFG, 0.3, 0.5, 0.1, 0.2, 0.8) <= 1e-6
    # degenerate window: compare relative to the large value
    res = semigroup_residual(CFG, 0.101, 0.101, 0.1, 0.3, 0.3)
    mag = eval_green(CFG, 2e-3, 0.3, 0.3)
    assert res / mag <= 1e-6
    with pytest.raises(DomainError):
        semigroup_residual(CFG, 0.1, 0.2, 0.15, 0.5, 0.5)


def test_semigroup_dirichlet():
    cfg = KernelConfig(boundary="dirichlet")
    assert semigroup_residual(cfg, 0.3, 0.5, 0.1, 0.2, 0.8) <= 1e-6


def test_l2_window_bound_and_monotonicity():
    a, b = 0.01, 0.02
    val = l2_window(CFG, a, b, 0.5)
    assert 0 < val <= (b - a) / (math.sqrt(b) + math.sqrt(a))
    # free-space heuristic: 2/sqrt(8 pi) * (sqrt(b) - sqrt(a))
    heur = 2 / math.sqrt(8 * math.pi) * (math.sqrt(b) - math.sqrt(a))
    assert abs(val - heur) / heur < 0.01
    v1 = l2_window(CFG, 0.25, 0.5, 0.1)
    v2 = l2_window(CFG, 0.25, 1.0, 0.1)
    assert 0 < v1 < v2
    with pytest.raises(DomainError):
        l2_window(CFG, 0.0, 0.1, 0.5)
    # vanishing window
    assert l2_window(CFG, 0.1, 0.1 + 1e-9, 0.5) < 1e-7


def test_local_l2_lower_ratio():
    r3 = local_l2_lower(CFG, 0.5, 1e-3, 0.5)
    r4 = local_l2_lower(CFG, 0.5, 1e-4, 0.5)
    assert r3 >= 0.3 and r4 >= 0.3
    assert abs(r4 - r3) / r3 <= 0.05
    assert local_l2_lower(CFG, 1e-3, 1e-3, 0.5) >= 0.3
    # free-space value 1/sqrt(2 pi)
    assert abs(r3 - 1 / math.sqrt(2 * math.pi)) < 0.05
    with pytest.raises(DomainError):
        local_l2_lower(CFG, 0.5, 0.25, 0.05)  # window exits [0,1]


def test_l2q_upper_stability():
    for q in (0.5, 1.0, 1.25):
        ratios = [l2q_upper(CFG, 0.5, eps, 0.5, q) for eps in (1e-2, 1e-3, 1e-4)]
        assert max(ratios) / min(ratios) - 1 <= 0.10, (q, ratios)
    assert l2q_upper(CFG, 0.5, 1e-3, 0.5, 1.0) <= 1.0
    with pytest.raises(DomainError):
        l2q_upper(CFG, 0.5, 1e-3, 0.5, 1.5)


def test_l2q_upper_dirichlet():
    cfg = KernelConfig(boundary="dirichlet")
    ratios = [l2q_upper(cfg, 0.5, eps, 0.5, 1.0) for eps in (1e-2, 1e-3)]
    assert max(ratios) / min(ratios) - 1 <= 0.10


def test_free_space_proximity_small_times():
    # At boundary margin 0.1 the image terms stay below 1e-3 only for
    # t <= ~1e-3; by t = 0.1 they are order one even at x = y = 0.5
    # (2 e^{-4 pi^2 t} ~ 0.04 per image), which the diagnostic records.
    ts = np.geomspace(1e-6, 1e-3, 6)
    xs = np.linspace(0.1, 0.9, 9)
    assert free_space_gap(CFG, ts, xs) <= 1e-3
    assert free_space_gap(CFG, [0.1], [0.5]) > 0.1


def test_envelope_constant_grows():
    # The rate-1/2 Gaussian envelope cannot hold with a uniform constant.
    small = envelope_constant(CFG, [1e-3], np.linspace(0.1, 0.9, 9))
    large = envelope_constant(CFG, [0.05], np.linspace(0.1, 0.9, 9))
    assert large > 10 * small


def test_positivity_lattice_small():
    rows = kernel_check_rows(CFG, nx=20, nt=10, n_semigroup=25)
    by = {r["check"]: r for r in rows}
    assert by["positivity"]["pass"]
    assert by["symmetry"]["value"] == 0.0
    assert by["method-agreement"]["pass"]
    assert by["mass"]["pass"]
    assert by["semigroup"]["pass"]


def test_truncation_budget():
    from heatprobe.kernel import TruncationError
    tiny = KernelConfig(method="cosine-series", max_terms=10)
    with pytest.raises(TruncationError):
        eval_green(tiny, 1e-6, 0.5, 0.5)
