import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sheetzero.closed_form import ehm_dimension
from sheetzero.dimension import (
    box_count,
    box_counts,
    cantor_occupancy,
    doubling_harness,
    ehm_harness,
    fit_dimension,
    good_square_harness,
    interval_occupancy,
    image_counts,
    projection_harness,
)
from sheetzero.errors import RegimeError
from sheetzero.geometry import build_projection, project_cells
from sheetzero.zero_set import grid_from_indices


def full_window(n, N):
    idx = np.stack(np.meshgrid(*[np.arange(2**n, 2 ** (n + 1))] * N, indexing="ij"), -1).reshape(-1, N)
    return grid_from_indices(idx, n)


@pytest.mark.parametrize("N", [1, 2, 3])
def test_box_count_full_window(N):
    n = 5 if N < 3 else 3
    g = full_window(n, N)
    for j in range(n + 1):
        assert box_count(g, j) == 2 ** (j * N)


def test_box_count_single_and_siblings():
    g = grid_from_indices(np.array([[77, 90]]), 7)
    assert all(c == 1 for c in box_counts(g))
    g = grid_from_indices(np.array([[76, 90], [77, 90]]), 7)
    assert box_count(g, 7) == 2 and box_count(g, 6) == 1


def test_counts_nondecreasing_with_level():
    rng = np.random.default_rng(0)
    g = grid_from_indices(rng.integers(64, 128, size=(200, 2)), 6)
    c = box_counts(g)
    assert np.all(np.diff(c) >= 0)


@pytest.mark.parametrize("N", [1, 2, 3])
def test_fit_exact_power_law(N):
    levels = np.arange(10)
    est = fit_dimension(2.0 ** (N * levels), levels)
    assert est.slope == pytest.approx(N, abs=1e-12) and est.r2 == pytest.approx(1.0)
    assert est.window == (2, 8)


def test_fit_constant_counts():
    est = fit_dimension(np.ones(8))
    assert est.slope == 0.0 and est.degenerate


def test_fit_needs_three_levels():
    with pytest.raises(ValueError):
        fit_dimension([1, 2, 4, 8], window=(0, 1))


def test_cantor_slope():
    g = cantor_occupancy(12)
    est = fit_dimension(box_counts(g), np.arange(13))
    assert abs(est.slope - math.log(2) / math.log(3)) <= 0.05


@pytest.mark.parametrize("N,d,target", [(1, 2, 0.0), (2, 2, 1.0), (2, 3, 0.5)])
def test_ehm_targets(N, d, target):
    s = ehm_harness(N, d, 7, [1, 2])
    assert s.target == target == ehm_dimension(N, d)


def test_ehm_repeatable():
    a = ehm_harness(2, 1, 8, [5, 6])
    b = ehm_harness(2, 1, 8, [5, 6])
    assert a.rows == b.rows and a.slopes == b.slopes


def test_ehm_brownian_zeros_quick():
    s = ehm_harness(1, 1, 14, list(range(8)))
    assert abs(s.mean_slope - 0.5) < 0.2


def test_projection_empty_zero_set():
    p = projection_harness(4, 8, 2, [1, 2], N=2)
    assert p.source.mean_slope == 0.0 and p.max_gap == 0.0


def test_projection_cover_bound_on_simulated():
    p = projection_harness(2, 8, 2, [3], N=2)
    assert p.cover_violations == 0


@given(st.integers(0, 1000))
@settings(max_examples=10, deadline=None)
def test_projected_slope_not_larger(seed):
    rng = np.random.default_rng(seed)
    n = 9
    # a random walk of occupied cells, then its image under a random rank-1 projection
    steps = rng.integers(-1, 2, size=(3000, 2))
    cells = np.unique(np.clip(np.cumsum(steps, axis=0) + 768, 512, 1023), axis=0)
    p = build_projection(theta=float(rng.uniform(0, math.pi)))
    levels = np.arange(n + 1)
    src = [len(np.unique(cells >> (n - j), axis=0)) for j in levels]
    img = []
    for j in levels:
        img.append(len(project_cells(np.unique(cells >> (n - j), axis=0), int(j), p)))
    a = fit_dimension(src, levels).slope
    b = fit_dimension(img, levels).slope
    assert b <= a + 0.1


def test_doubling_single_point():
    s = doubling_harness(3, grid_from_indices(np.array([[1500]]), 11), 11, [1])
    assert s.slopes == [0.0]


def test_doubling_regime():
    with pytest.raises(RegimeError):
        doubling_harness(1, interval_occupancy(8), 8, [1])


def test_doubling_never_exceeds_twice():
    s = doubling_harness(8, interval_occupancy(16), 16, [1, 2])
    assert all(1.4 < v <= 2.0 for v in s.slopes)


def test_image_counts_scale_pairing():
    # a straight segment of length 1 in R^3 has 2^(j/2)-ish image cubes
    t = np.linspace(0, 1, 5000)[:, None]
    vals = np.hstack([t, 0 * t, 0 * t]) + 0.001
    c = image_counts(vals, np.arange(0, 13))
    est = fit_dimension(c, np.arange(0, 13), window=(4, 12), x_scale=0.5)
    assert est.slope == pytest.approx(1.0, abs=0.1)


def test_good_square_harness_small():
    g = good_square_harness([1, 2], levels=(5, 6), net_level=3)
    assert g.violations == 0
    assert len(g.rows) == 2 * 2 * 8
