import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from shapely.geometry import Point, Polygon

import sheetzero.field_sim as fs
from sheetzero.errors import ConfigError, ResolutionError
from sheetzero.field_sim import GridSpec, SheetField, simulate_sheet
from sheetzero.geometry import build_projection, decompose_tubes, select_chart
from sheetzero.zero_set import (
    ZeroRule,
    cube_cover_count,
    export_occupancy,
    extract_zero_cells,
    good_squares,
    grid_from_indices,
    read_occupancy,
    rule_inclusion_violations,
    stream_zero_cells,
    tx_count_batch,
    tx_count_check,
)

WIN = ((1.0, 1.0), (2.0, 2.0))


def analytic_field(fn, level, d=1):
    spec = GridSpec(2, level, (2.0, 2.0), WIN)
    t1, t2 = np.meshgrid(spec.coords(0), spec.coords(1), indexing="ij")
    vals = np.stack([fn(t1, t2, k) for k in range(d)])
    return SheetField(spec, d, vals, 0)


def test_constant_field_is_empty():
    f = analytic_field(lambda a, b, k: np.full_like(a, 5.0), 6)
    assert extract_zero_cells(f, 6, ZeroRule("sign")).count == 0
    assert extract_zero_cells(f, 6, ZeroRule("threshold", 1.0)).count == 0


@pytest.mark.parametrize("n", [3, 5, 7])
def test_coordinate_field_column(n):
    f = analytic_field(lambda a, b, k: a - 1.5, n)
    g = extract_zero_cells(f, n, ZeroRule("sign"))
    assert g.count == 2**n
    assert np.allclose(g.centers()[:, 0], 1.5 + 2.0 ** -(n + 1))


def test_resolution_error():
    f = simulate_sheet(GridSpec(2, 5, (2.0, 2.0)), 1, 0)
    with pytest.raises(ResolutionError):
        extract_zero_cells(f, 6)


@given(st.integers(0, 2**32))
@settings(max_examples=10, deadline=None)
def test_threshold_monotone_in_c(seed):
    f = simulate_sheet(GridSpec(2, 7, (2.0, 2.0)), 2, seed)
    a = extract_zero_cells(f, 7, ZeroRule("threshold", 1.0)).occ
    b = extract_zero_cells(f, 7, ZeroRule("threshold", 2.0)).occ
    assert not np.any(a & ~b)


def test_coarsen_is_or_of_children():
    f = simulate_sheet(GridSpec(2, 8, (2.0, 2.0)), 1, 3)
    fine = extract_zero_cells(f, 8, ZeroRule("sign"))
    coarse = fine.coarsen()
    o = fine.occ
    expect = o[0::2, 0::2] | o[1::2, 0::2] | o[0::2, 1::2] | o[1::2, 1::2]
    assert np.array_equal(coarse.occ, expect)
    # a sign change on a parent forces one on some child
    direct = extract_zero_cells(f, 7, ZeroRule("sign"))
    assert not np.any(direct.occ & ~coarse.occ)


@pytest.mark.parametrize("n", [8, 10])
def test_rule_inclusion(n):
    for seed in range(3):
        f = simulate_sheet(GridSpec(2, n, (2.0, 2.0)), 1, seed)
        rep = rule_inclusion_violations(f, n, 1.0)
        if rep["modulus"] <= rep["modulus_bound"]:
            assert rep["violations"] == 0


def test_streaming_matches_memory(monkeypatch):
    spec = GridSpec(2, 7, (2.0, 2.0), ((0.0, 0.0), (2.0, 2.0)))
    rule = ZeroRule("sign")
    whole = extract_zero_cells(simulate_sheet(spec, 1, 4), 7, rule)
    monkeypatch.setattr(fs, "STRIP_CELLS", 9)
    streamed = stream_zero_cells(spec, 1, 4, rule)
    assert np.array_equal(whole.indices(), streamed.indices())


def test_occupancy_roundtrip(tmp_path):
    g = extract_zero_cells(simulate_sheet(GridSpec(2, 6, (2.0, 2.0)), 1, 8), 6, ZeroRule("sign"))
    export_occupancy(g, tmp_path / "z.rle")
    h = read_occupancy(tmp_path / "z.rle")
    assert np.array_equal(g.occ, h.occ) and g.level == h.level and h.offset == g.offset


def test_good_squares_empty():
    tubes = decompose_tubes(build_projection(theta=math.pi / 4), 4)
    for grid in (grid_from_indices(np.zeros((0, 2), int), 4), extract_zero_cells(analytic_field(lambda a, b, k: a * 0 + 3, 4), 4)):
        rep = good_squares(grid, tubes)
        assert rep.max_count == 0 and rep.n_good_intervals == 0 and rep.counts.size == tubes.n_intervals


@pytest.mark.parametrize("theta", [0.4, math.pi / 4, 1.1])
def test_single_cell_brute_force(theta):
    n = 4
    tubes = decompose_tubes(build_projection(theta=theta), n)
    cell = np.array([[21, 27]])
    grid = grid_from_indices(cell, n)
    rep = good_squares(grid, tubes)
    c = Point(*grid.centers()[0])
    hits = [i for i, j in tubes.squares if Polygon(tubes.square_corners(i, j)).buffer(1e-12).contains(c)]
    assert rep.counts.sum() == 1 and int(np.flatnonzero(rep.counts)[0]) in hits
    assert np.array_equal(rep.good, rep.counts > 0) and rep.max_count == rep.counts.max()


def test_good_squares_level_mismatch():
    tubes = decompose_tubes(build_projection(theta=0.5), 4)
    with pytest.raises(ConfigError):
        good_squares(grid_from_indices(np.array([[40, 40]]), 5), tubes)


def test_good_squares_relabel_invariant():
    f = simulate_sheet(GridSpec(2, 8, (2.0, 2.0)), 2, 21)
    grid = extract_zero_cells(f, 6, ZeroRule("threshold", 2.0, "cell"))
    a = good_squares(grid, decompose_tubes(build_projection(theta=0.6), 6))
    b = good_squares(grid, decompose_tubes(build_projection(theta=0.6 + math.pi), 6))
    assert sorted(a.counts.tolist()) == sorted(b.counts.tolist())


def test_tx_full_lattice_is_empty():
    from sheetzero.zero_set import lattice_points

    T = lattice_points(2, 2)
    for x in (0.25, 0.5):
        assert tx_count_check(T, x, 2)[0] == 0


def test_tx_single_anchor_one_dimension():
    count, bound = tx_count_check([[1.0]], 2**-3, 3, 1)
    assert count <= bound == 2


def test_tx_batch_matches_brute_force():
    rng = np.random.default_rng(5)
    n, dim = 3, 2
    for _ in range(30):
        k = int(rng.integers(1, 4))
        anchors = rng.integers(0, 8, size=(k, dim))
        Tq = 1.0 + anchors / 8
        masks = []
        for a in range(dim):
            m = np.zeros((1, 8), bool)
            m[0, anchors[:, a]] = True
            masks.append(m)
        for x in (1 / 8, 1 / 4, 1 / 2):
            assert tx_count_batch(masks, x, n, dim)[0] == tx_count_check(Tq, x, n)[0]


def test_cube_cover_far_value_and_inflation():
    f = simulate_sheet(GridSpec(2, 9, (2.0, 2.0)), 2, 6)
    chart = select_chart(np.array([[0.0, 1.0]]), np.array([1.5, 1.5]))
    far = np.abs(f.values).max() + 1.0
    assert cube_cover_count(f, chart, [far, far], 8) == 0
    a = f.interpolate(np.array([[1.5, 1.5]]))[0]
    assert cube_cover_count(f, chart, a, 8) >= 1
    assert cube_cover_count(f, chart, a, 8) <= cube_cover_count(f, chart, a, 8, radius=2 * 2.0**-4)
