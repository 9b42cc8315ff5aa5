import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

import sheetzero.field_sim as fs
from sheetzero.closed_form import covariance, ou_covariance
from sheetzero.errors import DomainError, EmptyTrace, RangeError, SizingError
from sheetzero.field_sim import (
    GridSpec,
    line_segment,
    read_field,
    restrict_to_line,
    sample_sheet,
    simulate_sheet,
    export_field,
    ou_transform,
    time_invert,
)

from conftest import within_se

SPEC = GridSpec(2, 2, (2.0, 2.0))  # vertices every 1/4


@pytest.fixture(scope="module")
def ensemble(seeds20k):
    """Vertex values of 20000 independent (2, 2)-sheets at level 2."""
    return np.stack([simulate_sheet(SPEC, 2, s).values for s in seeds20k])


def vidx(point):
    return tuple(int(round(c / SPEC.h)) for c in point)


def test_axis_anchoring():
    f = simulate_sheet(GridSpec(2, 5, (2.0, 2.0)), 3, 42)
    assert np.all(f.values[:, 0, :] == 0.0)
    assert np.all(f.values[:, :, 0] == 0.0)


def test_seed_determinism_and_workers():
    spec = GridSpec(2, 7, (2.0, 2.0))
    a = simulate_sheet(spec, 2, 9, workers=1)
    b = simulate_sheet(spec, 2, 9, workers=4)
    assert np.array_equal(a.values, b.values)
    assert not np.array_equal(a.values, simulate_sheet(spec, 2, 10).values)


def test_strips_match_whole(monkeypatch):
    spec = GridSpec(2, 6, (2.0, 2.0))
    whole = simulate_sheet(spec, 1, 3).values
    monkeypatch.setattr(fs, "STRIP_CELLS", 7)
    assert np.array_equal(simulate_sheet(spec, 1, 3).values, whole)


def test_sample_sheet_matches_interpolation():
    spec = GridSpec(2, 6, (2.0, 2.0))
    pts = np.random.default_rng(0).uniform(0, 2, size=(50, 2))
    f = simulate_sheet(spec, 2, 5)
    assert np.allclose(sample_sheet(spec, 2, 5, pts), f.interpolate(pts), atol=1e-12)


def test_variance_at_one_one(ensemble):
    ok, m, se = within_se(ensemble[:, 0, vidx((1, 1))[0], vidx((1, 1))[1]] ** 2, 1.0)
    assert ok, (m, se)


@pytest.mark.parametrize("s,t", [((1, 2), (2, 1)), ((0.5, 0.5), (1, 1)), ((0.25, 1.5), (1.5, 0.25)), ((2, 2), (2, 2)), ((0.75, 1.25), (1, 0.5))])
def test_covariance_panel(ensemble, s, t):
    prod = ensemble[:, 0][(slice(None),) + vidx(s)] * ensemble[:, 0][(slice(None),) + vidx(t)]
    ok, m, se = within_se(prod, covariance(s, t))
    assert ok, (m, se)


def test_component_independence(ensemble):
    ok, m, se = within_se(ensemble[:, 0, 6, 5] * ensemble[:, 1, 6, 5], 0.0)
    assert ok, (m, se)


def test_disjoint_rectangle_increments(ensemble):
    def rect(v, a, b):
        (i0, j0), (i1, j1) = vidx(a), vidx(b)
        return v[:, i1, j1] - v[:, i0, j1] - v[:, i1, j0] + v[:, i0, j0]

    v = ensemble[:, 0]
    x = rect(v, (0.25, 0.25), (1.0, 1.0))
    y = rect(v, (1.0, 0.5), (2.0, 1.5))
    ok, m, se = within_se(x * y, 0.0)
    assert ok, (m, se)


def test_sizing_error():
    with pytest.raises(SizingError) as exc:
        simulate_sheet(GridSpec(2, 10, (2.0, 2.0)), 1, 0, memory_budget=1000)
    assert exc.value.required_bytes > 1000


def test_range_error():
    with pytest.raises(RangeError):
        GridSpec(3, 40, (2.0, 2.0, 2.0))


def test_line_through_origin_is_zero():
    f = simulate_sheet(GridSpec(2, 6, (2.0, 2.0), ((0.0, 0.0), (2.0, 2.0))), 1, 1)
    tr = restrict_to_line(f, 0.5, 0.0, 2**-6)
    assert tr.params[0] == 0.0 and tr.values[0, 0] == 0.0


def test_line_variance_matches_time_change(ensemble, seeds20k):
    # alpha = 1, beta = 0, t1 = 1 lands on the vertex (1, 1)
    tr = restrict_to_line(simulate_sheet(SPEC, 1, seeds20k[0]), 1.0, 0.0, 0.25, ((0.0, 0.0), (2.0, 2.0)))
    assert tr.time_change(1.0) == 1.0
    ok, m, se = within_se(ensemble[:, 0, 4, 4] ** 2, tr.time_change(1.0))
    assert ok


@given(st.floats(0.01, 5), st.floats(0, 5), st.floats(0.001, 3), st.floats(0.001, 3))
def test_time_change_increasing(alpha, beta, a, b):
    lo, hi = sorted((a, b))
    if hi > lo:
        assert fs.time_change(hi, alpha, beta) > fs.time_change(lo, alpha, beta)


def test_line_missing_window():
    f = simulate_sheet(GridSpec(2, 4, (2.0, 2.0)), 1, 1)
    with pytest.raises(EmptyTrace):
        restrict_to_line(f, 1.0, 5.0, 0.1)
    assert line_segment(1.0, 5.0, ((1, 1), (2, 2)))[1] < line_segment(1.0, 5.0, ((1, 1), (2, 2)))[0]


def test_time_inversion_fixed_point():
    f = simulate_sheet(SPEC, 1, 3)
    inv = time_invert(f, [1.0])
    assert np.array_equal(inv.values[0, :, 0], f.values[0, :, vidx((0, 1))[1]])


def test_time_inversion_covariance(ensemble):
    # inverted process at (1, 2) and (2, 1/2) from W(1, 1/2) and W(2, 2)
    a = 2.0 * ensemble[:, 0, 4, 2]
    b = 0.5 * ensemble[:, 0, 8, 8]
    ok, m, se = within_se(a * b, covariance((1, 2), (2, 0.5)))
    assert ok, (m, se)


def test_time_inversion_rejects_zero():
    with pytest.raises(DomainError):
        time_invert(simulate_sheet(SPEC, 1, 0), [0.0, 1.0])


def test_ou_anchor_and_range():
    f = simulate_sheet(SPEC, 1, 2)
    ou = ou_transform(f, [0.0, 0.5])
    assert np.all(ou.values[:, :, 0] == 0.0)
    with pytest.raises(RangeError):
        ou_transform(f, [1.0])


def test_ou_variance_and_stationarity(seeds20k):
    spec = GridSpec(2, 4, (2.0, 2.0))
    s = [0.0, 0.3, 0.6]
    vals = np.stack([ou_transform(simulate_sheet(spec, 1, k), s).values[0, :, 16] for k in seeds20k[:20000]])
    for i in range(3):
        assert within_se(vals[:, i] ** 2, 1.0)[0]
    assert within_se(vals[:, 0] * vals[:, 1], ou_covariance(0.0, 0.3, 1.0))[0]
    assert within_se(vals[:, 1] * vals[:, 2], ou_covariance(0.3, 0.6, 1.0))[0]


def test_export_roundtrip(tmp_path):
    f = simulate_sheet(GridSpec(2, 5, (2.0, 2.0)), 2, 77)
    man = export_field(f, tmp_path / "f.bin")
    g = read_field(tmp_path / "f.bin")
    assert np.array_equal(f.values, g.values) and g.seed == 77 and g.spec == f.spec
    assert (tmp_path / "f.bin.json").exists() and man["shape"] == [2, 65, 65]
