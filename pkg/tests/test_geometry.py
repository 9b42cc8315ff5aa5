import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.stats import ortho_group
from shapely.geometry import Polygon, box

from sheetzero.errors import ChartError, DomainError, RangeError
from sheetzero.geometry import (
    ConditioningWarning,
    Fiber,
    angle_net,
    build_projection,
    decompose_tubes,
    fiber_distance,
    project_cells,
    projection_cover_constant,
    select_chart,
    subspace_net,
    write_angle_net_csv,
    write_net_csv,
    write_tubes_csv,
)

WINDOW = ((1.0, 1.0), (2.0, 2.0))


def same_line(a, b):
    return abs(abs(np.dot(a, b)) - 1) < 1e-12


def test_projection_45_degrees():
    p = build_projection(theta=math.pi / 4)
    assert same_line(p.kernel_basis[0], np.array([1, 1]) / math.sqrt(2))
    assert same_line(p.range_basis[0], np.array([1, -1]) / math.sqrt(2))
    assert p.rank == 1 and p.corank == 1


def test_full_rank_rejected():
    with pytest.raises(RangeError):
        build_projection(basis=np.eye(3))


def test_dependent_basis_rejected():
    with pytest.raises(DomainError):
        build_projection(basis=np.array([[1.0, 0, 0], [2.0, 0, 0]]))


@given(st.integers(0, 10_000), st.integers(2, 5))
@settings(max_examples=30, deadline=None)
def test_random_projection_adjoint(seed, N):
    rng = np.random.default_rng(seed)
    rank = int(rng.integers(1, N))
    p = build_projection(basis=rng.normal(size=(rank, N)))
    R = p.range_basis
    assert np.abs(R @ R.T - np.eye(rank)).max() < 1e-12
    assert np.abs(p.kernel_basis @ R.T).max() < 1e-12
    P = p.matrix
    assert np.abs(P @ P - P).max() < 1e-12


def test_chart_diagonal_line():
    c = select_chart(np.array([[1.0, 1.0]]) / math.sqrt(2))
    assert tuple(c.axes) == (0,)
    assert np.allclose(c.param(np.array([[0.7]])), [[0.7, 0.7]])
    assert np.linalg.norm(c.gamma[:, 0]) <= math.sqrt(2) + 1e-12
    # exhaustive over both candidate axes: each gives |Gamma(e)| = sqrt 2
    B = np.array([[1.0], [1.0]]) / math.sqrt(2)
    for axis in (0, 1):
        G = B / B[axis, 0]
        assert np.linalg.norm(G[:, 0]) == pytest.approx(math.sqrt(2))


def test_chart_coordinate_subspace():
    c = select_chart(np.array([[1.0, 0.0, 0.0]]))
    assert tuple(c.axes) == (0,)
    assert np.allclose(c.gamma[:, 0], [1, 0, 0])
    assert c.lipschitz == pytest.approx(1.0)


@given(st.integers(0, 10_000))
@settings(max_examples=25, deadline=None)
def test_chart_invariants_random(seed):
    rng = np.random.default_rng(seed)
    N = 3
    K = rng.normal(size=(2, N))
    c = select_chart(K)
    v = rng.normal(size=(1000, 2))
    g = v @ c.gamma.T
    # q o Gamma = id
    assert np.abs(g[:, list(c.axes)] - v).max() < 1e-12
    assert np.all(np.linalg.norm(g, axis=1) <= N * np.linalg.norm(v, axis=1) + 1e-12)
    # Gamma(x) - x is orthogonal to V
    x = np.zeros((len(v), N))
    x[:, list(c.axes)] = v
    assert np.abs((g - x)[:, list(c.axes)]).max() < 1e-12
    for j in range(2):
        assert np.linalg.norm(c.gamma[:, j]) <= math.sqrt(N) + 1e-12


def test_chart_image_lies_in_subspace():
    K = np.array([[1.0, 2.0, -1.0]])
    c = select_chart(K, point=np.array([1.0, 1.5, 1.2]))
    pts = c.param(np.array([[0.3], [1.7]]))
    d = pts[1] - pts[0]
    assert abs(abs(d @ K[0]) / (np.linalg.norm(d) * np.linalg.norm(K[0])) - 1) < 1e-12


def test_conditioning_warning():
    K = np.array([[1.0, 0.0, 0.0], [1.0, 1e-13, 0.0]])
    with pytest.warns(ConditioningWarning):
        select_chart(K)


def test_tubes_45_degrees():
    t = decompose_tubes(build_projection(theta=math.pi / 4), 3)
    assert t.alpha == pytest.approx(1.0)
    w = t.intervals[:, 1] - t.intervals[:, 0]
    assert np.allclose(w, 2.0**-3)
    # disjoint and covering p([1,2]^2)
    assert np.allclose(t.intervals[1:, 0], t.intervals[:-1, 1])
    corners = np.array([[1, 1], [2, 1], [1, 2], [2, 2]]) @ t.u
    assert t.intervals[0, 0] <= corners.min() + 1e-12 and t.intervals[-1, 1] >= corners.max() - 1e-12


@pytest.mark.parametrize("theta", [math.pi / 4, 0.3, 1.2])
@pytest.mark.parametrize("n", [2, 3, 4])
def test_interval_count_bound(theta, n):
    t = decompose_tubes(build_projection(theta=theta), n)
    corners = np.array([[1, 1], [2, 1], [1, 2], [2, 2]]) @ t.u
    c = np.ptp(corners)
    assert t.n_intervals <= math.ceil(c * 2**n) + 1 <= max(1, c) * 2 ** (n + 1) + 1


@pytest.mark.parametrize("theta", [math.pi / 4, 0.3, 1.2])
def test_tilted_squares_partition_window(theta):
    t = decompose_tubes(build_projection(theta=theta), 3)
    win = box(1, 1, 2, 2)
    polys = [Polygon(t.square_corners(i, j)).intersection(win) for i, j in t.squares]
    assert sum(p.area for p in polys) == pytest.approx(1.0, abs=1e-12)
    for i in range(t.n_intervals):
        tube = [p for (a, _), p in zip(t.squares, polys) if a == i]
        lo, hi = t.intervals[i]
        band = Polygon([lo * t.u + s * t.k for s in (-10, 10)] + [hi * t.u + s * t.k for s in (10, -10)]).intersection(win)
        assert sum(p.area for p in tube) == pytest.approx(band.area, abs=1e-12)
    rng = np.random.default_rng(0)
    ij = t.assign(rng.uniform(1, 2, size=(2000, 2)))
    listed = {tuple(r) for r in t.squares}
    assert all(tuple(r) in listed for r in ij)


def test_tubes_need_increasing_kernel():
    with pytest.raises(ChartError):
        decompose_tubes(build_projection(theta=0.0), 3)
    t = decompose_tubes(build_projection(theta=0.0), 3, inverted=True)
    assert t.inverted


def test_angle_net_examples():
    assert np.allclose(angle_net(2), [math.pi / 2, math.pi, 3 * math.pi / 2, 2 * math.pi])
    assert np.allclose(angle_net(1), [math.pi, 2 * math.pi])


@given(st.floats(0, 2 * math.pi), st.integers(1, 8))
def test_angle_net_covering_radius(theta, m):
    net = angle_net(m)
    assert len(net) == 2**m
    assert np.min(np.abs(net - theta)) <= 2 * math.pi / 2**m + 1e-12


def random_fiber(rng, N=2):
    return Fiber(rng.uniform(1, 2, N), rng.normal(size=(1, N)))


def test_fiber_distance_metric():
    rng = np.random.default_rng(1)
    for _ in range(1000):
        a, b, c = (random_fiber(rng) for _ in range(3))
        assert fiber_distance(a, a) == 0.0
        assert fiber_distance(a, b) == pytest.approx(fiber_distance(b, a), abs=1e-12)
        assert fiber_distance(a, c) <= fiber_distance(a, b) + fiber_distance(b, c) + 1e-9


def test_fiber_distance_ignores_representation():
    f = Fiber(np.array([1.2, 1.4]), np.array([[1.0, 2.0]]))
    g = Fiber(np.array([1.2, 1.4]) + 0.3 * np.array([1.0, 2.0]), np.array([[-3.0, -6.0]]))
    assert fiber_distance(f, g) < 1e-12


@pytest.mark.parametrize("n", [2, 3])
def test_subspace_net_covering(n):
    net = subspace_net(n, 2, 1, WINDOW)
    rng = np.random.default_rng(n)
    for _ in range(100):
        f = Fiber(rng.uniform(1, 2, 2), np.array([[math.cos(a := rng.uniform(0, math.pi)), math.sin(a)]]))
        assert net.nearest(f)[1] <= 2.0**-n + 1e-12


def test_parallel_net_size_linear():
    sizes = [len(subspace_net(n, 2, 1, WINDOW, directions=[[1.0, 1.0]])) for n in (3, 4, 5)]
    assert sizes[1] <= 2 * sizes[0] + 1 and sizes[2] <= 2 * sizes[1] + 1
    net = subspace_net(4, 2, 1, WINDOW, directions=[[1.0, 1.0]])
    rng = np.random.default_rng(2)
    for _ in range(100):
        assert net.nearest(Fiber(rng.uniform(1, 2, 2), np.array([[1.0, 1.0]])))[1] <= 2.0**-4


@given(st.integers(0, 10_000))
@settings(max_examples=25, deadline=None)
def test_projection_cover_primitive(seed):
    rng = np.random.default_rng(seed)
    N = int(rng.integers(2, 4))
    level = 4
    cells = np.unique(rng.integers(16, 32, size=(int(rng.integers(1, 60)), N)), axis=0)
    p = build_projection(basis=rng.normal(size=(int(rng.integers(1, N)), N)))
    img = project_cells(cells, level, p)
    assert len(img) <= projection_cover_constant(N) * len(cells)


def test_exports(tmp_path):
    t = decompose_tubes(build_projection(theta=math.pi / 4), 2)
    write_tubes_csv(t, tmp_path / "t.csv")
    write_angle_net_csv(3, tmp_path / "a.csv")
    write_net_csv(subspace_net(2, 2, 1, WINDOW, directions=[[1.0, 1.0]]), tmp_path / "n.csv")
    assert (tmp_path / "t.csv").read_text().count("\n") == len(t.squares) + 1
    assert (tmp_path / "a.csv").read_text().count("\n") == 9
    assert (tmp_path / "n.csv").exists()
