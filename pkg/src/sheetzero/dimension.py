"""Box-counting dimension estimates and the dimension harnesses.

Box-counting slopes stand in for Hausdorff dimension: only covering counts
are measurable on a finite lattice, and the two agree for the random sets
studied here only in the limit. Thresholded occupancy (used when d >= 2)
inflates counts by factors polynomial in the level, which biases fitted
slopes upward by roughly ``log(n)/n`` when the threshold carries the
``n 2^(-n/2)`` modulus. The harnesses therefore threshold at the cell scale
``2^(-n/2)`` by default.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import stats

from .closed_form import ehm_dimension
from .errors import RegimeError
from .field_sim import GridSpec, sample_sheet, simulate_sheet
from .geometry import FiberChart, angle_net, build_projection, decompose_tubes, project_cells, projection_cover_constant
from .zero_set import OccupancyGrid, ZeroRule, extract_zero_cells, good_squares, grid_from_indices


@dataclass(frozen=True)
class DimensionEstimate:
    slope: float
    intercept: float
    stderr: float
    r2: float
    window: tuple[int, int]
    levels: tuple[float, ...]
    counts: tuple[int, ...]
    degenerate: bool = False


def box_count(grid: OccupancyGrid, j: int) -> int:
    """Number of level-j dyadic cells containing an occupied cell of ``grid``."""
    if j > grid.level:
        raise ValueError(f"level {j} finer than grid level {grid.level}")
    if j < 0:
        raise ValueError("level must be >= 0")
    idx = grid.indices()
    if idx.size == 0:
        return 0
    return _count_rows(idx >> (grid.level - j))


def box_counts(grid: OccupancyGrid, levels: Sequence[int] | None = None) -> np.ndarray:
    levels = range(grid.level + 1) if levels is None else levels
    idx = grid.indices()
    return np.array([_count_rows(idx >> (grid.level - j)) for j in levels])


def fit_dimension(counts, levels=None, window: tuple[int, int] | None = None, x_scale: float = 1.0) -> DimensionEstimate:
    """Least-squares slope of ``log2 N_j`` against ``x_scale * j``.

    ``window`` is an inclusive range of levels; the default drops the two
    coarsest and the finest level. Levels with zero counts are skipped. All
    counts equal (or all zero) gives a zero slope flagged as degenerate.
    """
    counts = np.asarray(counts, dtype=float)
    levels = np.arange(counts.size) if levels is None else np.asarray(levels)
    if window is None:
        if levels.size < 6:
            raise ValueError("need at least 6 levels for the default window")
        window = (int(levels[2]), int(levels[-2]))
    sel = (levels >= window[0]) & (levels <= window[1])
    if sel.sum() < 3:
        raise ValueError("fit window needs at least 3 levels")
    lv, ct = levels[sel], counts[sel]
    keep = ct > 0
    y = np.log2(ct[keep]) if keep.any() else np.zeros(0)
    x = x_scale * lv[keep].astype(float)
    rec = dict(window=(int(window[0]), int(window[1])), levels=tuple(float(v) for v in lv), counts=tuple(int(c) for c in ct))
    if y.size < 3 or np.ptp(y) == 0:
        return DimensionEstimate(0.0, float(y[0]) if y.size else 0.0, 0.0, 1.0, degenerate=True, **rec)
    res = stats.linregress(x, y)
    return DimensionEstimate(float(res.slope), float(res.intercept), float(res.stderr), float(res.rvalue**2), **rec)


# ---------------------------------------------------------------- analytic sets


def cantor_occupancy(n: int, lo: float = 1.0) -> OccupancyGrid:
    """Level-n cells of ``[lo, lo + 1]`` meeting the middle-thirds Cantor set.

    Built from the depth-m construction intervals ``[A/3^m, (A+1)/3^m]`` with
    ``3^-m < 2^-n``; integer arithmetic throughout.
    """
    m = int(math.ceil(n * math.log(2) / math.log(3))) + 1
    A = np.zeros(1, dtype=object)
    for _ in range(m):
        A = np.concatenate([3 * A, 3 * A + 2])
    base = int(round(lo * 2**n))
    den = 3**m
    cells = set()
    for a in A:
        k0 = (a * 2**n) // den
        k1 = ((a + 1) * 2**n) // den
        cells.add(int(k0))
        if k1 < 2**n:
            cells.add(int(k1))
    idx = np.array(sorted(cells), dtype=np.int64)[:, None] + base
    return grid_from_indices(idx, n, {"set": "cantor"})


def interval_occupancy(n: int, lo: float = 1.0, hi: float = 2.0) -> OccupancyGrid:
    a, b = int(round(lo * 2**n)), int(round(hi * 2**n))
    return OccupancyGrid(n, (a,), np.ones(b - a, dtype=bool), {"set": "interval"})


# ---------------------------------------------------------------- harness plumbing


@dataclass
class HarnessSummary:
    name: str
    target: float
    seeds: list[int]
    slopes: list[float | None]
    rows: list[tuple] = field(default_factory=list)
    extra: dict = field(default_factory=dict)

    @property
    def valid(self) -> list[float]:
        return [s for s in self.slopes if s is not None]

    @property
    def n_empty(self) -> int:
        return sum(s is None for s in self.slopes)

    @property
    def mean_slope(self) -> float:
        v = self.valid
        return float(np.mean(v)) if v else 0.0

    @property
    def stderr(self) -> float:
        v = self.valid
        return float(np.std(v, ddof=1) / math.sqrt(len(v))) if len(v) > 1 else 0.0

    @property
    def deviation(self) -> float:
        return self.mean_slope - self.target

    def verdict(self, tol: float) -> str:
        return "pass" if abs(self.deviation) <= tol else "fail"

    def to_json(self, tol: float | None = None) -> dict:
        out = {
            "name": self.name,
            "target": self.target,
            "mean_slope": self.mean_slope,
            "stderr": self.stderr,
            "deviation": self.deviation,
            "seeds": self.seeds,
            "slopes": self.slopes,
            "empty_seeds": self.n_empty,
            **self.extra,
        }
        if tol is not None:
            out["tolerance"] = tol
            out["verdict"] = self.verdict(tol)
        return out


def _pooled(rows_by_seed: list[np.ndarray], levels, window, x_scale=1.0) -> float | None:
    if not rows_by_seed:
        return None
    total = np.sum(rows_by_seed, axis=0)
    return fit_dimension(total, levels, window, x_scale).slope


def default_window(N: int, d: int, upper: float = 2.0):
    """Analysis window used by the zero-set harnesses.

    Sign-change occupancy (d = 1) is exact, so the whole domain is used with
    the anchoring hyperplanes removed. Threshold occupancy also catches the
    band along those hyperplanes where the sheet is merely small, so for
    d >= 2 the window starts at 1/4.
    """
    lo = 0.0 if d == 1 else 0.25
    return (lo,) * N, (upper,) * N


def default_rule(d: int) -> ZeroRule:
    return ZeroRule("sign", 0.0) if d == 1 else ZeroRule("threshold", 1.0, "cell")


def _zero_grid(N, d, n, seed, window, rule, workers, upper=2.0) -> OccupancyGrid:
    spec = GridSpec(N, n, (upper,) * N, window)
    f = simulate_sheet(spec, d, seed, workers=workers)
    return extract_zero_cells(f, n, rule)


def ehm_harness(
    N: int,
    d: int,
    n: int,
    seeds: Sequence[int],
    window=None,
    rule: ZeroRule | None = None,
    fit_window: tuple[int, int] | None = None,
    workers: int = 1,
) -> HarnessSummary:
    """Box-counting slope of the zero set per seed against ``(N - d/2)^+``.

    Seeds whose zero set misses the window have no slope and are reported
    as empty; the mean is over the others.
    """
    window = default_window(N, d) if window is None else window
    rule = default_rule(d) if rule is None else rule
    levels = np.arange(n + 1)
    slopes, rows, all_counts = [], [], []
    for seed in seeds:
        grid = _zero_grid(N, d, n, seed, window, rule, workers)
        counts = box_counts(grid, levels)
        rows.extend((seed, int(j), int(c)) for j, c in zip(levels, counts))
        if grid.count == 0:
            slopes.append(None)
            continue
        all_counts.append(counts)
        slopes.append(fit_dimension(counts, levels, fit_window).slope)
    s = HarnessSummary("ehm", ehm_dimension(N, d), list(seeds), slopes, rows)
    s.extra = {"N": N, "d": d, "level": n, "window": [list(w) for w in window], "rule": rule.describe(),
               "pooled_slope": _pooled(all_counts, levels, fit_window)}
    return s


@dataclass
class ProjectionSummary:
    angles: np.ndarray
    source: HarnessSummary
    images: list[HarnessSummary]
    cover_violations: int

    @property
    def gaps(self) -> np.ndarray:
        return np.array([abs(im.mean_slope - self.source.mean_slope) for im in self.images])

    @property
    def max_gap(self) -> float:
        return float(self.gaps.max()) if self.images else 0.0

    def to_json(self) -> dict:
        return {
            "angles": self.angles.tolist(),
            "source_mean_slope": self.source.mean_slope,
            "image_mean_slopes": [im.mean_slope for im in self.images],
            "gaps": self.gaps.tolist(),
            "max_gap": self.max_gap,
            "cover_violations": self.cover_violations,
            "empty_seeds": self.source.n_empty,
        }


def check_projection_regime(N: int, d: int, rank: int) -> None:
    if not (1 <= rank < N):
        raise RegimeError(f"projection rank {rank} must satisfy 1 <= N' < N = {N}")
    if rank < N - d / 2:
        raise RegimeError(
            f"N' = {rank} < N - d/2 = {N - d / 2}: projections of this rank are onto; use the surjectivity harness"
        )


def projection_harness(
    d: int,
    n: int,
    m: int,
    seeds: Sequence[int],
    N: int = 2,
    projections=None,
    window=None,
    rule: ZeroRule | None = None,
    fit_window: tuple[int, int] | None = None,
    workers: int = 1,
) -> ProjectionSummary:
    """Slopes of ``p(Z)`` against the slope of ``Z`` for net directions.

    For ``N = 2`` the projections are the rank-1 ones with kernel angles in
    the level-m angle net; other shapes pass ``projections`` explicitly.
    """
    if projections is None:
        if N != 2:
            raise ValueError("give projections explicitly when N != 2")
        angles = angle_net(m)
        projections = [build_projection(theta=float(t)) for t in angles]
    else:
        angles = np.array([p.theta if p.theta is not None else np.nan for p in projections])
    for p in projections:
        check_projection_regime(N, d, p.rank)
    window = default_window(N, d) if window is None else window
    rule = default_rule(d) if rule is None else rule
    levels = np.arange(n + 1)
    cN = projection_cover_constant(N)
    src_slopes, src_rows = [], []
    img_slopes = [[] for _ in projections]
    img_rows = [[] for _ in projections]
    violations = 0
    for seed in seeds:
        grid = _zero_grid(N, d, n, seed, window, rule, workers)
        counts = box_counts(grid, levels)
        src_rows.extend((seed, int(j), int(c)) for j, c in zip(levels, counts))
        empty = grid.count == 0
        src_slopes.append(None if empty else fit_dimension(counts, levels, fit_window).slope)
        idx = grid.indices()
        for a, p in enumerate(projections):
            ic = np.array([project_cells(idx, n, p, j).shape[0] for j in levels]) if not empty else np.zeros(levels.size, int)
            violations += int(np.count_nonzero(ic > cN * counts))
            img_rows[a].extend((seed, int(j), int(c)) for j, c in zip(levels, ic))
            img_slopes[a].append(None if empty else fit_dimension(ic, levels, fit_window).slope)
    target = ehm_dimension(N, d)
    source = HarnessSummary("projection-source", target, list(seeds), src_slopes, src_rows)
    images = [HarnessSummary(f"projection-{k}", target, list(seeds), img_slopes[k], img_rows[k]) for k in range(len(projections))]
    return ProjectionSummary(np.asarray(angles, dtype=float), source, images, violations)


# ---------------------------------------------------------------- dimension doubling


def _count_rows(keys: np.ndarray) -> int:
    """Distinct rows of a small-range integer array."""
    if keys.shape[0] == 0:
        return 0
    keys = keys - keys.min(axis=0)
    span = keys.max(axis=0) + 1
    if float(np.prod(span.astype(float))) < 2.0**62:
        flat = np.ravel_multi_index(tuple(keys.T), tuple(int(v) for v in span))
        return int(np.unique(flat).size)
    return int(np.unique(keys, axis=0).shape[0])


def image_counts(values: np.ndarray, levels) -> np.ndarray:
    """Cubes of side ``2^(-j/2)`` in ``R^d`` met by the points ``values`` (m, d)."""
    return np.array([_count_rows(np.floor(values * 2.0 ** (j / 2)).astype(np.int64)) for j in levels])


def _points_in(E: OccupancyGrid, level: int) -> np.ndarray:
    """Field-lattice points (level ``level``) in the half-open cells of ``E``."""
    if level < E.level:
        raise ValueError("field level coarser than the occupancy")
    stride = 2 ** (level - E.level)
    base = E.indices() * stride
    offs = np.array(np.meshgrid(*[np.arange(stride)] * E.N, indexing="ij")).reshape(E.N, -1).T
    return ((base[:, None, :] + offs[None, :, :]).reshape(-1, E.N)) * 2.0**-level


def doubling_harness(
    d: int,
    E: OccupancyGrid,
    n: int,
    seeds: Sequence[int],
    chart: FiberChart | None = None,
    N: int | None = None,
    levels=None,
    fit_window: tuple[int, int] | None = None,
    target_E: float | None = None,
    workers: int = 1,
) -> HarnessSummary:
    """Image dimension of ``W o Gamma (E)`` at paired scales versus ``2 dim E``.

    ``E`` lives in chart coordinates (``[1, 2]^N''``); with no chart the sheet
    is one-parameter and ``E`` is a subset of its time axis. Image cubes of
    side ``2^(-j/2)`` are paired with parameter level ``j`` and the image
    slope is fitted against ``j/2``.
    """
    dim = E.N
    if chart is not None and chart.dim != dim:
        raise ValueError("occupancy dimension differs from the chart dimension")
    if dim > d / 2:
        raise RegimeError(f"parameter dimension {dim} > d/2 = {d / 2}: dimension doubling needs N'' <= d/2")
    N = (chart.N if chart is not None else dim) if N is None else N
    if levels is None:
        levels = np.arange(n + 1)
        fit_window = (4, n - 4) if fit_window is None else fit_window
    levels = np.asarray(levels)
    ecounts = box_counts(E, levels)
    e_slope = 0.0 if E.count <= 1 else fit_dimension(ecounts, levels, fit_window).slope
    v = _points_in(E, n)
    pts = v if chart is None else chart.param(v)
    upper = float(np.ceil(pts.max() * 2**n) / 2**n) if pts.size else 2.0
    spec = GridSpec(N, n, (max(upper, 2.0),) * N, ((0.0,) * N, (max(upper, 2.0),) * N))
    slopes, rows = [], []
    for seed in seeds:
        vals = sample_sheet(spec, d, seed, pts, workers=workers)
        ic = image_counts(vals, levels)
        rows.extend((seed, float(j), int(c)) for j, c in zip(levels, ic))
        slopes.append(fit_dimension(ic, levels, fit_window, x_scale=0.5).slope)
    target = 2 * (e_slope if target_E is None else target_E)
    s = HarnessSummary("doubling", target, list(seeds), slopes, rows)
    s.extra = {"d": d, "level": n, "E_slope": e_slope, "E_counts": ecounts.tolist()}
    return s


# ---------------------------------------------------------------- good squares per tube


@dataclass
class GoodSquareSummary:
    """Largest good-square count per tube at each level, over seeds and net angles."""

    levels: np.ndarray
    max_counts: np.ndarray
    rows: list = field(default_factory=list)  # (seed, theta, n, max per tube, good intervals)

    @property
    def bound(self) -> np.ndarray:
        return 10.0 * self.levels.astype(float) ** 7

    @property
    def violations(self) -> int:
        return int((self.max_counts > self.bound).sum())

    def to_json(self) -> dict:
        return {
            "levels": self.levels.tolist(),
            "max_counts": self.max_counts.tolist(),
            "bound": self.bound.tolist(),
            "violations": self.violations,
        }


def good_square_harness(
    seeds: Sequence[int],
    levels: Sequence[int] = (6, 7, 8, 9, 10),
    net_level: int | None = None,
    d: int = 2,
    window=((1.0, 1.0), (2.0, 2.0)),
    rule: ZeroRule | None = None,
    workers: int = 1,
) -> GoodSquareSummary:
    """Count tilted squares holding zero cells in every tube, N = 2.

    One sheet per seed at the finest level; each level n uses the level-n
    angle net unless ``net_level`` is fixed. Kernels that are not increasing
    lines are tiled all the same (``inverted=True``): the count is geometric.
    """
    levels = np.asarray(levels, dtype=int)
    rule = rule or default_rule(d)
    top = int(levels.max())
    upper = tuple(float(b) for b in window[1])
    best = np.zeros(levels.size, dtype=np.int64)
    rows = []
    for seed in seeds:
        f = simulate_sheet(GridSpec(2, top, upper, window), d, seed, workers=workers)
        for i, n in enumerate(levels):
            grid = extract_zero_cells(f, int(n), rule)
            for theta in angle_net(int(n) if net_level is None else net_level):
                tubes = decompose_tubes(build_projection(theta=float(theta)), int(n), window, inverted=True, tile=False)
                rep = good_squares(grid, tubes)
                best[i] = max(best[i], rep.max_count)
                rows.append((seed, float(theta), int(n), rep.max_count, rep.n_good_intervals))
    return GoodSquareSummary(levels, best, rows)
