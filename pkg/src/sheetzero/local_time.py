"""Occupation-density local times along fibers and the surjectivity harness.

``L(x)`` is estimated as the chart-coordinate volume of the parameters ``v``
with ``W(Gamma(v))`` in the half-open box ``[x - eps, x + eps)^d``, divided by
the box volume ``(2 eps)^d``. Half-open boxes tile image space, so summing the
estimate over an ``x``-grid of spacing ``2 eps`` returns exactly the time
spent in the union of the boxes.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from statsmodels.stats.proportion import proportion_confint

from .errors import EmptyTrace, RegimeError
from .field_sim import GridSpec, SheetField, iter_strips, simulate_sheet
from .geometry import FiberChart, Projection, build_projection, select_chart
from .zero_set import ZeroRule, occupancy_from_vertices


@dataclass(frozen=True, eq=False)
class FiberTrace:
    """Sheet values at a regular grid of chart parameters on one fiber."""

    chart: FiberChart
    params: np.ndarray  # (m, N'')
    values: np.ndarray  # (m, d)
    step: float
    window: tuple

    @property
    def weight(self) -> float:
        return self.step ** self.chart.dim

    @property
    def volume(self) -> float:
        return self.weight * len(self.params)


@dataclass(frozen=True)
class LocalTimeEstimate:
    value: float
    x: tuple[float, ...]
    point: tuple[float, ...]
    axes: tuple[int, ...]
    window: tuple
    eps: float
    step: float


def default_bandwidth(n: int) -> float:
    return n * 2.0 ** (-n / 2)


def fiber_trace(field: SheetField, chart: FiberChart, step: float, window=None) -> FiberTrace:
    """Sample the sheet along the fiber of ``chart`` inside ``window``.

    Parameters are ``lo + k * step`` on each chart axis (left-endpoint rule),
    kept when ``Gamma(v)`` lies in the window. Raises :class:`EmptyTrace`
    when the fiber misses the window.
    """
    if step <= 0:
        raise ValueError("step must be positive")
    window = field.spec.window if window is None else window
    lo, hi = (np.asarray(window[0], float), np.asarray(window[1], float))
    plo, phi = chart.box_params(lo, hi)
    if np.any(phi <= plo):
        raise EmptyTrace("fiber does not meet the window")
    axes = [plo[k] + step * np.arange(int(math.ceil((phi[k] - plo[k]) / step - 1e-9))) for k in range(chart.dim)]
    grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, chart.dim)
    pts = chart.param(grid)
    tol = 1e-12
    inside = np.all((pts >= lo - tol) & (pts < hi + tol), axis=1)
    if not inside.any():
        raise EmptyTrace("fiber does not meet the window")
    grid, pts = grid[inside], pts[inside]
    return FiberTrace(chart, grid, field.interpolate(pts), step, (tuple(lo), tuple(hi)))


def occupation_density(trace: FiberTrace, xs, eps: float, method: str = "points") -> np.ndarray:
    """Local-time estimates at every row of ``xs`` (shape ``(k, d)``).

    ``method="points"`` weights each sample by ``step^N''``; ``"linear"``
    uses the exact occupation measure of the piecewise-linear path through
    the samples (one-parameter fibers with d = 1 only).
    """
    if eps <= 0:
        raise ValueError("bandwidth must be positive")
    xs = np.atleast_2d(np.asarray(xs, dtype=float))
    d = trace.values.shape[1]
    if xs.shape[1] != d:
        raise ValueError(f"x must have {d} components")
    vol = (2.0 * eps) ** d
    if method == "linear":
        if d != 1 or trace.chart.dim != 1:
            raise ValueError("linear occupation needs a one-parameter fiber and d = 1")
        F = _linear_occupation_cdf(trace.values[:, 0], trace.step)
        return (F(xs[:, 0] + eps) - F(xs[:, 0] - eps)) / vol
    if method != "points":
        raise ValueError(f"unknown method {method!r}")
    if d == 1:
        v = np.sort(trace.values[:, 0])
        a = np.searchsorted(v, xs[:, 0] - eps, side="left")
        b = np.searchsorted(v, xs[:, 0] + eps, side="left")
        return (b - a) * trace.weight / vol
    out = np.empty(len(xs))
    for i, x in enumerate(xs):
        inside = np.all((trace.values >= x - eps) & (trace.values < x + eps), axis=1)
        out[i] = np.count_nonzero(inside) * trace.weight / vol
    return out


def _linear_occupation_cdf(v: np.ndarray, step: float):
    """``y -> time spent below y`` by the piecewise-linear path through ``v``."""
    lo = np.minimum(v[:-1], v[1:])
    hi = np.maximum(v[:-1], v[1:])
    span = hi - lo
    flat = span == 0
    const = np.sort(lo[flat])
    lo, hi, span = lo[~flat], hi[~flat], span[~flat]
    # sum of clip((y - lo) / span, 0, 1) = ramps started at lo minus ramps ended at hi
    ol, oh = np.argsort(lo), np.argsort(hi)
    slo, shi = lo[ol], hi[oh]
    a_lo = np.concatenate([[0.0], np.cumsum(1.0 / span[ol])])
    b_lo = np.concatenate([[0.0], np.cumsum(lo[ol] / span[ol])])
    a_hi = np.concatenate([[0.0], np.cumsum(1.0 / span[oh])])
    b_hi = np.concatenate([[0.0], np.cumsum(hi[oh] / span[oh])])

    def F(y):
        y = np.asarray(y, dtype=float)
        i = np.searchsorted(slo, y, side="left")
        j = np.searchsorted(shi, y, side="left")
        ramps = (y * a_lo[i] - b_lo[i]) - (y * a_hi[j] - b_hi[j])
        steps = np.searchsorted(const, y, side="left")
        return step * (ramps + steps)

    return F


def local_time(field: SheetField, chart: FiberChart, x, eps: float | None = None, step: float | None = None, window=None) -> LocalTimeEstimate:
    """Occupation density of the sheet on the fiber of ``chart`` around ``x``.

    ``eps`` defaults to ``n 2^(-n/2)`` and ``step`` to ``2^-n`` with ``n``
    the field level.
    """
    n = field.spec.level
    eps = default_bandwidth(n) if eps is None else eps
    step = 2.0**-n if step is None else step
    tr = fiber_trace(field, chart, step, window)
    x = np.atleast_1d(np.asarray(x, dtype=float))
    val = float(occupation_density(tr, x[None, :], eps)[0])
    return LocalTimeEstimate(val, tuple(x), tuple(chart.point), chart.axes, tr.window, eps, step)


def time_in_box(trace: FiberTrace, lo, hi) -> float:
    """Chart volume of parameters whose value lies in ``[lo, hi)``."""
    lo = np.asarray(lo, float)
    hi = np.asarray(hi, float)
    inside = np.all((trace.values >= lo) & (trace.values < hi), axis=1)
    return float(np.count_nonzero(inside) * trace.weight)


def occupation_identity_gap(trace: FiberTrace, lo, hi, eps: float) -> dict:
    """Compare the x-grid integral of the estimate with the direct time in a box.

    The box ``[lo, hi)`` is tiled by cells of side ``2 eps`` centred on the
    grid points; ``hi - lo`` must be a multiple of ``2 eps``.
    """
    lo = np.atleast_1d(np.asarray(lo, float))
    hi = np.atleast_1d(np.asarray(hi, float))
    counts = np.rint((hi - lo) / (2 * eps)).astype(int)
    if np.any(np.abs(counts * 2 * eps - (hi - lo)) > 1e-9 * np.maximum(1, np.abs(hi - lo))):
        raise ValueError("box sides must be multiples of 2 eps")
    axes = [lo[k] + eps * (2 * np.arange(counts[k]) + 1) for k in range(lo.size)]
    xs = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, lo.size)
    integral = float(occupation_density(trace, xs, eps).sum() * (2 * eps) ** lo.size)
    direct = time_in_box(trace, lo, hi)
    gap = abs(integral - direct) / direct if direct > 0 else abs(integral)
    return {"integral": integral, "direct": direct, "relative_gap": gap}


# ---------------------------------------------------------------- continuity probes


@dataclass
class ProbeCurve:
    """Exceedance frequencies over a grid (separations or net levels)."""

    kind: str
    grid: np.ndarray
    thresholds: np.ndarray
    covariate: np.ndarray  # regressor of the decay fit
    exceed: np.ndarray
    replicas: int
    alpha: float
    c_hat: float = float("nan")
    c_ci: tuple[float, float] = (float("nan"), float("nan"))
    extra: dict = field(default_factory=dict)

    @property
    def freq(self) -> np.ndarray:
        return self.exceed / self.replicas

    def wilson(self) -> np.ndarray:
        lo, hi = proportion_confint(self.exceed, self.replicas, alpha=0.05, method="wilson")
        return np.column_stack([lo, hi])

    def monotone(self, k: float = 2.0) -> bool:
        """Frequencies nonincreasing along the grid, up to ``k`` standard errors."""
        p = self.freq
        se = np.sqrt(np.maximum(p * (1 - p), 1e-300) / self.replicas)
        for i in range(len(p) - 1):
            if p[i + 1] > p[i] + k * math.hypot(se[i], se[i + 1]):
                return False
        return True

    @property
    def decay_positive(self) -> bool:
        return bool(np.isfinite(self.c_ci[0]) and self.c_ci[0] > 0)

    def rows(self) -> list[tuple]:
        w = self.wilson()
        return [
            (float(g), float(t), int(e), self.replicas, float(f), float(a), float(b))
            for g, t, e, f, (a, b) in zip(self.grid, self.thresholds, self.exceed, self.freq, w)
        ]


def fit_decay(exceed, replicas: int, covariate) -> tuple[float, tuple[float, float]]:
    """Fit ``logit P = a - c z`` by binomial maximum likelihood; return ``c`` and a 95% interval."""
    import statsmodels.api as sm

    exceed = np.asarray(exceed, dtype=float)
    z = np.asarray(covariate, dtype=float)
    if exceed.sum() == 0 or np.all(exceed == replicas):
        return float("nan"), (float("nan"), float("nan"))
    endog = np.column_stack([exceed, replicas - exceed])
    X = sm.add_constant(z)
    try:
        res = sm.GLM(endog, X, family=sm.families.Binomial()).fit()
    except Exception:  # perfect separation and similar
        return float("nan"), (float("nan"), float("nan"))
    c = -float(res.params[1])
    lo, hi = res.conf_int(0.05)[1]
    return c, (-float(hi), -float(lo))


def _check_alpha(alpha: float, bound: float, what: str) -> None:
    if not (0 < alpha < bound):
        raise ValueError(f"alpha = {alpha} outside (0, {bound}) required by {what}")


def diagonal_chart(N: int = 2, shift=None) -> FiberChart:
    """Chart of the fiber parallel to ``(1, ..., 1)`` through ``shift``."""
    k = np.ones((1, N)) / math.sqrt(N)
    return select_chart(k, None if shift is None else np.asarray(shift, float))


@dataclass(frozen=True)
class ProbeSetup:
    """Shared discretisation of the continuity probes.

    The bandwidth defaults to ``2^(-level/2)``, the value scale of one lattice
    step of the sheet: narrower bins only see discretisation noise, while
    ``level * 2^(-level/2)`` smooths away every exceedance at the probed
    separations. The step defaults to the lattice spacing.
    """

    level: int = 11
    window: tuple = ((0.25, 0.25), (2.0, 2.0))
    d: int = 1
    eps: float | None = None
    step: float | None = None
    method: str = "linear"
    x: float = 0.0

    @property
    def bandwidth(self) -> float:
        return 2.0 ** (-self.level / 2) if self.eps is None else self.eps

    @property
    def spacing(self) -> float:
        return 2.0**-self.level if self.step is None else self.step

    def spec(self) -> GridSpec:
        upper = tuple(float(v) for v in np.asarray(self.window[1]))
        return GridSpec(2, self.level, upper, self.window)

    def meta(self) -> dict:
        return {"x": self.x, "level": self.level, "eps": self.bandwidth, "step": self.spacing, "method": self.method}


def _regime(dim: int, d: int) -> float:
    reg = dim - d / 2
    if reg <= 0:
        raise RegimeError(f"local-time continuity needs N'' > d/2 (N''={dim}, d={d})")
    return reg


def continuity_probes(
    seeds: Sequence[int],
    alpha_space: float | None = None,
    alpha_fiber: float | None = None,
    separations: Sequence[float] = tuple(2.0**-k for k in range(3, 8)),
    net_levels: Sequence[int] = (4, 5, 6, 7, 8),
    setup: ProbeSetup = ProbeSetup(),
    chart: FiberChart | None = None,
    workers: int = 1,
) -> dict[str, ProbeCurve]:
    """Space and fiber exceedance curves from one pass over the replicas.

    Each seed gives one two-parameter sheet. The space probe compares
    ``L(x)`` and ``L(x + delta)`` on the fiber of ``chart`` (default the
    diagonal through the origin) against ``delta^alpha``. The fiber probe
    compares that fiber with its translate by ``2^-n`` along the range (sup
    norm), two level-n net elements at distance ``2^-n``, against
    ``(n 2^-n)^alpha``.
    """
    chart = diagonal_chart(2) if chart is None else chart
    reg = _regime(chart.dim, setup.d)
    if alpha_space is not None:
        _check_alpha(alpha_space, 0.5 * min(1.0, reg), "alpha < min(1, N'' - d/2) / 2")
    if alpha_fiber is not None:
        _check_alpha(alpha_fiber, 0.25 * min(1.0, reg), "alpha < min(1, N'' - d/2) / 4")
    seps = np.asarray(separations, dtype=float)
    levels = np.asarray(net_levels, dtype=int)
    eps, step, win, d = setup.bandwidth, setup.spacing, setup.window, setup.d
    kvec = chart.basis[0]
    u = np.array([kvec[1], -kvec[0]])
    u = u / np.abs(u).max()
    shifted = [chart.at(chart.point + 2.0**-int(n) * u) for n in levels]
    xs = np.zeros((seps.size + 1, d))
    xs[:, 0] = setup.x + np.concatenate([[0.0], seps])
    xv = np.full((1, d), setup.x)
    ex_s = np.zeros(seps.size, dtype=np.int64)
    ex_f = np.zeros(levels.size, dtype=np.int64)
    thr_f = (levels * 2.0**-levels) ** (alpha_fiber or 1.0)
    spec = setup.spec()
    for seed in seeds:
        f = simulate_sheet(spec, d, seed, workers=workers)
        L = occupation_density(fiber_trace(f, chart, step, win), xs, eps, setup.method)
        if alpha_space is not None:
            ex_s += np.abs(L[1:] - L[0]) >= seps**alpha_space
        if alpha_fiber is not None:
            for i, ch in enumerate(shifted):
                L1 = occupation_density(fiber_trace(f, ch, step, win), xv, eps, setup.method)[0]
                ex_f[i] += abs(L1 - L[0]) >= thr_f[i]
    R = len(seeds)
    out = {}
    if alpha_space is not None:
        z = seps ** (-alpha_space)
        c, ci = fit_decay(ex_s, R, z)
        out["space"] = ProbeCurve("space", seps, seps**alpha_space, z, ex_s, R, alpha_space, c, ci, setup.meta())
    if alpha_fiber is not None:
        z = 1.0 / thr_f
        c, ci = fit_decay(ex_f, R, z)
        out["fiber"] = ProbeCurve("fiber", levels.astype(float), thr_f, z, ex_f, R, alpha_fiber, c, ci, setup.meta())
    return out


def space_continuity_probe(seeds, alpha: float, separations=tuple(2.0**-k for k in range(3, 8)), setup: ProbeSetup = ProbeSetup(), chart=None, workers: int = 1) -> ProbeCurve:
    """Frequency of ``|L(x) - L(x + delta)| >= delta^alpha`` across sheet replicas."""
    return continuity_probes(seeds, alpha_space=alpha, separations=separations, setup=setup, chart=chart, workers=workers)["space"]


def fiber_continuity_probe(seeds, alpha: float, net_levels=(4, 5, 6, 7, 8), setup: ProbeSetup = ProbeSetup(), chart=None, workers: int = 1) -> ProbeCurve:
    """Frequency of ``|L(F) - L(F')| >= (n 2^-n)^alpha`` for level-n net neighbours."""
    return continuity_probes(seeds, alpha_fiber=alpha, net_levels=net_levels, setup=setup, chart=chart, workers=workers)["fiber"]


def bandwidth_sequence(trace: FiberTrace, x, eps0: float) -> dict:
    """Estimates at ``4 eps0, 2 eps0, eps0`` and their relative successive changes."""
    x = np.atleast_2d(np.asarray(x, float))
    vals = [float(occupation_density(trace, x, e)[0]) for e in (4 * eps0, 2 * eps0, eps0)]
    rel = [abs(b - a) / a if a > 0 else float("inf") for a, b in zip(vals, vals[1:])]
    return {"values": vals, "relative_changes": rel}


# ---------------------------------------------------------------- surjectivity


@dataclass
class CoverageReport:
    targets: np.ndarray
    hits: np.ndarray  # occupied cells meeting each fiber

    @property
    def covered(self) -> np.ndarray:
        return self.hits > 0

    @property
    def fraction(self) -> float:
        return float(self.covered.mean()) if self.targets.size else 0.0

    @property
    def shortfall(self) -> np.ndarray:
        return self.targets[~self.covered]

    def rows(self) -> list[tuple]:
        return [(float(s), int(h), bool(h > 0)) for s, h in zip(self.targets, self.hits)]


def check_surjectivity_regime(N: int, d: int, rank: int) -> None:
    if not (1 <= rank < N):
        raise RegimeError(f"rank {rank} must satisfy 1 <= N' < N = {N}")
    if rank >= N - d / 2:
        raise RegimeError(
            f"N' = {rank} >= N - d/2 = {N - d / 2}: projections of this rank preserve dimension; use the projection harness"
        )


def _vertex_blocks(field: SheetField | None, spec: GridSpec, d: int, seed: int, workers: int):
    if field is not None:
        yield 0, field.values
        return
    yield from iter_strips(spec, d, seed, workers=workers)


def surjectivity_harness(
    N: int,
    d: int,
    n: int,
    targets,
    window=((0.0, 0.0), (4.0, 4.0)),
    projection: Projection | None = None,
    seed: int = 0,
    rule: ZeroRule | None = None,
    field: SheetField | None = None,
    workers: int = 1,
) -> CoverageReport:
    """Fraction of targets ``s`` whose fiber ``p^-1(s)`` meets an occupied cell of the window.

    The projection defaults to the first ``N'`` coordinates with ``N' = 1``.
    The sheet is streamed strip by strip unless ``field`` is supplied.
    A cell (closed box) meets the fiber of ``s`` iff ``s`` lies between the
    smallest and largest projection of its corners.
    """
    p = projection if projection is not None else build_projection(basis=np.eye(N)[:1])
    check_surjectivity_regime(N, d, p.rank)
    if p.rank != 1:
        raise ValueError("coverage over a target list is implemented for rank-1 projections")
    u = p.range_basis[0]
    tg = np.asarray(targets, dtype=float).reshape(-1)
    order = np.argsort(tg)
    sorted_t = tg[order]
    diff = np.zeros(tg.size + 1, dtype=np.int64)
    if field is not None:
        spec = field.spec
        d = field.d
        n = spec.level
    else:
        upper = tuple(float(b) for b in window[1])
        spec = GridSpec(N, n, upper, window)
    rule = (rule or ZeroRule()).resolve(d)
    h = spec.h
    (ilo, ihi) = spec.window_index
    cols = tuple(slice(a, b + 1) for a, b in zip(ilo[1:], ihi[1:]))
    spread_lo = h * np.minimum(u, 0).sum()
    spread_hi = h * np.maximum(u, 0).sum()
    for r0, block in _vertex_blocks(field, spec, d, seed, workers):
        r1 = r0 + block.shape[1] - 1
        a, b = max(r0, ilo[0]), min(r1, ihi[0])
        if a >= b:
            continue
        vals = block[(slice(None), slice(a - r0, b - r0 + 1)) + cols]
        occ = occupancy_from_vertices(vals, rule, n)
        idx = np.argwhere(occ) + np.array([a] + list(ilo[1:]))
        touching = np.any(idx == 0, axis=1)  # anchored cells: the sheet vanishes there
        idx = idx[~touching]
        if idx.size == 0:
            continue
        base = (idx * h) @ u
        lo = np.searchsorted(sorted_t, base + spread_lo - 1e-12, side="left")
        hi = np.searchsorted(sorted_t, base + spread_hi + 1e-12, side="right")
        np.add.at(diff, lo, 1)
        np.add.at(diff, hi, -1)
    hits_sorted = np.cumsum(diff)[:-1]
    hits = np.empty_like(hits_sorted)
    hits[order] = hits_sorted
    return CoverageReport(tg, hits)
