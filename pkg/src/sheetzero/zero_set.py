"""Dyadic-cell occupancy of zero sets, good squares and covering counts."""
from __future__ import annotations

import csv
import itertools
import json
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, ResolutionError
from .field_sim import SheetField
from .geometry import FiberChart, TubeDecomposition


class RegimeWarning(UserWarning):
    pass


@dataclass(frozen=True)
class ZeroRule:
    """How a cell is declared to meet the zero set.

    ``kind`` is ``"sign"`` (d = 1: strict sign change among the corners, or an
    exact zero at the lower corner, optionally OR a threshold test when
    ``c > 0``) or ``"threshold"`` (min over corners of ``|W|_inf`` at most the
    threshold). The threshold is ``c * n * 2^(-n/2)`` for ``scale="modulus"``
    and ``c * 2^(-n/2)`` for ``scale="cell"``.
    """

    kind: str = "auto"
    c: float | None = None
    scale: str = "modulus"

    def resolve(self, d: int) -> "ZeroRule":
        kind = self.kind
        if kind == "auto":
            kind = "sign" if d == 1 else "threshold"
        if kind not in ("sign", "threshold"):
            raise ValueError(f"unknown rule kind {kind!r}")
        if kind == "sign" and d != 1:
            raise ValueError("sign-change detection needs a scalar field")
        if self.scale not in ("modulus", "cell"):
            raise ValueError(f"unknown threshold scale {self.scale!r}")
        c = self.c
        if c is None:
            c = 0.0 if kind == "sign" else 1.0
        if c < 0:
            raise ValueError("threshold constant must be >= 0")
        return ZeroRule(kind, float(c), self.scale)

    def threshold(self, n: int) -> float:
        c = 0.0 if self.c is None else self.c
        base = 2.0 ** (-n / 2)
        return c * (n * base if self.scale == "modulus" else base)

    def describe(self) -> dict:
        return {"kind": self.kind, "c": self.c, "scale": self.scale}


@dataclass(frozen=True, eq=False)
class OccupancyGrid:
    """Occupied half-open cells of side ``2^-level``.

    ``occ[i]`` refers to the cell whose lower corner has global integer
    index ``offset + i``.
    """

    level: int
    offset: tuple[int, ...]
    occ: np.ndarray
    rule: dict = field(default_factory=dict)
    seed: int | None = None

    @property
    def N(self) -> int:
        return self.occ.ndim

    @property
    def h(self) -> float:
        return 2.0 ** (-self.level)

    @property
    def window(self) -> tuple[tuple[float, ...], tuple[float, ...]]:
        lo = tuple(o * self.h for o in self.offset)
        hi = tuple((o + s) * self.h for o, s in zip(self.offset, self.occ.shape))
        return lo, hi

    @property
    def count(self) -> int:
        return int(np.count_nonzero(self.occ))

    def indices(self) -> np.ndarray:
        """Global integer indices ``(m, N)`` of occupied cells, C order."""
        return np.argwhere(self.occ) + np.asarray(self.offset, dtype=np.int64)

    def centers(self) -> np.ndarray:
        return (self.indices() + 0.5) * self.h

    def coarsen(self) -> "OccupancyGrid":
        """Level ``n - 1`` grid: a parent is occupied iff a child is."""
        if self.level == 0:
            raise ResolutionError("cannot coarsen below level 0")
        off = np.asarray(self.offset)
        lo = off // 2
        hi = -((-(off + np.asarray(self.occ.shape))) // 2)
        out = np.zeros(tuple(hi - lo), dtype=bool)
        idx = self.indices() // 2 - lo
        out[tuple(idx.T)] = True
        return OccupancyGrid(self.level - 1, tuple(int(v) for v in lo), out, self.rule, self.seed)


def grid_from_indices(indices, level: int, rule=None, seed=None, dims: int | None = None) -> OccupancyGrid:
    """Smallest grid holding the given global cell indices (rows)."""
    idx = np.asarray(indices, dtype=np.int64)
    if idx.size == 0:
        N = dims or (idx.shape[1] if idx.ndim == 2 else 1)
        return OccupancyGrid(level, (0,) * N, np.zeros((0,) * N, dtype=bool), rule or {}, seed)
    idx = np.atleast_2d(idx)
    lo = idx.min(axis=0)
    hi = idx.max(axis=0) + 1
    occ = np.zeros(tuple(hi - lo), dtype=bool)
    occ[tuple((idx - lo).T)] = True
    return OccupancyGrid(level, tuple(int(v) for v in lo), occ, rule or {}, seed)


def _corner_views(vals: np.ndarray):
    """Views of the ``2^N`` corners of every cell; ``vals`` has shape ``(d, *verts)``."""
    N = vals.ndim - 1
    for offs in itertools.product((0, 1), repeat=N):
        sl = tuple(slice(o, vals.shape[1 + k] - 1 + o) for k, o in enumerate(offs))
        yield offs, vals[(slice(None),) + sl]


def occupancy_from_vertices(vals: np.ndarray, rule: ZeroRule, n: int) -> np.ndarray:
    """Cell occupancy from vertex values ``(d, *verts)`` under a resolved rule."""
    thr = rule.threshold(n)
    if rule.kind == "sign":
        lo = hi = None
        for offs, cv in _corner_views(vals):
            c = cv[0]
            if lo is None:
                lo, hi = c.copy(), c.copy()
                lower = c
            else:
                np.minimum(lo, c, out=lo)
                np.maximum(hi, c, out=hi)
        occ = ((lo < 0) & (hi > 0)) | (lower == 0)
        if thr > 0:
            occ |= np.minimum(np.abs(lo), np.abs(hi)) <= thr
        return occ
    sup = np.abs(vals).max(axis=0)[None]
    best = None
    for _, cv in _corner_views(sup):
        best = cv[0].copy() if best is None else np.minimum(best, cv[0], out=best)
    return best <= thr


def extract_zero_cells(
    field: SheetField, n: int, rule: ZeroRule | None = None, window=None, exclude_anchor: bool = True
) -> OccupancyGrid:
    """Level-``n`` cells of ``window`` (default the field's) meeting ``W = 0``.

    Vertices are taken from the field lattice at stride ``2^(level - n)``.
    Cells touching a coordinate hyperplane ``t_k = 0`` are left empty when
    ``exclude_anchor`` is set, since the sheet vanishes identically there.
    """
    spec = field.spec
    if n > spec.level:
        raise ResolutionError(f"level {n} exceeds field resolution {spec.level}")
    rule = (rule or ZeroRule()).resolve(field.d)
    lo, hi = spec.window if window is None else window
    s = 2**n
    ilo = [int(round(a * s)) for a in lo]
    ihi = [int(round(b * s)) for b in hi]
    if any(abs(a * s - i) > 1e-9 for a, i in zip(lo, ilo)) or any(abs(b * s - i) > 1e-9 for b, i in zip(hi, ihi)):
        raise ResolutionError(f"window is not aligned to level {n}")
    stride = 2 ** (spec.level - n)
    sl = tuple(slice(a * stride, b * stride + 1, stride) for a, b in zip(ilo, ihi))
    vals = field.values[(slice(None),) + sl]
    occ = occupancy_from_vertices(vals, rule, n)
    if exclude_anchor:
        for k, a in enumerate(ilo):
            if a == 0:
                idx = [slice(None)] * occ.ndim
                idx[k] = 0
                occ[tuple(idx)] = False
    return OccupancyGrid(n, tuple(ilo), occ, {**rule.describe(), "threshold": rule.threshold(n)}, field.seed)


def stream_zero_cells(
    spec, d: int, seed: int, rule: ZeroRule | None = None, exclude_anchor: bool = True, workers: int = 1
) -> OccupancyGrid:
    """:func:`extract_zero_cells` at the lattice level without holding the sheet.

    The sheet is generated strip by strip (see
    :func:`sheetzero.field_sim.iter_strips`); only the occupancy of the
    window is kept.
    """
    from .field_sim import iter_strips

    rule = (rule or ZeroRule()).resolve(d)
    n = spec.level
    (ilo, ihi) = spec.window_index
    shape = tuple(b - a for a, b in zip(ilo, ihi))
    occ = np.zeros(shape, dtype=bool)
    cols = tuple(slice(a, b + 1) for a, b in zip(ilo[1:], ihi[1:]))
    for r0, block in iter_strips(spec, d, seed, workers=workers):
        r1 = r0 + block.shape[1] - 1  # cells r0 .. r1-1
        a, b = max(r0, ilo[0]), min(r1, ihi[0])
        if a >= b:
            continue
        vals = block[(slice(None), slice(a - r0, b - r0 + 1)) + cols]
        occ[a - ilo[0]:b - ilo[0]] = occupancy_from_vertices(vals, rule, n)
    if exclude_anchor:
        for k, a in enumerate(ilo):
            if a == 0:
                idx = [slice(None)] * occ.ndim
                idx[k] = 0
                occ[tuple(idx)] = False
    return OccupancyGrid(n, tuple(ilo), occ, {**rule.describe(), "threshold": rule.threshold(n)}, seed)


def rule_inclusion_violations(field: SheetField, n: int, c: float = 1.0) -> dict:
    """Cells with a sign change that the threshold rule misses (d = 1).

    Also reports whether the discrete modulus ``max |W(t) - W(s)|`` over
    lattice neighbours of level ``n`` stays below ``n 2^(-n/2)``.
    """
    sign = extract_zero_cells(field, n, ZeroRule("sign", 0.0))
    thr = extract_zero_cells(field, n, ZeroRule("threshold", c))
    missed = int(np.count_nonzero(sign.occ & ~thr.occ))
    stride = 2 ** (field.spec.level - n)
    v = field.values[0][tuple(slice(None, None, stride) for _ in range(field.N))]
    mod = 0.0
    for k in range(field.N):
        mod = max(mod, float(np.abs(np.diff(v, axis=k)).max()))
    return {"level": n, "violations": missed, "modulus": mod, "modulus_bound": n * 2.0 ** (-n / 2)}


# ---------------------------------------------------------------- good squares


@dataclass(frozen=True, eq=False)
class GoodSquareReport:
    level: int
    theta: float
    counts: np.ndarray  # good squares per tube
    good: np.ndarray  # good-interval flags

    @property
    def max_count(self) -> int:
        return int(self.counts.max()) if self.counts.size else 0

    @property
    def n_good_intervals(self) -> int:
        return int(self.good.sum())


def good_squares(grid: OccupancyGrid, tubes: TubeDecomposition) -> GoodSquareReport:
    """Per tube, the number of tilted squares containing an occupied cell center."""
    if grid.level != tubes.level:
        raise ConfigError(f"occupancy level {grid.level} differs from tube level {tubes.level}")
    glo, ghi = grid.window
    tlo, thi = tubes.window
    if grid.count and not (np.all(np.asarray(glo) >= np.asarray(tlo) - 1e-12) and np.all(np.asarray(ghi) <= np.asarray(thi) + 1e-12)):
        raise ConfigError("occupancy window is not inside the tube window")
    counts = np.zeros(tubes.n_intervals, dtype=np.int64)
    if grid.count:
        ij = tubes.assign(grid.centers())
        ij = ij[ij[:, 0] >= 0]
        if ij.size:
            pairs = np.unique(ij, axis=0)
            counts = np.bincount(pairs[:, 0], minlength=tubes.n_intervals).astype(np.int64)
    return GoodSquareReport(tubes.level, tubes.theta, counts, counts > 0)


def write_good_squares_csv(reports, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["theta", "n", "tube", "count"])
        for r in reports:
            for i, c in enumerate(r.counts):
                w.writerow([repr(float(r.theta)), r.level, i, int(c)])


# ---------------------------------------------------------------- lattice counting


def lattice_points(n: int, dim: int) -> np.ndarray:
    """Lower corners ``1 + k/2^n`` of the half-open level-n cells of ``[1, 2)^dim``."""
    c = 1.0 + np.arange(2**n) / 2**n
    return np.array(list(itertools.product(c, repeat=dim))) if dim > 1 else c[:, None]


def tx_count_check(Tq, x: float, n: int, r: int | None = None) -> tuple[int, float]:
    """Brute-force ``#T_x`` and the bound ``(r 2^(n+1) x)^dim``.

    ``T_x`` collects the lattice points ``t`` outside ``Tq`` with
    ``x/2 < max_i min_{s in Tq} |t_i - s_i| <= x``.
    """
    Tq = np.atleast_2d(np.asarray(Tq, dtype=float))
    dim = Tq.shape[1]
    r = len(Tq) if r is None else r
    T = lattice_points(n, dim)
    # per-coordinate distance to the nearest anchor coordinate
    dist = np.abs(T[:, None, :] - Tq[None, :, :]).min(axis=1).max(axis=1)
    in_q = (np.abs(T[:, None, :] - Tq[None, :, :]).max(axis=2) < 1e-12).any(axis=1)
    tol = 1e-12
    count = int(np.count_nonzero(~in_q & (dist > x / 2 + tol) & (dist <= x + tol)))
    bound = (r * 2.0 ** (n + 1) * x) ** dim
    return count, bound


def tx_count_batch(axis_sets, x: float, n: int, dim: int) -> np.ndarray:
    """``#T_x`` for many instances given by their per-axis anchor coordinates.

    ``T_x`` depends on the anchors only through the set of values each
    coordinate takes, which lets exhaustive searches run over those sets.
    ``axis_sets`` is a list (one per axis) of boolean arrays ``(B, 2^n)``
    marking the anchor coordinates of each instance.
    """
    L = 2**n
    idx = np.arange(L)
    gap = np.abs(idx[:, None] - idx[None, :]) / L
    # distance of every lattice coordinate to the nearest anchor coordinate
    dists = [np.where(m[:, None, :], gap[None], np.inf).min(axis=2) for m in axis_sets]
    tol = 1e-12
    if dim == 1:
        dd = dists[0]
    else:
        dd = np.maximum(dists[0][:, :, None], dists[1][:, None, :]).reshape(len(dists[0]), -1)
    return np.count_nonzero((dd > x / 2 + tol) & (dd <= x + tol), axis=1)


# ---------------------------------------------------------------- chart covering counts


def chart_values(field, chart: FiberChart, n: int, lo=None, hi=None) -> tuple[np.ndarray, np.ndarray]:
    """``W o Gamma`` at the level-n lattice of the chart box ``[lo, hi]``.

    Defaults to ``[1, 2]^N''``. Returns ``(mask, values)`` with values of
    shape ``(d, *verts)`` and ``mask`` false where ``Gamma(v)`` leaves the
    simulated domain.
    """
    m = chart.dim
    lo = np.ones(m) if lo is None else np.asarray(lo, float)
    hi = 2 * np.ones(m) if hi is None else np.asarray(hi, float)
    axes = [np.arange(int(round(a * 2**n)), int(round(b * 2**n)) + 1) / 2**n for a, b in zip(lo, hi)]
    grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)
    shape = grid.shape[:-1]
    pts = chart.param(grid.reshape(-1, m))
    upper = np.asarray(field.spec.upper)
    ok = np.all((pts >= -1e-12) & (pts <= upper + 1e-12), axis=1)
    vals = np.full((len(pts), field.d), np.inf)
    if ok.any():
        vals[ok] = field.interpolate(pts[ok])
    return ok.reshape(shape), vals.T.reshape((field.d, *shape))


def cube_cover_count(field, chart: FiberChart, a, n: int, radius: float | None = None, values=None) -> int:
    """Level-n cubes of the chart box on which ``|W o Gamma - a|_inf <= radius`` at some corner.

    ``radius`` defaults to ``2^(-n/2)``. Precomputed ``values`` from
    :func:`chart_values` at a finer level ``m >= n`` can be passed as
    ``(m, values)`` and are subsampled.
    """
    d = field.d
    if chart.dim > d / 2:
        warnings.warn(f"chart dimension {chart.dim} exceeds d/2 = {d / 2}; counts may grow polynomially", RegimeWarning, stacklevel=2)
    radius = 2.0 ** (-n / 2) if radius is None else radius
    if values is None:
        _, vals = chart_values(field, chart, n)
    else:
        m, vals = values
        stride = 2 ** (m - n)
        vals = vals[(slice(None),) + tuple(slice(None, None, stride) for _ in range(vals.ndim - 1))]
    a = np.asarray(a, dtype=float).reshape(d, *([1] * (vals.ndim - 1)))
    shifted = vals - a
    shifted = np.where(np.isfinite(shifted), shifted, np.inf)
    sup = np.abs(shifted).max(axis=0)[None]
    best = None
    for _, cv in _corner_views(sup):
        best = cv[0].copy() if best is None else np.minimum(best, cv[0])
    return int(np.count_nonzero(best <= radius))


# ---------------------------------------------------------------- export


def _rle(bits: np.ndarray) -> list[int]:
    flat = bits.ravel().astype(np.int8)
    if flat.size == 0:
        return []
    change = np.flatnonzero(np.diff(flat)) + 1
    bounds = np.concatenate([[0], change, [flat.size]])
    runs = np.diff(bounds).tolist()
    if flat[0]:
        runs = [0] + runs
    return runs


def export_occupancy(grid: OccupancyGrid, path) -> None:
    """One JSON header line followed by alternating run lengths (zeros first)."""
    header = {
        "level": grid.level,
        "offset": list(grid.offset),
        "shape": list(grid.occ.shape),
        "window": [list(w) for w in grid.window],
        "rule": grid.rule,
        "seed": grid.seed,
        "order": "C",
    }
    runs = _rle(grid.occ)
    with open(path, "w") as fh:
        fh.write(json.dumps(header) + "\n")
        fh.write(" ".join(map(str, runs)) + "\n")


def read_occupancy(path) -> OccupancyGrid:
    with open(path) as fh:
        header = json.loads(fh.readline())
        runs = [int(v) for v in fh.readline().split()]
    flat = np.zeros(int(np.prod(header["shape"])), dtype=bool)
    pos, val = 0, False
    for r in runs:
        if val:
            flat[pos:pos + r] = True
        pos += r
        val = not val
    return OccupancyGrid(header["level"], tuple(header["offset"]), flat.reshape(header["shape"]), header["rule"], header["seed"])
