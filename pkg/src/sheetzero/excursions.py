"""Stopping-time statistics of Brownian paths and line-restricted sheets."""
from __future__ import annotations

import math
from dataclasses import dataclass, field as dc_field
from typing import Sequence

import numba
import numpy as np
from statsmodels.stats.proportion import proportion_confint

from . import rng
from .closed_form import davis
from .errors import ConfigError, DomainError, EmptyTrace
from .field_sim import SheetField
from .geometry import angle_net, build_projection

BLOCK_PATHS = 4096


# ---------------------------------------------------------------- single traces


@dataclass(frozen=True, eq=False)
class ExcursionTrace:
    """Brownian path sampled every ``dt``; ``path`` has shape ``(steps + 1, d)``."""

    path: np.ndarray
    dt: float
    seed: int

    @property
    def d(self) -> int:
        return self.path.shape[1]

    @property
    def x0(self) -> np.ndarray:
        return self.path[0]

    @property
    def times(self) -> np.ndarray:
        return self.dt * np.arange(self.path.shape[0])


def simulate_excursion(d: int, x0, dt: float, horizon: float, seed: int) -> ExcursionTrace:
    """Gaussian-increment path from ``x0`` on ``[0, horizon]``."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    if horizon < 0:
        raise ValueError("horizon must be nonnegative")
    x0 = np.broadcast_to(np.asarray(x0, dtype=float), (d,))
    steps = int(math.floor(horizon / dt + 1e-9))
    incr = rng.stream(seed, rng.EXCURSION).standard_normal((steps, d)) * math.sqrt(dt)
    path = np.empty((steps + 1, d))
    path[0] = x0
    np.cumsum(incr, axis=0, out=path[1:])
    path[1:] += x0
    return ExcursionTrace(path, dt, seed)


@dataclass(frozen=True)
class StoppingRecord:
    """Exit time ``T_R`` and the gap-separated entrance times into a small ball."""

    exit_time: float
    taus: np.ndarray
    center: np.ndarray
    level: int
    R: float
    radius: float
    gap: float
    censored: bool

    @property
    def count(self) -> int:
        return int(self.taus.size)


def _greedy_visits(inside: np.ndarray, gap_steps: int) -> np.ndarray:
    """Indices ``i_1 < i_2 < ...`` with ``inside`` true and ``i_{k+1} >= i_k + gap_steps``."""
    cand = np.flatnonzero(inside)
    out = []
    nxt = 0
    while True:
        pos = np.searchsorted(cand, nxt)
        if pos >= cand.size:
            break
        out.append(cand[pos])
        nxt = cand[pos] + gap_steps
    return np.asarray(out, dtype=np.int64)


def gap_steps(gap: float, dt: float) -> int:
    """Grid steps spanning the refractory gap (rounded up)."""
    return max(1, int(math.ceil(gap / dt - 1e-9)))


def stopping_times(
    trace: ExcursionTrace, a, n: int, R: float, radius: float | None = None, gap: float | None = None
) -> StoppingRecord:
    """Entrance times into ``B(a, radius)`` separated by ``gap``, before leaving ``B(0, R)``.

    Defaults: ``radius = 2^(-n/2)`` and ``gap = 2^-n``. Exit is the first
    grid time with ``|B| >= R``; a path that never exits is flagged censored
    and its visits are recorded up to the horizon.
    """
    radius = 2.0 ** (-n / 2) if radius is None else radius
    gap = 2.0**-n if gap is None else gap
    if trace.dt > gap / 8 * (1 + 1e-12):
        raise ConfigError(f"dt = {trace.dt} does not resolve the gap: need dt <= {gap / 8}")
    a = np.broadcast_to(np.asarray(a, dtype=float), (trace.d,))
    out = np.flatnonzero(np.linalg.norm(trace.path, axis=1) >= R)
    censored = out.size == 0
    stop = trace.path.shape[0] if censored else int(out[0])
    inside = np.linalg.norm(trace.path[:stop] - a, axis=1) <= radius
    idx = _greedy_visits(inside, gap_steps(gap, trace.dt))
    exit_time = math.inf if censored else stop * trace.dt
    return StoppingRecord(exit_time, idx * trace.dt, a.copy(), n, R, radius, gap, censored)


# ---------------------------------------------------------------- visit-count tail


@numba.njit(cache=True)
def _visit_chain(gen, a0, a1, r2, R2, sd, gap, kmax, max_steps):
    # visits of a planar path from the origin to B(a, r) before |B| >= R
    x = 0.0
    y = 0.0
    wait = 0
    count = 0
    for _ in range(max_steps + 1):
        if x * x + y * y >= R2:
            return count, False
        if wait <= 0:
            dx = x - a0
            dy = y - a1
            if dx * dx + dy * dy <= r2:
                count += 1
                wait = gap
                if count >= kmax:
                    return count, False
        x += sd * gen.standard_normal()
        y += sd * gen.standard_normal()
        wait -= 1
    return count, True


@numba.njit(cache=True)
def _visit_block(gen, m, a0, a1, r2, R2, sd, gap, kmax, max_steps, counts, censored):
    for i in range(m):
        c, cen = _visit_chain(gen, a0, a1, r2, R2, sd, gap, kmax, max_steps)
        counts[i] = c
        censored[i] = cen


@dataclass
class TailFit:
    """Survival curve ``P(tau_k < T_R)`` for ``k = 1..K_max`` and its geometric fit."""

    level: int
    R: float
    center: tuple
    ks: np.ndarray
    survivors: np.ndarray
    replicas: int
    c_hat: float
    c_ci: tuple[float, float]
    censored: int = 0
    extra: dict = dc_field(default_factory=dict)

    @property
    def survival(self) -> np.ndarray:
        return self.survivors / self.replicas

    @property
    def nonincreasing(self) -> bool:
        return bool(np.all(np.diff(self.survivors) <= 0))

    @property
    def positive(self) -> bool:
        return bool(self.c_ci[0] > 0)

    def rows(self) -> list[tuple]:
        return [(int(k), int(s), self.replicas) for k, s in zip(self.ks, self.survivors)]


def fit_geometric_tail(survivors: np.ndarray, n: int, alpha: float = 0.05) -> tuple[float, tuple[float, float]]:
    """Fit ``P(K >= k) ~ q^(k-1)`` with ``q = exp(-c / n)``.

    Every replica that reached ``k`` is one trial for reaching ``k + 1``; the
    pooled ratio is the maximum-likelihood ``q`` under the geometric model and
    its Wilson interval maps monotonically to an interval for ``c``.
    """
    s = np.asarray(survivors, dtype=np.int64)
    trials = int(s[:-1].sum())
    wins = int(s[1:].sum())
    if trials == 0:
        return math.nan, (math.nan, math.nan)
    q = wins / trials
    lo, hi = proportion_confint(wins, trials, alpha=alpha, method="wilson")

    def to_c(p):
        return math.inf if p <= 0 else -n * math.log(p)

    return to_c(q), (to_c(hi), to_c(lo))


def tail_check_lemma1(
    n: int,
    R: float = 2.0,
    a=(0.0, 0.0),
    K_max: int | None = None,
    replicas: int = 10000,
    seed: int = 0,
    dt: float | None = None,
    max_time: float | None = None,
) -> TailFit:
    """Empirical ``P(tau_k(a; n) < T_R)`` for planar Brownian motion from the origin.

    ``K_max`` defaults to ``6 n``; ``dt`` to ``2^-n / 8``. Paths still inside
    ``B(0, R)`` at ``max_time`` (default ``50 R^2``) are censored and keep
    the visits seen so far.
    """
    a = np.asarray(a, dtype=float)
    if a.shape != (2,):
        raise ValueError("the tail check is planar: a must have two coordinates")
    radius = 2.0 ** (-n / 2)
    if not np.linalg.norm(a) + radius < R:
        raise DomainError(f"need |a| + 2^(-n/2) < R (|a| = {np.linalg.norm(a)}, R = {R})")
    gap = 2.0**-n
    dt = gap / 8 if dt is None else dt
    if dt > gap / 8 * (1 + 1e-12):
        raise ConfigError(f"dt = {dt} does not resolve the gap: need dt <= {gap / 8}")
    K_max = 6 * n if K_max is None else K_max
    max_steps = int(math.ceil((50 * R * R if max_time is None else max_time) / dt))
    counts = np.empty(replicas, dtype=np.int64)
    censored = np.zeros(replicas, dtype=np.bool_)
    for b, start in enumerate(range(0, replicas, BLOCK_PATHS)):
        m = min(BLOCK_PATHS, replicas - start)
        gen = rng.stream(seed, rng.LEMMA1, n, b)
        _visit_block(
            gen, m, a[0], a[1], radius * radius, R * R, math.sqrt(dt), gap_steps(gap, dt), K_max, max_steps,
            counts[start : start + m], censored[start : start + m],
        )
    ks = np.arange(1, K_max + 1)
    survivors = (counts[:, None] >= ks[None, :]).sum(axis=0)
    c, ci = fit_geometric_tail(survivors, n)
    return TailFit(n, R, tuple(a), ks, survivors, replicas, c, ci, int(censored.sum()), {"dt": dt, "seed": seed})


# ---------------------------------------------------------------- Davis exit


@numba.njit(cache=True)
def _exit_block(gen, m, x0, r, R, sd, dt, max_steps, outer, censored):
    for i in range(m):
        x = x0
        y = 0.0
        rho = x0
        done = False
        for _ in range(max_steps):
            nx = x + sd * gen.standard_normal()
            ny = y + sd * gen.standard_normal()
            nrho = math.sqrt(nx * nx + ny * ny)
            if nrho >= R:
                outer[i] = True
                done = True
                break
            if nrho <= r:
                outer[i] = False
                done = True
                break
            # crossing probability of the bridge between two interior samples,
            # boundary treated as locally flat
            eo = 2.0 * (R - rho) * (R - nrho) / dt
            ei = 2.0 * (rho - r) * (nrho - r) / dt
            if eo < 40.0 or ei < 40.0:
                po = math.exp(-eo) if eo < 40.0 else 0.0
                pi = math.exp(-ei) if ei < 40.0 else 0.0
                u = gen.random()
                if u < po:
                    outer[i] = True
                    done = True
                    break
                if u < po + pi:
                    outer[i] = False
                    done = True
                    break
            x = nx
            y = ny
            rho = nrho
        censored[i] = not done


@dataclass(frozen=True)
class ExitEstimate:
    r: float
    R: float
    a_norm: float
    replicas: int
    outer: int
    censored: int
    dt: float

    @property
    def p_hat(self) -> float:
        return self.outer / self.replicas

    @property
    def stderr(self) -> float:
        p = self.p_hat
        return math.sqrt(p * (1 - p) / self.replicas)

    @property
    def exact(self) -> float:
        return davis(self.a_norm, self.r, self.R)

    @property
    def error(self) -> float:
        return abs(self.p_hat - self.exact)


def davis_exit_mc(
    r: float = 1.0,
    R: float = 4.0,
    a=2.0,
    replicas: int = 100000,
    dt: float = 1e-4,
    seed: int = 0,
    max_time: float = 1000.0,
) -> ExitEstimate:
    """Fraction of planar Brownian paths from ``|a|`` leaving the annulus ``r < |x| < R`` outward.

    Crossings between grid times are detected with the Brownian-bridge
    probability ``exp(-2 d0 d1 / dt)`` for each circle. By rotation invariance
    only ``|a|`` matters.
    """
    a_norm = float(np.linalg.norm(np.atleast_1d(np.asarray(a, dtype=float))))
    if not (0 < r < a_norm < R):
        raise DomainError(f"need 0 < r < |a| < R, got r={r}, |a|={a_norm}, R={R}")
    if dt <= 0:
        raise ValueError("dt must be positive")
    outer = np.zeros(replicas, dtype=np.bool_)
    censored = np.zeros(replicas, dtype=np.bool_)
    max_steps = int(math.ceil(max_time / dt))
    for b, start in enumerate(range(0, replicas, BLOCK_PATHS)):
        m = min(BLOCK_PATHS, replicas - start)
        gen = rng.stream(seed, rng.DAVIS, b)
        _exit_block(gen, m, a_norm, r, R, math.sqrt(dt), dt, max_steps, outer[start : start + m], censored[start : start + m])
    return ExitEstimate(r, R, a_norm, replicas, int(outer.sum()), int(censored.sum()), dt)


# ---------------------------------------------------------------- visits of line-restricted sheets


@numba.njit(cache=True)
def _line_visits(norms, starts, stops, thr, R, gap):
    out = np.zeros(starts.size, dtype=np.int64)
    for j in range(starts.size):
        wait = 0
        c = 0
        for i in range(starts[j], stops[j]):
            if norms[i] >= R:
                break
            if wait <= 0 and norms[i] <= thr:
                c += 1
                wait = gap
            wait -= 1
        out[j] = c
    return out


def _chord(point, direction, lo, hi) -> tuple[float, float]:
    # parameters s with point + s * direction inside the closed box
    s0, s1 = -math.inf, math.inf
    for p, v, a, b in zip(point, direction, lo, hi):
        if abs(v) < 1e-15:
            if not (a <= p <= b):
                return 1.0, 0.0
            continue
        t0, t1 = (a - p) / v, (b - p) / v
        s0, s1 = max(s0, min(t0, t1)), min(s1, max(t0, t1))
    return s0, s1


@dataclass
class VisitReport:
    """Per level, the largest visit count over seeds, net angles and tube lines."""

    levels: np.ndarray
    max_counts: np.ndarray
    c: float
    R: float
    rows: list = dc_field(default_factory=list)  # (seed, theta, n, max over lines)

    @property
    def bound(self) -> np.ndarray:
        return self.levels.astype(float) ** 7

    @property
    def violations(self) -> int:
        return int((self.max_counts > self.bound).sum())

    @property
    def inflated_violations(self) -> int:
        return int((self.max_counts > 10 * self.bound).sum())


def line_visit_counts(field: SheetField, theta: float, n: int, R: float, c: float = 1.0, step: float | None = None, window=None) -> np.ndarray:
    """Gap-separated visits of ``|W|`` to ``[0, c n 2^(-n/2)]`` before ``|W| >= R``.

    One line per level-n tube of direction ``(cos theta, sin theta)``, through
    the tube center, parametrized by arc length from its entry into the
    window. Values are the multilinear interpolant of the sheet, not re-timed.
    """
    if field.N != 2:
        raise ConfigError("line visits need N = 2")
    window = field.spec.window if window is None else window
    lo, hi = (np.asarray(window[0], float), np.asarray(window[1], float))
    gap = 2.0**-n
    step = min(field.spec.h, gap / 8) if step is None else step
    p = build_projection(theta=theta)
    k, u = p.kernel_basis[0], p.range_basis[0]
    corners = np.array([[lo[0], lo[1]], [hi[0], lo[1]], [lo[0], hi[1]], [hi[0], hi[1]]])
    e = corners @ u
    n_int = max(1, int(math.ceil((e.max() - e.min()) / gap - 1e-12)))
    centers = e.min() + gap * (np.arange(n_int) + 0.5)
    pts, starts, stops = [], [], []
    total = 0
    for ec in centers:
        base = ec * u
        s0, s1 = _chord(base, k, lo, hi)
        if s1 < s0:
            starts.append(total)
            stops.append(total)
            continue
        s = s0 + step * np.arange(int(math.floor((s1 - s0) / step + 1e-9)) + 1)
        pts.append(base[None, :] + s[:, None] * k[None, :])
        starts.append(total)
        total += s.size
        stops.append(total)
    if total == 0:
        raise EmptyTrace("no tube line meets the window")
    vals = field.interpolate(np.vstack(pts))
    norms = np.linalg.norm(vals.reshape(total, -1), axis=1)
    thr = c * n * 2.0 ** (-n / 2)
    return _line_visits(norms, np.asarray(starts, np.int64), np.asarray(stops, np.int64), thr, R, gap_steps(gap, step))


def visit_bound_check(
    fields: Sequence[SheetField],
    net_level: int = 3,
    levels: Sequence[int] = (6, 7, 8, 9, 10),
    R: float = 2.0,
    c: float = 1.0,
    window=None,
) -> VisitReport:
    """Maximum gap-separated visit counts over fields, net angles and tubes, against ``n^7``."""
    levels = np.asarray(levels, dtype=int)
    best = np.zeros(levels.size, dtype=np.int64)
    rows = []
    for f in fields:
        for theta in angle_net(net_level):
            for i, n in enumerate(levels):
                m = int(line_visit_counts(f, float(theta), int(n), R, c, window=window).max())
                best[i] = max(best[i], m)
                rows.append((f.seed, float(theta), int(n), m))
    return VisitReport(levels, best, c, R, rows)
