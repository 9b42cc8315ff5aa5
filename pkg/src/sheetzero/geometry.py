"""Projections, fiber charts, tubes and nets."""
from __future__ import annotations

import csv
import functools
import itertools
import math
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy import linalg

from .errors import ChartError, DomainError, RangeError

# Width inflation of a tube when an angle is replaced by the nearest net angle.
NET_TUBE_INFLATION = 10


class ConditioningWarning(UserWarning):
    pass


# ---------------------------------------------------------------- projections


@dataclass(frozen=True, eq=False)
class Projection:
    """Orthogonal projection ``R^N -> R^N'`` given by orthonormal range rows."""

    range_basis: np.ndarray  # (N', N)
    kernel_basis: np.ndarray  # (N'', N)
    theta: float | None = None

    @property
    def N(self) -> int:
        return self.range_basis.shape[1]

    @property
    def rank(self) -> int:
        return self.range_basis.shape[0]

    @property
    def corank(self) -> int:
        return self.kernel_basis.shape[0]

    def __call__(self, x) -> np.ndarray:
        """Range coordinates of the points ``x`` (shape ``(m, N)``)."""
        return np.atleast_2d(np.asarray(x, dtype=float)) @ self.range_basis.T

    def lift(self, s) -> np.ndarray:
        """The point of the fiber over ``s`` closest to the origin."""
        return np.asarray(s, dtype=float) @ self.range_basis

    @property
    def matrix(self) -> np.ndarray:
        return self.range_basis.T @ self.range_basis


def build_projection(theta: float | None = None, basis=None) -> Projection:
    """Projection from a kernel angle (N = 2) or from rows spanning the range.

    For ``theta`` the kernel is spanned by ``(cos theta, sin theta)`` and the
    range by ``(sin theta, -cos theta)``.
    """
    if theta is not None:
        k = np.array([[math.cos(theta), math.sin(theta)]])
        r = np.array([[math.sin(theta), -math.cos(theta)]])
        return Projection(r, k, float(theta))
    if basis is None:
        raise ValueError("give either theta or basis")
    b = np.atleast_2d(np.asarray(basis, dtype=float))
    rank, N = b.shape
    if not (1 <= rank < N):
        raise RangeError(f"rank {rank} must satisfy 1 <= rank < N = {N}")
    sv = linalg.svdvals(b)
    if sv[-1] <= 1e-12 * max(sv[0], 1e-300):
        raise DomainError("basis vectors are linearly dependent")
    q, _ = linalg.qr(b.T, mode="economic")
    rng_rows = q.T
    ker = linalg.null_space(rng_rows).T
    return Projection(rng_rows, ker)


# ---------------------------------------------------------------- fiber charts


@dataclass(frozen=True, eq=False)
class FiberChart:
    """Coordinate parametrisation of a subspace ``K`` (or its translate).

    ``axes`` are the coordinate axes spanning ``V``; ``gamma`` is the
    ``(N, N'')`` matrix of ``Gamma``, with ``gamma[axes] = I`` so that
    ``q(Gamma(v)) = v``. ``point`` is the fiber point with ``q(point) = 0``.
    """

    axes: tuple[int, ...]
    basis: np.ndarray  # orthonormal rows spanning K
    gamma: np.ndarray
    point: np.ndarray
    method: str = "iterative"

    @property
    def N(self) -> int:
        return self.gamma.shape[0]

    @property
    def dim(self) -> int:
        return len(self.axes)

    @property
    def lipschitz(self) -> float:
        return float(linalg.norm(self.gamma, 2))

    def q(self, x) -> np.ndarray:
        return np.atleast_2d(np.asarray(x, dtype=float))[:, list(self.axes)]

    def param(self, v) -> np.ndarray:
        """``Gamma`` applied to chart coordinates ``v`` (shape ``(m, N'')``)."""
        v = np.atleast_2d(np.asarray(v, dtype=float))
        return self.point[None, :] + v @ self.gamma.T

    def at(self, point) -> "FiberChart":
        """Same chart for the parallel fiber through ``point``."""
        point = np.asarray(point, dtype=float)
        base = point - self.gamma @ point[list(self.axes)]
        return FiberChart(self.axes, self.basis, self.gamma, base, self.method)

    def box_params(self, lo, hi) -> tuple[np.ndarray, np.ndarray]:
        """Bounding box of ``q(fiber ∩ [lo, hi])`` in chart coordinates.

        Empty intersections return a box with ``lo > hi`` somewhere.
        """
        lo = np.asarray(lo, dtype=float)
        hi = np.asarray(hi, dtype=float)
        k = list(self.axes)
        plo, phi = lo[k].copy(), hi[k].copy()
        if self.dim == 1:
            g = self.gamma[:, 0]
            a, b = -np.inf, np.inf
            for l in range(self.N):
                if abs(g[l]) < 1e-15:
                    if not (lo[l] <= self.point[l] <= hi[l]):
                        return np.array([1.0]), np.array([0.0])
                    continue
                t1 = (lo[l] - self.point[l]) / g[l]
                t2 = (hi[l] - self.point[l]) / g[l]
                a, b = max(a, min(t1, t2)), min(b, max(t1, t2))
            return np.array([a]), np.array([b])
        return plo, phi


def _rref_pivots(m: np.ndarray, tol: float = 1e-10) -> np.ndarray:
    """Reduced row echelon form (rows) of a small matrix."""
    a = np.array(m, dtype=float)
    rows, cols = a.shape
    r = 0
    for c in range(cols):
        if r == rows:
            break
        p = r + int(np.argmax(np.abs(a[r:, c])))
        if abs(a[p, c]) <= tol:
            continue
        a[[r, p]] = a[[p, r]]
        a[r] /= a[r, c]
        for i in range(rows):
            if i != r:
                a[i] -= a[i, c] * a[r]
        r += 1
    return a[:r]


def _orthonormal_rows(basis) -> np.ndarray:
    b = np.atleast_2d(np.asarray(basis, dtype=float))
    q, _ = linalg.qr(b.T, mode="economic")
    return q.T


def _iterative_axes(B: np.ndarray) -> list[int] | None:
    """Axis selection by scanning ``R^1 ⊂ R^2 ⊂ ... ⊂ R^N``.

    ``B`` is ``(N, N'')`` with orthonormal columns. Whenever ``K ∩ R^n`` grows,
    the new unit direction with no component on the axes chosen so far picks
    the first unchosen axis among ``e_n`` and the rejected ones on which its
    cosine is at least ``1/sqrt(N)``.
    """
    N, m = B.shape
    chosen: list[int] = []
    rejected: list[int] = []
    prev_dim = 0
    thr = 1.0 / math.sqrt(N) - 1e-12
    for n in range(1, N + 1):
        tail = B[n:, :]
        cur_dim = m - (np.linalg.matrix_rank(tail, tol=1e-10) if tail.size else 0)
        if cur_dim <= prev_dim:
            rejected.append(n - 1)
            continue
        cons = np.vstack([tail, B[chosen, :]]) if chosen else tail
        if cons.size:
            ns = linalg.null_space(cons, rcond=1e-10)
        else:
            ns = np.eye(m)
        if ns.shape[1] != 1:
            return None
        v = B @ ns[:, 0]
        v /= np.linalg.norm(v)
        candidates = sorted(rejected + [n - 1])
        pick = next((i for i in candidates if abs(v[i]) >= thr), None)
        if pick is None:
            return None
        chosen.append(pick)
        if pick != n - 1:
            rejected.remove(pick)
            rejected.append(n - 1)
        prev_dim = cur_dim
    return sorted(chosen) if len(chosen) == m else None


def _maxvol_axes(B: np.ndarray) -> list[int]:
    N, m = B.shape
    best, best_det = None, -1.0
    for k in itertools.combinations(range(N), m):
        det = abs(np.linalg.det(B[list(k), :]))
        if det > best_det + 1e-14:
            best, best_det = list(k), det
    return best


def select_chart(K, point=None) -> FiberChart:
    """Chart ``(V, q, Gamma)`` on the subspace spanned by the rows of ``K``.

    ``K`` may also be a :class:`Projection`, in which case its kernel is used.
    The coordinate axes come from the incremental scan over ``R^n``; should
    that scan fail to keep ``|Gamma(e_j)| <= sqrt(N)``, the axes maximising
    ``|det B_k|`` are used instead, which always satisfies the bound.
    """
    if isinstance(K, Projection):
        K = K.kernel_basis
    raw = np.atleast_2d(np.asarray(K, dtype=float))
    sv = linalg.svdvals(raw)
    if sv[-1] == 0 or sv[0] / sv[-1] > 1e12:
        warnings.warn("subspace basis is nearly degenerate", ConditioningWarning, stacklevel=2)
    rows = _orthonormal_rows(raw)
    B = rows.T
    N, m = B.shape
    if not (1 <= m <= N):
        raise ValueError("subspace dimension out of range")
    axes = _iterative_axes(B)
    method = "iterative"
    if axes is not None:
        G = B @ np.linalg.inv(B[axes, :])
        if np.any(np.linalg.norm(G, axis=0) > math.sqrt(N) * (1 + 1e-9)):
            axes = None
    if axes is None:
        axes = _maxvol_axes(B)
        G = B @ np.linalg.inv(B[axes, :])
        method = "maxvol"
    G[axes, :] = np.eye(m)
    base = np.zeros(N) if point is None else np.asarray(point, dtype=float)
    base = base - G @ base[axes]
    return FiberChart(tuple(axes), rows, G, base, method)


# ---------------------------------------------------------------- tubes


@dataclass(frozen=True, eq=False)
class TubeDecomposition:
    """Tubes ``p^-1(I_i)`` over ``window`` and their tilted squares, N = 2.

    Square ``(i, j)`` is ``{t : u.t in I_i, k.t in [v0 + j h, v0 + (j+1) h)}``
    with ``u`` the range direction and ``k`` the kernel direction.
    """

    level: int
    theta: float
    u: np.ndarray
    k: np.ndarray
    e_lo: float
    v_lo: float
    n_intervals: int
    n_along: int
    alpha: float
    betas: np.ndarray
    squares: np.ndarray  # (m, 2) int indices (i, j) meeting the window
    window: tuple
    inverted: bool = False

    @property
    def h(self) -> float:
        return 2.0 ** (-self.level)

    @property
    def intervals(self) -> np.ndarray:
        lo = self.e_lo + self.h * np.arange(self.n_intervals)
        return np.column_stack([lo, lo + self.h])

    def square_corners(self, i, j) -> np.ndarray:
        h = self.h
        a, b = self.e_lo + i * h, self.v_lo + j * h
        uv = [(a, b), (a + h, b), (a + h, b + h), (a, b + h)]
        return np.array([x * self.u + y * self.k for x, y in uv])

    def assign(self, points) -> np.ndarray:
        """``(i, j)`` square indices of ``points``; ``-1`` rows lie outside.

        Points on a boundary go to the lower index.
        """
        p = np.atleast_2d(np.asarray(points, dtype=float))
        i = np.ceil((p @ self.u - self.e_lo) / self.h).astype(np.int64) - 1
        j = np.ceil((p @ self.k - self.v_lo) / self.h).astype(np.int64) - 1
        i = np.maximum(i, 0)
        j = np.maximum(j, 0)
        out = np.column_stack([i, j])
        bad = (i >= self.n_intervals) | (j >= self.n_along)
        out[bad] = -1
        return out


def _is_increasing_kernel(k: np.ndarray) -> bool:
    return abs(k[0]) > 1e-12 and abs(k[1]) > 1e-12 and k[0] * k[1] > 0


def decompose_tubes(
    p: Projection, n: int, window=((1.0, 1.0), (2.0, 2.0)), inverted: bool = False, tile: bool = True
) -> TubeDecomposition:
    """Cover ``p(window)`` by intervals of length ``2^-n`` and tile the tubes.

    With ``tile=False`` the list of squares meeting the window is left empty;
    :meth:`TubeDecomposition.assign` does not need it.

    Kernels outside the open positive quadrant are only accepted with
    ``inverted=True``, i.e. when the caller works in the time-inverted chart
    (see :func:`sheetzero.field_sim.time_invert`).
    """
    if p.N != 2 or p.rank != 1:
        raise ChartError("tube decomposition needs a rank-1 projection of R^2")
    k = p.kernel_basis[0].copy()
    if k[0] < 0 or (k[0] == 0 and k[1] < 0):
        k = -k
    if not _is_increasing_kernel(k) and not inverted:
        raise ChartError("kernel is not an increasing line; use time_invert and pass inverted=True")
    u = p.range_basis[0]
    lo, hi = (np.asarray(window[0], float), np.asarray(window[1], float))
    corners = np.array([[lo[0], lo[1]], [hi[0], lo[1]], [lo[0], hi[1]], [hi[0], hi[1]]])
    h = 2.0**-n
    e = corners @ u
    v = corners @ k
    e_lo, e_hi = e.min(), e.max()
    v_lo, v_hi = v.min(), v.max()
    n_int = max(1, int(math.ceil((e_hi - e_lo) / h - 1e-12)))
    n_along = max(1, int(math.ceil((v_hi - v_lo) / h - 1e-12)))
    centers = e_lo + h * (np.arange(n_int) + 0.5)
    if abs(u[1]) > 1e-15:
        alpha = -u[0] / u[1]
        betas = centers / u[1]
    else:
        alpha = math.inf
        betas = centers / u[0]
    squares = _squares_in_window(u, k, e_lo, v_lo, h, n_int, n_along, lo, hi) if tile else np.zeros((0, 2), dtype=np.int64)
    theta = p.theta if p.theta is not None else math.atan2(k[1], k[0])
    return TubeDecomposition(n, theta, u, k, e_lo, v_lo, n_int, n_along, alpha, betas, squares, (tuple(lo), tuple(hi)), inverted)


def _squares_in_window(u, k, e_lo, v_lo, h, n_int, n_along, lo, hi) -> np.ndarray:
    # a square meets the open window iff the two convex sets are not separated
    # along any of the four edge normals (separating axis theorem)
    i, j = np.meshgrid(np.arange(n_int), np.arange(n_along), indexing="ij")
    i = i.ravel()
    j = j.ravel()
    a = e_lo + i * h
    b = v_lo + j * h
    cs = [np.outer(a + da, u) + np.outer(b + db, k) for da, db in ((0, 0), (h, 0), (0, h), (h, h))]
    xs = np.stack([c[:, 0] for c in cs])
    ys = np.stack([c[:, 1] for c in cs])
    tol = 1e-12
    keep = (xs.max(0) > lo[0] + tol) & (xs.min(0) < hi[0] - tol) & (ys.max(0) > lo[1] + tol) & (ys.min(0) < hi[1] - tol)
    wc = np.array([[lo[0], lo[1]], [hi[0], lo[1]], [lo[0], hi[1]], [hi[0], hi[1]]])
    we, wv = wc @ u, wc @ k
    keep &= (a + h > we.min() + tol) & (a < we.max() - tol) & (b + h > wv.min() + tol) & (b < wv.max() - tol)
    return np.column_stack([i[keep], j[keep]])


def angle_net(m: int) -> np.ndarray:
    """Angles ``2 pi j / 2^m`` for ``j = 1..2^m``."""
    if m < 1:
        raise ValueError("m must be >= 1")
    return 2.0 * math.pi * np.arange(1, 2**m + 1) / 2**m


# ---------------------------------------------------------------- subspace metric and nets


@dataclass(frozen=True, eq=False)
class Fiber:
    """Affine subspace ``point + span(basis rows)``."""

    point: np.ndarray
    basis: np.ndarray
    coeffs: tuple | None = None  # integer coefficients when drawn from a net

    def canonical(self, origin) -> tuple[np.ndarray, np.ndarray]:
        """Unique representative: foot of ``origin`` on the fiber and an
        orthonormal basis obtained from the reduced echelon form."""
        q = _orthonormal_rows(self.basis)
        P = q.T @ q
        c0 = origin + (self.point - origin) - P @ (self.point - origin)
        R = _rref_pivots(P)
        C = _orthonormal_rows(R)
        # Gram-Schmidt of echelon rows keeps each leading entry positive
        for r in range(C.shape[0]):
            lead = np.flatnonzero(np.abs(R[r]) > 1e-10)[0]
            if C[r, lead] < 0:
                C[r] = -C[r]
        return c0, C


def fiber_distance(a: Fiber, b: Fiber, origin=None) -> float:
    """Sup-norm distance between canonical coefficient representations."""
    N = a.point.size
    origin = np.full(N, 1.5) if origin is None else np.asarray(origin, dtype=float)
    c0a, Ca = a.canonical(origin)
    c0b, Cb = b.canonical(origin)
    if Ca.shape != Cb.shape:
        raise ValueError("fibers of different dimension")
    return float(max(np.max(np.abs(c0a - c0b)), np.max(np.abs(Ca - Cb))))


@dataclass(frozen=True, eq=False)
class SubspaceNet:
    level: int
    elements: list
    origin: np.ndarray

    def __len__(self) -> int:
        return len(self.elements)

    @functools.cached_property
    def keys(self) -> np.ndarray:
        """Canonical representations, one row per element."""
        return np.array([np.concatenate([c0, C.ravel()]) for c0, C in (e.canonical(self.origin) for e in self.elements)])

    def nearest(self, fiber: Fiber) -> tuple[int, float]:
        """Brute-force nearest element."""
        c0, C = fiber.canonical(self.origin)
        dists = np.abs(self.keys - np.concatenate([c0, C.ravel()])[None, :]).max(axis=1)
        i = int(np.argmin(dists))
        return i, float(dists[i])


def subspace_net(
    n: int,
    N: int,
    corank: int,
    base_box,
    directions: Sequence | None = None,
    origin=None,
    max_elements: int = 200_000,
) -> SubspaceNet:
    """Affine subspaces with level-n dyadic coefficients.

    Base points range over the dyadic points of ``base_box``; direction rows
    have integer coefficients ``i / 2^n`` with ``|i| <= 2^n``, or are the fixed
    ``directions`` when given (a family of parallel fibers). Elements with the
    same canonical representation are merged.
    """
    lo, hi = (np.asarray(base_box[0], float), np.asarray(base_box[1], float))
    scale = 2**n
    origin = np.full(N, 1.5) if origin is None else np.asarray(origin, dtype=float)
    axes = [np.arange(math.ceil(a * scale), math.floor(b * scale) + 1) for a, b in zip(lo, hi)]
    if directions is None:
        vecs = [v for v in itertools.product(range(-scale, scale + 1), repeat=N) if any(v)]
        dir_sets = list(itertools.combinations(vecs, corank))
    else:
        dir_sets = [tuple(tuple(row) for row in np.atleast_2d(directions))]
    est = len(dir_sets) * int(np.prod([a.size for a in axes]))
    if est > max_elements:
        raise RangeError(f"net would enumerate {est} candidates (limit {max_elements})")
    seen: dict[tuple, Fiber] = {}
    for ds in dir_sets:
        D = np.array(ds, dtype=float) / (scale if directions is None else 1)
        if np.linalg.matrix_rank(D, tol=1e-12) < corank:
            continue
        for ib in itertools.product(*axes):
            f = Fiber(np.array(ib, dtype=float) / scale, D, (tuple(ib), tuple(map(tuple, np.atleast_2d(ds)))))
            c0, C = f.canonical(origin)
            key = tuple(np.round(np.concatenate([c0, C.ravel()]), 9))
            if key not in seen:
                seen[key] = f
    return SubspaceNet(n, list(seen.values()), origin)


# ---------------------------------------------------------------- projected covers


def projection_cover_constant(N: int) -> int:
    return (2 * math.ceil(math.sqrt(N)) + 1) ** N


def project_cells(indices: np.ndarray, level: int, p: Projection, image_level: int | None = None) -> np.ndarray:
    """Image cells (range coordinates, grid anchored at 0) met by projected cells.

    ``indices`` are global integer cell indices at ``level``; each cell's image
    is enclosed in its bounding box, whose cells are returned (unique rows).
    """
    image_level = level if image_level is None else image_level
    idx = np.atleast_2d(np.asarray(indices, dtype=np.int64))
    if idx.size == 0:
        return np.zeros((0, p.rank), dtype=np.int64)
    h = 2.0**-level
    R = p.range_basis
    lo_corner = idx * h
    base = lo_corner @ R.T
    spread_lo = h * np.minimum(R, 0).sum(axis=1)
    spread_hi = h * np.maximum(R, 0).sum(axis=1)
    s = 2.0**image_level
    lo = np.floor((base + spread_lo) * s + 1e-9).astype(np.int64)
    hi = np.ceil((base + spread_hi) * s - 1e-9).astype(np.int64) - 1
    hi = np.maximum(hi, lo)
    spans = hi - lo + 1
    out = []
    for offs in itertools.product(*[range(int(w)) for w in spans.max(axis=0)]):
        offs = np.asarray(offs)
        ok = np.all(offs[None, :] < spans, axis=1)
        out.append(lo[ok] + offs)
    cells = np.concatenate(out)
    return np.unique(cells, axis=0)


# ---------------------------------------------------------------- export


def write_tubes_csv(t: TubeDecomposition, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["level", "theta", "tube", "square", "u_lo", "v_lo"])
        for i, j in t.squares:
            w.writerow([t.level, repr(t.theta), int(i), int(j), repr(t.e_lo + i * t.h), repr(t.v_lo + j * t.h)])


def write_angle_net_csv(m: int, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["level", "j", "numerator", "denominator_log2", "theta"])
        for j, th in enumerate(angle_net(m), start=1):
            w.writerow([m, j, 2 * j, m, repr(float(th))])


def write_net_csv(net: SubspaceNet, path) -> None:
    N = net.origin.size
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        first = net.elements[0] if net.elements else None
        m = np.atleast_2d(first.basis).shape[0] if first is not None else 0
        head = ["level"] + [f"i_{l}_0" for l in range(1, N + 1)]
        head += [f"i_{l}_{k}" for k in range(1, m + 1) for l in range(1, N + 1)]
        w.writerow(head)
        for e in net.elements:
            base, dirs = e.coeffs
            row = [net.level, *base]
            for d in dirs:
                row.extend(d)
            w.writerow(row)
