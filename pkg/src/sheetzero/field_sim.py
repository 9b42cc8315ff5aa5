"""Brownian sheets on dyadic lattices.

A component of an (N, d)-sheet is built as the N-dimensional prefix sum of
independent centred Gaussian cell increments of variance ``h**N``; at lattice
vertices this reproduces the covariance ``prod_k min(s_k, t_k)`` exactly.
Cell noise is drawn from counter-based streams keyed by
``(seed, component, block)``, so the result does not depend on how the work
is split between threads or strips.

Off-lattice values use multilinear interpolation. Along a segment of length
``l`` the interpolant differs from the sheet by at most the lattice modulus,
of order ``n * 2**(-n/2)`` at level ``n``.
"""
from __future__ import annotations

import hashlib
import json
import math
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np
from scipy import ndimage

from . import rng
from .errors import DomainError, EmptyTrace, RangeError, SizingError

BLOCK_CELLS = 1 << 14
STRIP_CELLS = 1 << 22
MAX_LEVEL = 40
DEFAULT_MEMORY_BUDGET = 1536 * 1024**2

_MAGIC = b"BSHEET01"


@dataclass(frozen=True)
class GridSpec:
    """Dyadic lattice of spacing ``2**-level`` on ``[0, upper]``.

    The lower corner of the domain is the origin so the sheet is anchored on
    the coordinate hyperplanes. ``window`` is the analysis box ``M``.
    """

    dims: int
    level: int
    upper: tuple[float, ...] | None = None
    window: tuple[tuple[float, ...], tuple[float, ...]] | None = None

    def __post_init__(self):
        if self.dims < 1:
            raise ValueError("dims must be >= 1")
        if self.level < 0:
            raise ValueError("level must be >= 0")
        if self.level > MAX_LEVEL:
            raise RangeError(f"level {self.level} exceeds supported maximum {MAX_LEVEL}")
        upper = tuple(float(u) for u in (self.upper or (2.0,) * self.dims))
        if len(upper) != self.dims:
            raise ValueError("upper corner has wrong length")
        if self.window is None:
            window = ((1.0,) * self.dims, (2.0,) * self.dims)
        else:
            window = (tuple(map(float, self.window[0])), tuple(map(float, self.window[1])))
        object.__setattr__(self, "upper", upper)
        object.__setattr__(self, "window", window)

        scale = 2.0**self.level
        for u in upper:
            if u <= 0 or u * scale != math.floor(u * scale):
                raise ValueError(f"domain corner {u} is not a positive multiple of 2^-{self.level}")
        lo, hi = window
        if len(lo) != self.dims or len(hi) != self.dims:
            raise ValueError("window has wrong dimension")
        for a, b, u in zip(lo, hi, upper):
            if not (0.0 <= a < b <= u):
                raise ValueError(f"window [{a}, {b}] not inside domain [0, {u}]")
            if a * scale != math.floor(a * scale) or b * scale != math.floor(b * scale):
                raise ValueError("window corners must lie on the lattice")
        total = 1
        for c in self.cells:
            total *= c
        if total >= 2**62:
            raise RangeError(f"{total} cells overflow 64-bit index arithmetic")

    @property
    def h(self) -> float:
        return 2.0 ** (-self.level)

    @property
    def cells(self) -> tuple[int, ...]:
        return tuple(int(round(u * 2**self.level)) for u in self.upper)

    @property
    def vertex_shape(self) -> tuple[int, ...]:
        return tuple(c + 1 for c in self.cells)

    @property
    def window_index(self) -> tuple[tuple[int, ...], tuple[int, ...]]:
        """Vertex index bounds (inclusive) of the window."""
        lo, hi = self.window
        s = 2**self.level
        return tuple(int(round(a * s)) for a in lo), tuple(int(round(b * s)) for b in hi)

    def coords(self, axis: int) -> np.ndarray:
        return np.arange(self.vertex_shape[axis]) * self.h

    def nbytes(self, d: int) -> int:
        return 8 * d * int(np.prod(self.vertex_shape, dtype=np.float64))

    def with_level(self, level: int) -> "GridSpec":
        return GridSpec(self.dims, level, self.upper, self.window)


@dataclass(frozen=True, eq=False)
class SheetField:
    """Vertex values of a d-component sheet, shape ``(d, *spec.vertex_shape)``."""

    spec: GridSpec
    d: int
    values: np.ndarray
    seed: int = 0

    def __post_init__(self):
        if self.values.shape != (self.d, *self.spec.vertex_shape):
            raise ValueError(f"values shape {self.values.shape} does not match spec")
        self.values.flags.writeable = False

    @property
    def N(self) -> int:
        return self.spec.dims

    def window_values(self) -> np.ndarray:
        lo, hi = self.spec.window_index
        sl = tuple(slice(a, b + 1) for a, b in zip(lo, hi))
        return self.values[(slice(None),) + sl]

    def interpolate(self, points) -> np.ndarray:
        """Multilinear interpolation at ``points`` (shape ``(m, N)``), returns ``(m, d)``."""
        pts = _check_points(self.spec, points)
        return _interp(self.values, pts.T / self.spec.h)


def _check_points(spec: GridSpec, points) -> np.ndarray:
    pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
    if pts.shape[1] != spec.dims:
        raise ValueError(f"points must have {spec.dims} columns")
    eps = 1e-12
    if np.any(pts < -eps) or np.any(pts > np.asarray(spec.upper) + eps):
        raise DomainError("point outside the simulated domain")
    return np.clip(pts, 0.0, np.asarray(spec.upper))


def _interp(values: np.ndarray, idx_coords: np.ndarray) -> np.ndarray:
    out = np.empty((idx_coords.shape[1], values.shape[0]))
    for k in range(values.shape[0]):
        out[:, k] = ndimage.map_coordinates(values[k], idx_coords, order=1, mode="nearest")
    return out


def _cell_noise(seed: int, component: int, start: int, stop: int, pool) -> np.ndarray:
    """Standard normals for flat cell indices ``[start, stop)`` of one component."""
    b0 = start // BLOCK_CELLS
    b1 = (stop - 1) // BLOCK_CELLS + 1

    def gen(b: int) -> np.ndarray:
        count = min(BLOCK_CELLS, stop - b * BLOCK_CELLS)
        return rng.stream(seed, rng.FIELD, component, b).standard_normal(count)

    blocks = list(pool.map(gen, range(b0, b1))) if pool is not None else [gen(b) for b in range(b0, b1)]
    flat = np.concatenate(blocks) if len(blocks) > 1 else blocks[0]
    offset = start - b0 * BLOCK_CELLS
    return flat[offset:offset + (stop - start)]


def iter_strips(
    spec: GridSpec, d: int, seed: int, rows: int | None = None, workers: int = 1
) -> Iterator[tuple[int, np.ndarray]]:
    """Stream the sheet as slabs of vertex rows along the first axis.

    Yields ``(r0, block)`` where ``block[:, j]`` holds vertex row ``r0 + j``;
    consecutive blocks share their boundary row. Values are bitwise identical
    to :func:`simulate_sheet` whatever ``rows`` and ``workers`` are.
    """
    cells = spec.cells
    rest = cells[1:]
    row_cells = int(np.prod(rest, dtype=np.int64)) if rest else 1
    if rows is None:
        rows = max(1, STRIP_CELLS // row_cells)
    scale = math.sqrt(spec.h**spec.dims)
    carry = np.zeros((d, *(c + 1 for c in rest)))
    pool = ThreadPoolExecutor(workers) if workers > 1 else None
    try:
        for r0 in range(0, cells[0], rows):
            r1 = min(cells[0], r0 + rows)
            incr = np.empty((d, r1 - r0, *rest))
            for k in range(d):
                noise = _cell_noise(seed, k, r0 * row_cells, r1 * row_cells, pool)
                incr[k] = noise.reshape(r1 - r0, *rest)
            incr *= scale
            for ax in range(2, spec.dims + 1):
                incr = np.cumsum(incr, axis=ax)
                pad = [(0, 0)] * incr.ndim
                pad[ax] = (1, 0)
                incr = np.pad(incr, pad)
            block = np.cumsum(np.concatenate([carry[:, None], incr], axis=1), axis=1)
            carry = block[:, -1].copy()
            yield r0, block
    finally:
        if pool is not None:
            pool.shutdown()


def check_budget(spec: GridSpec, d: int, budget: int | None) -> None:
    budget = DEFAULT_MEMORY_BUDGET if budget is None else budget
    need = spec.nbytes(d)
    if need > budget:
        raise SizingError(need, budget)


def simulate_sheet(
    spec: GridSpec, d: int, seed: int, workers: int = 1, memory_budget: int | None = None
) -> SheetField:
    """Simulate an (N, d)-Brownian sheet at every vertex of ``spec``."""
    if d < 1:
        raise ValueError("d must be >= 1")
    check_budget(spec, d, memory_budget)
    values = np.empty((d, *spec.vertex_shape))
    for r0, block in iter_strips(spec, d, seed, workers=workers):
        values[:, r0:r0 + block.shape[1]] = block
    return SheetField(spec, d, values, seed)


def sample_sheet(spec: GridSpec, d: int, seed: int, points, workers: int = 1) -> np.ndarray:
    """Interpolated sheet values at ``points`` without holding the whole lattice.

    Same numbers as ``simulate_sheet(...).interpolate(points)`` up to rounding
    in the interpolation weights; memory stays at one strip.
    """
    pts = _check_points(spec, points)
    idx = pts / spec.h
    row = np.minimum(np.floor(idx[:, 0]).astype(np.int64), spec.cells[0] - 1)
    out = np.empty((len(pts), d))
    for r0, block in iter_strips(spec, d, seed, workers=workers):
        r1 = r0 + block.shape[1] - 1
        sel = np.nonzero((row >= r0) & (row < r1))[0]
        if sel.size:
            local = idx[sel].T.copy()
            local[0] -= r0
            out[sel] = _interp(block, local)
    return out


# ---------------------------------------------------------------- derived processes


@dataclass(frozen=True, eq=False)
class LineTrace:
    """Sheet values along ``t -> origin + t * direction`` for N = 2."""

    origin: np.ndarray
    direction: np.ndarray
    step: float
    params: np.ndarray
    values: np.ndarray  # (m, d)
    alpha: float
    beta: float

    @property
    def points(self) -> np.ndarray:
        return self.origin[None, :] + self.params[:, None] * self.direction[None, :]

    def time_change(self, t1=None) -> np.ndarray:
        """Variance clock ``t1 * (alpha * t1 + beta)`` of the restricted sheet."""
        t1 = self.params if t1 is None else np.asarray(t1, dtype=float)
        return time_change(t1, self.alpha, self.beta)


def time_change(t1, alpha: float, beta: float):
    return t1 * (alpha * t1 + beta)


def line_segment(alpha: float, beta: float, window) -> tuple[float, float]:
    """Range of ``t1`` with ``(t1, alpha * t1 + beta)`` inside ``window``."""
    (a1, a2), (b1, b2) = window
    lo, hi = a1, b1
    if alpha > 0:
        lo = max(lo, (a2 - beta) / alpha)
        hi = min(hi, (b2 - beta) / alpha)
    elif alpha < 0:
        lo = max(lo, (b2 - beta) / alpha)
        hi = min(hi, (a2 - beta) / alpha)
    elif not (a2 <= beta <= b2):
        return 1.0, 0.0
    return lo, hi


def restrict_to_line(
    field: SheetField, alpha: float, beta: float, step: float, window=None
) -> LineTrace:
    """Sample the sheet along ``t2 = alpha * t1 + beta`` inside ``window``.

    ``window`` defaults to the analysis window of the field. Values are the
    multilinear interpolant; the parameter is ``t1``.
    """
    if field.N != 2:
        raise ValueError("line restriction needs N = 2")
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    if step <= 0:
        raise ValueError("step must be positive")
    window = field.spec.window if window is None else window
    lo, hi = line_segment(alpha, beta, window)
    if hi < lo:
        raise EmptyTrace(f"line t2 = {alpha} t1 + {beta} misses the window")
    count = int(math.floor((hi - lo) / step + 1e-9)) + 1
    params = lo + step * np.arange(count)
    pts = np.column_stack([params, alpha * params + beta])
    values = field.interpolate(pts)
    return LineTrace(
        origin=np.array([0.0, beta]),
        direction=np.array([1.0, alpha]),
        step=step,
        params=params,
        values=values,
        alpha=alpha,
        beta=beta,
    )


@dataclass(frozen=True, eq=False)
class InvertedField:
    """``(s, t) -> t * W(s, 1/t)`` on the points ``s x t``; values ``(d, len(s), len(t))``."""

    s: np.ndarray
    t: np.ndarray
    values: np.ndarray


def time_invert(field: SheetField, t: Sequence[float] | None = None) -> InvertedField:
    """Second-axis time inversion of a two-parameter sheet.

    Only points whose inverse ``1/t`` is a lattice coordinate are returned, so
    no interpolation is involved. ``t`` defaults to all of them.
    """
    if field.N != 2:
        raise ValueError("time inversion needs N = 2")
    spec = field.spec
    if t is None:
        k = np.arange(spec.cells[1], 0, -1)
    else:
        t = np.asarray(t, dtype=float)
        if np.any(t <= 0):
            raise DomainError("time inversion is undefined at t <= 0")
        u = (1.0 / t) / spec.h
        k = np.rint(u).astype(np.int64)
        if np.any(np.abs(u - k) > 1e-9 * np.maximum(1.0, u)) or np.any(k < 1) or np.any(k > spec.cells[1]):
            raise DomainError("1/t must be a lattice coordinate inside the domain")
    tt = 1.0 / (k * spec.h)
    vals = field.values[:, :, k] * tt[None, None, :]
    return InvertedField(spec.coords(0), tt, vals)


@dataclass(frozen=True, eq=False)
class OUTrace:
    """``U(s, t) = exp(-s/2) W(exp(s), t)``; values ``(d, len(s), len(t))``."""

    s: np.ndarray
    t: np.ndarray
    values: np.ndarray


def ou_transform(field: SheetField, s_grid: Sequence[float]) -> OUTrace:
    """Ornstein-Uhlenbeck reparametrisation of the first axis, N = 2."""
    if field.N != 2:
        raise ValueError("OU transform needs N = 2")
    s = np.asarray(s_grid, dtype=float)
    x = np.exp(s)
    if np.any(x > field.spec.upper[0] * (1 + 1e-12)):
        raise RangeError("exp(s) falls outside the domain's first coordinate")
    tc = field.spec.coords(1)
    pts = np.column_stack([np.repeat(x, tc.size), np.tile(tc, x.size)])
    vals = field.interpolate(pts).T.reshape(field.d, x.size, tc.size)
    vals = vals * np.exp(-s / 2)[None, :, None]
    return OUTrace(s, tc, vals)


# ---------------------------------------------------------------- export


def export_field(field: SheetField, path) -> dict:
    """Write ``path`` (binary) and ``path.json`` (manifest); return the manifest."""
    path = Path(path)
    spec = field.spec
    N = spec.dims
    header = _MAGIC + struct.pack(
        f"<qqq{N}d{N}d{N}d{N}dQ",
        N,
        field.d,
        spec.level,
        *([0.0] * N),
        *spec.upper,
        *spec.window[0],
        *spec.window[1],
        field.seed & rng.MASK64,
    )
    payload = np.ascontiguousarray(field.values, dtype="<f8")
    digest = hashlib.sha256()
    with open(path, "wb") as fh:
        fh.write(header)
        digest.update(header)
        buf = payload.tobytes()
        fh.write(buf)
        digest.update(buf)
    manifest = {
        "format": "bsheet-v1",
        "N": N,
        "d": field.d,
        "level": spec.level,
        "domain": {"lower": [0.0] * N, "upper": list(spec.upper)},
        "window": {"lower": list(spec.window[0]), "upper": list(spec.window[1])},
        "seed": field.seed,
        "shape": [field.d, *spec.vertex_shape],
        "dtype": "<f8",
        "order": "C",
        "header_bytes": len(header),
        "sha256": digest.hexdigest(),
    }
    Path(str(path) + ".json").write_text(json.dumps(manifest, indent=2))
    return manifest


def read_field(path) -> SheetField:
    data = Path(path).read_bytes()
    if data[:8] != _MAGIC:
        raise ValueError(f"{path}: not a sheet dump")
    N, d, level = struct.unpack_from("<qqq", data, 8)
    fmt = f"<{N}d{N}d{N}d{N}dQ"
    rest = struct.unpack_from(fmt, data, 32)
    upper = rest[N:2 * N]
    window = (rest[2 * N:3 * N], rest[3 * N:4 * N])
    seed = rest[-1]
    spec = GridSpec(N, level, upper, window)
    offset = 32 + struct.calcsize(fmt)
    values = np.frombuffer(data, dtype="<f8", offset=offset).reshape(d, *spec.vertex_shape).copy()
    return SheetField(spec, d, values, seed)
