"""Exact formulas used as oracles."""
from __future__ import annotations

import math
from typing import Sequence

import numpy as np
from scipy import integrate, special

from .errors import DomainError


def covariance(s: Sequence[float], t: Sequence[float]) -> float:
    """``E[W(s) W(t)] = prod_k min(s_k, t_k)`` for one sheet component."""
    s = np.asarray(s, dtype=float)
    t = np.asarray(t, dtype=float)
    if s.shape != t.shape:
        raise ValueError("s and t must have the same length")
    if np.any(s < 0) or np.any(t < 0):
        raise DomainError("sheet parameters must be nonnegative")
    return float(np.prod(np.minimum(s, t)))


def ehm_dimension(N: int, d: int) -> float:
    """Hausdorff dimension ``(N - d/2)^+`` of the zero set of an (N, d)-sheet."""
    if N < 1 or d < 1:
        raise ValueError("N and d must be positive")
    return max(N - d / 2.0, 0.0)


def davis(a_norm: float, r: float, R: float) -> float:
    """Probability that planar Brownian motion from ``|a| = a_norm`` hits radius R before r."""
    if not (0 < r <= a_norm <= R):
        raise DomainError(f"need 0 < r <= |a| <= R, got r={r}, |a|={a_norm}, R={R}")
    if r == R:
        raise DomainError("r and R must differ")
    return (math.log(a_norm) - math.log(r)) / (math.log(R) - math.log(r))


def gamma_simplex(b: Sequence[float]) -> float:
    """Integral of ``prod_j (s_j - s_{j-1})^(-b_j)`` over the ordered simplex in [0, 1].

    Equals ``prod_j Gamma(1 - b_j) / Gamma(1 + K - sum_j b_j)`` with ``K = len(b)``.
    """
    b = np.asarray(b, dtype=float)
    if b.ndim != 1 or b.size == 0:
        raise ValueError("b must be a nonempty vector")
    if np.any(b >= 1):
        raise DomainError("every b_j must be < 1 (pole of the Gamma function)")
    top = 1.0 + b.size - b.sum()
    if top <= 0:
        raise DomainError("1 + K - sum(b) must be positive")
    return float(np.prod(special.gamma(1.0 - b)) / special.gamma(top))


def gamma_simplex_quad(b: Sequence[float], epsrel: float = 1e-11) -> float:
    """The simplex integral of :func:`gamma_simplex` by nested adaptive quadrature.

    ``F_1(t) = t^(-b_1)`` and ``F_j(t) = int_0^t F_{j-1}(s) (t - s)^(-b_j) ds``;
    the value is ``int_0^1 F_K``. The algebraic endpoint singularities are
    handled by the QUADPACK ``alg`` weight; no homogeneity is assumed.
    """
    b = np.asarray(b, dtype=float)
    if b.ndim != 1 or b.size == 0:
        raise ValueError("b must be a nonempty vector")
    if np.any(b >= 1):
        raise DomainError("every b_j must be < 1 (the integral diverges)")
    opts = {"epsabs": 0.0, "epsrel": epsrel, "limit": 200}

    def level(j: int, t: float) -> float:
        if t <= 0.0:
            return 0.0
        if j == 2:
            return integrate.quad(lambda s: 1.0, 0.0, t, weight="alg", wvar=(-b[0], -b[1]), **opts)[0]
        return integrate.quad(lambda s: level(j - 1, s), 0.0, t, weight="alg", wvar=(0.0, -b[j - 1]), **opts)[0]

    if b.size == 1:
        return integrate.quad(lambda s: 1.0, 0.0, 1.0, weight="alg", wvar=(-b[0], 0.0), **opts)[0]
    return integrate.quad(lambda t: level(b.size, t), 0.0, 1.0, **opts)[0]


def ou_covariance(s1: float, s2: float, t: float) -> float:
    """Covariance of ``exp(-s/2) W(exp(s), t)`` at ``(s1, t)`` and ``(s2, t)``."""
    return math.exp(-abs(s1 - s2) / 2.0) * t
