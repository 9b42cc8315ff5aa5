import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sheetzero.closed_form import covariance, davis, ehm_dimension, gamma_simplex, gamma_simplex_quad, ou_covariance
from sheetzero.errors import DomainError

pos = st.floats(0.0, 5.0, allow_nan=False)


def test_covariance_examples():
    assert covariance((1, 1), (1, 1)) == 1.0
    assert covariance((0, 3), (2, 2)) == 0.0
    assert covariance((1, 2), (2, 1)) == 1.0


def test_covariance_rejects_negative():
    with pytest.raises(DomainError):
        covariance((-1, 1), (1, 1))


@given(st.lists(pos, min_size=3, max_size=3), st.lists(pos, min_size=3, max_size=3), st.lists(pos, min_size=3, max_size=3))
def test_covariance_symmetric_and_monotone(s, t, bump):
    assert covariance(s, t) == covariance(t, s)
    bigger = np.asarray(s) + np.asarray(bump)
    assert covariance(bigger, t) >= covariance(s, t) - 1e-12


def test_ehm_examples():
    assert ehm_dimension(2, 2) == 1.0
    assert ehm_dimension(1, 2) == 0.0
    assert ehm_dimension(3, 2) == 2.0


@given(st.integers(1, 6), st.integers(1, 8))
def test_ehm_monotone(N, d):
    v = ehm_dimension(N, d)
    assert v >= 0
    assert ehm_dimension(N + 1, d) >= v
    assert ehm_dimension(N, d + 1) <= v


def test_davis_examples():
    assert davis(1.0, 1.0, 4.0) == 0.0
    assert davis(2.0, 1.0, 4.0) == pytest.approx(0.5, abs=1e-15)
    assert davis(math.exp(0.3), 1.0, math.e) == pytest.approx(0.3, rel=1e-14)


def test_davis_domain():
    with pytest.raises(DomainError):
        davis(5.0, 1.0, 4.0)
    with pytest.raises(DomainError):
        davis(0.5, 1.0, 4.0)


@given(st.floats(1.001, 3.99), st.floats(1.001, 3.99))
def test_davis_increasing(a, b):
    lo, hi = sorted((a, b))
    if hi - lo > 1e-9:
        assert davis(lo, 1.0, 4.0) < davis(hi, 1.0, 4.0)


def test_gamma_examples():
    assert gamma_simplex((0, 0)) == pytest.approx(0.5, rel=1e-14)
    assert gamma_simplex((0.5, 0.5)) == pytest.approx(math.pi, rel=1e-14)
    assert gamma_simplex((0, 0, 0, 0)) == pytest.approx(1 / 24, rel=1e-14)


@pytest.mark.parametrize("b", [(0.0, 0.0), (0.5, 0.5), (0.3, 0.4), (0.9, 0.1), (0.2, 0.3, 0.1)])
def test_gamma_matches_quadrature(b):
    assert abs(gamma_simplex_quad(b) / gamma_simplex(b) - 1) <= 1e-6


def test_gamma_pole():
    with pytest.raises(DomainError):
        gamma_simplex((1.0, 0.2))


def test_ou_covariance():
    assert ou_covariance(0.3, 0.3, 2.0) == 2.0
    assert ou_covariance(0.0, 2.0, 1.0) == pytest.approx(math.exp(-1.0))
