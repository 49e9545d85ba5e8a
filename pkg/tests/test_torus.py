import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import brute_diophantine, exact_orbit_point
from qplab.errors import LengthMismatch, RationalInput
from qplab.torus import (GOLDEN, Frequency, continued_fraction, diophantine_check, fejer_weights,
                         orbit, orbit_points, torus_dist, weighted_average, wrap)

omegas = st.floats(min_value=1e-3, max_value=1 - 1e-3)


def test_golden_convergents():
    cf = continued_fraction(GOLDEN, 5)
    assert cf.denominators == [1, 2, 3, 5, 8]
    assert [c.p for c in cf] == [1, 1, 2, 3, 5]
    assert all(a == 1 for a in cf.partial_quotients)


def test_sqrt2_convergents():
    cf = continued_fraction(math.sqrt(2) - 1, 4)
    assert cf.denominators == [2, 5, 12, 29]


@pytest.mark.parametrize("omega", [0.5, 0.25, 0.375])
def test_rational_input_rejected(omega):
    with pytest.raises(RationalInput):
        continued_fraction(omega, 10)


def test_near_rational_rejected():
    with pytest.raises(RationalInput):
        continued_fraction(1 / 3, 10)


@given(omegas, st.integers(1, 8))
def test_convergents_approximate(omega, depth):
    try:
        cf = continued_fraction(omega, depth)
    except RationalInput:
        return
    qs = cf.denominators
    assert all(a < b for a, b in zip(qs[1:], qs[2:]))
    for c in cf:
        assert c.err < 1.0 / c.q**2
        assert math.gcd(c.p, c.q) == 1


@given(st.floats(0, 1, exclude_max=True), omegas, st.integers(-10**9, 10**9))
def test_orbit_matches_exact_rationals(x0, omega, n):
    y = float(orbit_points(x0, omega, np.array([n]))[0])
    ref = exact_orbit_point(x0, omega, n)
    assert 0.0 <= y < 1.0
    assert torus_dist(y - ref) <= 4e-16 * (1 + abs(x0))


def test_orbit_segment():
    pts = orbit(0.1, Frequency(GOLDEN), -2, 2)
    ref = [exact_orbit_point(0.1, GOLDEN, n) for n in range(-2, 3)]
    np.testing.assert_allclose(pts, ref, atol=1e-16)


@given(st.floats(-1e6, 1e6))
def test_wrap_range(x):
    y = wrap(x)
    assert 0.0 <= y < 1.0
    assert torus_dist(x - y) < 1e-9


@given(st.integers(1, 300))
def test_fejer_weights(M):
    w = fejer_weights(M)
    assert w.size == 2 * M - 1
    assert abs(w.sum() - 1.0) < 1e-12
    assert np.all(w > 0)
    np.testing.assert_allclose(w, w[::-1])


@given(st.integers(1, 50), st.floats(-5, 5))
def test_weighted_average_of_constant(M, c):
    assert weighted_average(np.full(2 * M - 1, c), M) == pytest.approx(c, abs=1e-12)


def test_weighted_average_length():
    with pytest.raises(LengthMismatch):
        weighted_average(np.zeros(4), 3)


def test_diophantine_golden_passes():
    rep = diophantine_check(Frequency(GOLDEN, 0.1, 2.0), 1000)
    assert rep.passed and rep.k is None
    assert rep.worst_ratio > 1.0


def test_diophantine_small_constant_A_one():
    rep = diophantine_check(Frequency(GOLDEN, 0.3, 1.0), 1000)
    assert brute_diophantine(GOLDEN, 0.3, 1.0, 1000) == rep.k


@given(omegas, st.floats(0.01, 0.5), st.floats(1.0, 3.0))
@settings(max_examples=40, deadline=None)
def test_diophantine_matches_brute_force(omega, a, A):
    rep = diophantine_check(Frequency(omega, a, A), 200)
    ref = brute_diophantine(omega, a, A, 200)
    assert rep.passed == (ref is None)
    if ref is not None:
        assert rep.k == ref


def test_frequency_validation():
    with pytest.raises(ValueError):
        Frequency(1.2)
    with pytest.raises(ValueError):
        Frequency(0.3, dc_a=0.0)
    with pytest.raises(ValueError):
        Frequency(0.3, dc_A=0.5)
