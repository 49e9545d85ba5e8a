import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import cos_measure, tan_measure
from qplab.errors import DepthExceeded
from qplab.functions import MeromorphicPotential, TrigPolynomial
from qplab.sublevel import (chain_check, dyadic_bracket, fit_exponent, linear_exponent_fit,
                            lojasiewicz_fit, normalized_linear_measure, potential_measure,
                            sublevel_measure)

MARYLAND = MeromorphicPotential.maryland()
COS2 = MeromorphicPotential(TrigPolynomial.cos(1, 2.0), TrigPolynomial.constant(1.0))


def test_tan_measure_closed_form():
    b = potential_measure(MARYLAND, 0.0, 0.1, 20)
    assert b.contains(tan_measure(0.0, 0.1))
    assert b.mid == pytest.approx(0.0634510, abs=1e-6)


def test_cos_measure_closed_form():
    # the level 2 - eps/2 ... 2 sits at the maximum of 2 cos, so the set is one arc
    b = sublevel_measure(lambda x: 2 * np.cos(2 * np.pi * x) - 2, 0.01, 20)
    expected = math.acos(1 - 0.005) / math.pi
    assert b.contains(expected)
    assert expected == pytest.approx(0.03184, abs=1e-5)


@given(st.floats(-5, 5), st.floats(1e-4, 0.5))
@settings(max_examples=40, deadline=None)
def test_brackets_contain_closed_forms(E, eps):
    assert potential_measure(MARYLAND, E, eps, 16).contains(tan_measure(E, eps))
    b = potential_measure(COS2, E, eps, 16)
    exact = cos_measure(E, eps)
    assert b.lower - 1e-12 <= exact <= b.upper + 1e-12


@given(st.floats(-3, 3), st.floats(1e-3, 0.3))
@settings(max_examples=20, deadline=None)
def test_brackets_nest_with_depth(E, eps):
    prev = None
    for depth in (8, 12, 16, 20):
        b = potential_measure(MARYLAND, E, eps, depth)
        assert b.lower <= b.upper
        if prev is not None:
            assert b.lower >= prev.lower - 1e-15
            assert b.upper <= prev.upper + 1e-15
        prev = b


def test_empty_and_full_sets():
    assert sublevel_measure(lambda x: np.ones_like(x), 0.5, 10).upper == 0.0
    full = sublevel_measure(lambda x: np.zeros_like(x), 0.5, 10)
    assert full.lower == full.upper == 1.0


def test_depth_limits():
    with pytest.raises(ValueError):
        dyadic_bracket(lambda x: x, 30)
    # a margin that flips sign in every sample pattern leaves too much undecided
    with pytest.raises(DepthExceeded):
        dyadic_bracket(lambda x: np.sin(2 * np.pi * x * 2**12), 4)


def test_linear_measure_normalization():
    E = 3.0
    b = normalized_linear_measure(MARYLAND, E, 0.01, 18)
    s = math.sqrt(1 + E * E)
    direct = sublevel_measure(MARYLAND.linear(E), 0.01 * s, 18)
    assert b.lower == pytest.approx(direct.lower) and b.upper == pytest.approx(direct.upper)


def test_fit_exponent_on_power_law():
    eps = np.logspace(-5, -1, 9)
    c, b, r2 = fit_exponent(eps, 3.0 * eps**0.7)
    assert c == pytest.approx(0.7) and math.exp(b) == pytest.approx(3.0) and r2 == pytest.approx(1.0)


def test_fit_needs_span():
    with pytest.raises(ValueError):
        lojasiewicz_fit(MARYLAND, 0.0, [1e-3, 2e-3, 3e-3, 4e-3])
    with pytest.raises(ValueError):
        lojasiewicz_fit(MARYLAND, 0.0, [1e-5, 1e-1])


def test_linear_fit_on_maryland():
    fit = linear_exponent_fit(MARYLAND, 0.0)
    assert fit.c == pytest.approx(1.0, abs=0.05)


@given(st.floats(-10, 10), st.floats(1e-5, 0.2))
@settings(max_examples=25, deadline=None)
def test_chain_inequality(E, eps):
    assert chain_check(MARYLAND, E, eps, 16).ok
