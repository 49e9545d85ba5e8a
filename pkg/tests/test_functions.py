import math
import pickle

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import jensen_log_integral, trig_value
from qplab.errors import OutOfAnnulus, PoleProximity
from qplab.functions import (MeromorphicPotential, ToeplitzKernel, TrigPolynomial, eval, eval_potential,
                             kernel_tail_bound, log_abs_integral, sup_norm_annulus, zeros_on_torus)

coeff = st.complex_numbers(max_magnitude=3, allow_nan=False, allow_infinity=False)
polys = st.dictionaries(st.integers(1, 4), coeff, min_size=1, max_size=4).flatmap(
    lambda d: st.floats(-3, 3).map(lambda c0: {**d, 0: c0}))


@given(polys, st.floats(0, 1))
def test_real_evaluation_matches_direct_sum(c, x):
    h = TrigPolynomial(c)
    assert h(x) == pytest.approx(trig_value(c, x).real, abs=1e-11)
    assert abs(trig_value(c, x).imag) < 1e-11


@given(polys, st.floats(0, 1), st.floats(-0.9, 0.9))
def test_complex_evaluation(c, x, y):
    h = TrigPolynomial(c)
    z = complex(x, y)
    ref = sum(complex(v) * np.exp(2j * math.pi * n * z) for n, v in h.coeffs.items())
    assert abs(eval(h, z) - ref) <= 1e-10 * (1 + abs(ref))


def test_out_of_annulus():
    h = TrigPolynomial.cos(radius=0.2)
    with pytest.raises(OutOfAnnulus):
        h.evaluate(0.3j)


def test_hermitian_completion():
    assert TrigPolynomial({1: 0.5})(0.0) == pytest.approx(1.0)
    assert TrigPolynomial.sin()(0.25) == pytest.approx(1.0)
    with pytest.raises(ValueError):
        TrigPolynomial({1: 1.0, -1: 2.0})


@given(polys, st.floats(0.01, 0.99))
def test_derivative(c, x):
    h = TrigPolynomial(c)
    step = 1e-6
    fd = (h(x + step) - h(x - step)) / (2 * step)
    scale = 1 + sum(abs(v) for v in h.coeffs.values()) * 2 * math.pi * h.degree
    assert h.derivative()(x) == pytest.approx(fd, abs=1e-6 * scale)


def test_arithmetic():
    a, b = TrigPolynomial.cos(), TrigPolynomial.sin()
    x = 0.37
    assert (a + b)(x) == pytest.approx(a(x) + b(x))
    assert (a - 2 * b)(x) == pytest.approx(a(x) - 2 * b(x))
    assert (a / 4)(x) == pytest.approx(a(x) / 4)
    assert (3 * a).is_scalar_multiple_of(a)
    assert not a.is_scalar_multiple_of(b)


def test_pickle_roundtrip():
    p = MeromorphicPotential.maryland()
    q = pickle.loads(pickle.dumps(p))
    assert q.f == p.f and q.g == p.g
    k = ToeplitzKernel.exponential(1.0)
    assert np.array_equal(pickle.loads(pickle.dumps(k)).matrix(np.arange(5)), k.matrix(np.arange(5)))


def test_maryland_zero_is_double():
    zs = zeros_on_torus(MeromorphicPotential.maryland().f)
    assert len(zs) == 1
    assert zs[0].x == pytest.approx(0.5, abs=1e-7)
    assert zs[0].multiplicity == 2


def test_simple_zeros():
    zs = zeros_on_torus(TrigPolynomial.cos())
    assert [z.multiplicity for z in zs] == [1, 1]
    np.testing.assert_allclose([z.x for z in zs], [0.25, 0.75], atol=1e-12)


@given(polys)
@settings(max_examples=50, deadline=None)
def test_zeros_are_zeros(c):
    h = TrigPolynomial(c)
    if h.is_zero():
        return
    for z in zeros_on_torus(h):
        scale = sum(abs(v) for v in h.coeffs.values())
        assert abs(h(z.x)) < 1e-6 * scale


def test_sup_norm_is_upper_bound():
    h = TrigPolynomial({0: 0.3, 1: 1 - 0.5j, 3: 0.2})
    r = 0.1
    xs = np.linspace(0, 1, 20001)
    true = max(np.abs(h.evaluate(xs + 1j * r)).max(), np.abs(h.evaluate(xs - 1j * r)).max())
    s = sup_norm_annulus(h, r)
    assert true <= s <= true * 1.05
    with pytest.raises(ValueError):
        sup_norm_annulus(h, r, grid=100)


def test_maryland_potential():
    p = MeromorphicPotential.maryland()
    assert p(0.1) == pytest.approx(math.tan(0.1 * math.pi))
    assert eval_potential(p, 0.3) == pytest.approx(math.tan(0.3 * math.pi))
    with pytest.raises(PoleProximity):
        eval_potential(p, 0.5)
    assert p.linear(2.0)(0.2) == pytest.approx(p.g(0.2) - 2.0 * p.f(0.2))


def test_constant_potential_rejected():
    with pytest.raises(ValueError):
        MeromorphicPotential(2 * TrigPolynomial.cos(), TrigPolynomial.cos())


def test_kernel_validation():
    with pytest.raises(ValueError, match="kernel decay violated at n=3"):
        ToeplitzKernel({3: 1.0}, 1.0)
    with pytest.raises(ValueError, match="phi_hat"):
        ToeplitzKernel({0: 0.1}, 1.0)
    k = ToeplitzKernel.exponential(1.0)
    assert k.is_real_even
    assert k(0) == 0 and k(2) == pytest.approx(0.5 * math.exp(-2))
    assert k(-2) == k(2)


@given(st.floats(0.2, 3), st.integers(0, 30))
def test_kernel_tail_bound(rho, m):
    k = ToeplitzKernel.exponential(rho, 0.9)
    n = np.arange(m + 1, k.cutoff + 1)
    actual = 2 * np.abs(k(n)).sum()
    assert actual <= kernel_tail_bound(k, m) + 1e-300


@pytest.mark.parametrize("E", [0.0, 0.7, -3.0, 1e4])
def test_log_integral_matches_jensen(E):
    h = MeromorphicPotential.maryland().linear(E)
    ref = jensen_log_integral(h.coeffs)
    assert log_abs_integral(h) == pytest.approx(ref, abs=5e-4 * (1 + abs(ref)))


@given(polys)
@settings(max_examples=30, deadline=None)
def test_log_integral_random(c):
    h = TrigPolynomial(c)
    if h.is_zero() or h.is_constant():
        return
    ref = jensen_log_integral(h.coeffs)
    assert log_abs_integral(h, grid=2048) == pytest.approx(ref, abs=5e-3)
