import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import kernel_fn, maryland_spec, random_spec, safe_phase
from oracles import cofactor_det, dense_operator, direct_green, minor_ratio
from qplab.errors import AllSingular, InsufficientData, PoleProximity, SingularWindow
from qplab.functions import MeromorphicPotential, ToeplitzKernel, TrigPolynomial
from qplab.spectral import (IndexWindow, OperatorSpec, avg_logdet_check, batch_logdet_B, build_window,
                            cramer_check, decay_fit, entry_bounds, factor_B, factorize, good_shift, green,
                            hadamard_ceiling, hadamard_ok, logdet, path_ceiling, shift_range)
from qplab.torus import GOLDEN, Frequency, orbit_points

seeds = st.integers(0, 2**32 - 1)
energies = st.sampled_from([0.0, 1.0, -1.0, 1e3, -1e3, 1e8, -1e8, 0.37])


def test_window_helpers():
    w = IndexWindow.of_size(5, 3)
    assert (w.lo, w.hi, w.size) == (3, 7, 5)
    assert 7 in w and 8 not in w
    assert IndexWindow.centered(2).indices.tolist() == [-2, -1, 0, 1, 2]
    with pytest.raises(ValueError):
        IndexWindow(3, 2)


def test_operator_validation():
    with pytest.raises(ValueError):
        maryland_spec(eps=1.0)
    with pytest.raises(ValueError):
        maryland_spec(eps=-0.1)


@given(seeds, energies, st.integers(1, 24))
@settings(max_examples=60, deadline=None)
def test_build_window_matches_loops(seed, E, N):
    rng = np.random.default_rng(seed)
    spec, g, f, kern = random_spec(rng)
    idx = np.arange(N) - N // 2
    x = safe_phase(spec, rng, idx)
    A = build_window(spec, x, IndexWindow(idx[0], idx[-1]), E)
    ref = dense_operator(g, f, kernel_fn(kern), spec.eps, spec.omega, x, idx.tolist(), E)
    np.testing.assert_allclose(A, ref, rtol=1e-9, atol=1e-9 * (1 + abs(E)))


@given(seeds, energies)
@settings(max_examples=40, deadline=None)
def test_factorization_identity(seed, E):
    rng = np.random.default_rng(seed)
    spec, *_ = random_spec(rng)
    N = int(rng.integers(1, 65))
    w = IndexWindow.of_size(N)
    x = safe_phase(spec, rng, w.indices)
    pair = factorize(spec, x, w, E)
    H = build_window(spec, x, w, E)
    scale = max(1.0, abs(E), float(np.abs(H).max()))
    assert np.abs(pair.product() - H).max() <= 1e-10 * scale


@given(seeds, energies)
@settings(max_examples=40, deadline=None)
def test_bounded_entries(seed, E):
    rng = np.random.default_rng(seed)
    spec, *_ = random_spec(rng)
    N = int(rng.integers(1, 65))
    w = IndexWindow.of_size(N)
    x = safe_phase(spec, rng, w.indices)
    pair = factorize(spec, x, w, E)
    assert np.all(np.isfinite(pair.B))
    assert np.all(np.abs(pair.B) <= entry_bounds(spec, pair) * (1 + 1e-12))


def test_factor_B_on_a_pole():
    spec = maryland_spec()
    w = IndexWindow.of_size(4)
    B = factor_B(spec, 0.5, w, 1e8)
    assert np.all(np.isfinite(B))
    with pytest.raises(PoleProximity):
        factorize(spec, 0.5, w, 1e8)


@given(seeds, st.integers(1, 7))
@settings(max_examples=40, deadline=None)
def test_logdet_matches_cofactor_expansion(seed, N):
    rng = np.random.default_rng(seed)
    A = rng.normal(size=(N, N))
    ld = logdet(A)
    ref = cofactor_det(A)
    assert ld.logabs == pytest.approx(math.log(abs(ref)), abs=1e-9)
    assert ld.sign == np.sign(ref.real)


def test_logdet_complex_and_singular():
    A = np.array([[1j, 2.0], [0.5, 3.0 - 1j]])
    ld = logdet(A)
    ref = cofactor_det(A)
    assert ld.logabs == pytest.approx(math.log(abs(ref)))
    assert ld.sign == pytest.approx(ref / abs(ref))
    assert logdet(np.zeros((3, 3))).sign == 0
    assert logdet(np.zeros((0, 0))).logabs == 0.0


@given(seeds, energies)
@settings(max_examples=40, deadline=None)
def test_hadamard(seed, E):
    rng = np.random.default_rng(seed)
    spec, *_ = random_spec(rng)
    N = int(rng.integers(1, 65))
    B = factor_B(spec, float(rng.random()), IndexWindow.of_size(N), E)
    assert logdet(B).logabs <= hadamard_ceiling(B) + 1e-10 * (1 + abs(hadamard_ceiling(B)))
    assert hadamard_ok(B)


@given(seeds, energies)
@settings(max_examples=30, deadline=None)
def test_green_matches_direct_inverse(seed, E):
    rng = np.random.default_rng(seed)
    spec, g, f, kern = random_spec(rng)
    N = int(rng.integers(1, 9))
    w = IndexWindow.of_size(N, int(rng.integers(-5, 5)))
    x = safe_phase(spec, rng, w.indices)
    A = dense_operator(g, f, kernel_fn(kern), spec.eps, spec.omega, x, w.indices.tolist(), E)
    try:
        G = green(spec, x, w, E).G
    except SingularWindow:
        return
    ref = direct_green(A)
    assert np.abs(G - ref).max() <= 1e-8 * np.abs(ref).max()


def test_green_is_symmetric_for_real_even_kernels(maryland):
    G = green(maryland, 0.1, IndexWindow.of_size(40), 0.3).G
    np.testing.assert_allclose(G, G.T, atol=1e-12 * np.abs(G).max())


@given(seeds, energies)
@settings(max_examples=30, deadline=None)
def test_cramer_identity(seed, E):
    rng = np.random.default_rng(seed)
    spec, *_ = random_spec(rng)
    N = int(rng.integers(2, 9))
    w = IndexWindow.of_size(N)
    x = float(rng.random())
    n, n2 = (int(v) for v in rng.integers(0, N, size=2))
    try:
        assert cramer_check(spec, x, w, E, n, n2) < 1e-8
    except SingularWindow:
        return
    B = factor_B(spec, x, w, E)
    inv = abs(np.linalg.inv(B)[n, n2])
    assert inv == pytest.approx(minor_ratio(B, n, n2), rel=1e-8, abs=1e-300)


@given(seeds)
@settings(max_examples=20, deadline=None)
def test_path_ceiling_bounds_inverse(seed):
    rng = np.random.default_rng(seed)
    spec = maryland_spec(eps=float(rng.uniform(0, 0.3)))
    N = int(rng.integers(2, 30))
    w = IndexWindow.of_size(N)
    x, E = float(rng.random()), float(rng.normal() * 3)
    n, n2 = (int(v) for v in rng.integers(0, N, size=2))
    B = factor_B(spec, x, w, E)
    actual = math.log(abs(np.linalg.inv(B)[n, n2]) + 1e-300)
    assert actual <= path_ceiling(spec, x, w, E, n, n2) + 1e-9


@pytest.mark.parametrize("E", [0.0, 2.5, -40.0, 1e6])
def test_product_law_at_zero_coupling(E):
    spec = maryland_spec(eps=0.0)
    for N in (1, 17, 512):
        w = IndexWindow.of_size(N)
        x = 0.123
        y = orbit_points(x, spec.omega, w.indices)
        p = spec.potential
        expected = float(np.sum(np.log(np.abs(p.g(y) - E * p.f(y)) / math.sqrt(1 + E * E))))
        assert logdet(factor_B(spec, x, w, E)).logabs == pytest.approx(expected, abs=1e-10 * max(1, N))


def test_batch_logdet_agrees_with_single(maryland):
    xs = np.array([0.1, 0.2, 0.7])
    starts = np.array([0, -3, 5])
    got = batch_logdet_B(maryland, xs, starts, 16, 0.4)
    for x, s, v in zip(xs, starts, got):
        assert v == pytest.approx(logdet(factor_B(maryland, x, IndexWindow.of_size(16, s), 0.4)).logabs)


def test_decay_fit_recovers_rate():
    d = np.abs(np.subtract.outer(np.arange(60), np.arange(60)))
    fit = decay_fit(3.0 * np.exp(-0.7 * d))
    assert fit.c_eff == pytest.approx(0.7) and fit.r2 == pytest.approx(1.0)
    with pytest.raises(InsufficientData):
        decay_fit(np.eye(3))


def test_green_decays_for_maryland(maryland):
    r = green(maryland, 0.1, IndexWindow.of_size(64), 0.0)
    assert r.c_eff > 0.5 and r.r2 > 0.9 and r.hadamard_ok


def test_singular_window():
    spec = OperatorSpec(MeromorphicPotential(TrigPolynomial.cos(1, 2.0), TrigPolynomial.constant(1.0)),
                        ToeplitzKernel({}, 1.0), 0.0, Frequency(GOLDEN))
    E = spec.potential.g(0.3)
    with pytest.raises(SingularWindow):
        green(spec, 0.3, IndexWindow.of_size(4), E)
    with pytest.raises(AllSingular):
        good_shift(spec, 0.3, E, 1)


def test_good_shift_picks_largest_determinant(maryland):
    s = good_shift(maryland, 0.1, 0.0, 64)
    assert set(s.logdets) == set(shift_range(64))
    best = max(s.logdets.values())
    assert s.logdets[s.m] == best
    ties = [m for m, v in s.logdets.items() if v == best]
    assert s.m == min(ties, key=lambda m: (abs(m), m < 0))


@pytest.mark.parametrize("E", [0.0, 1.0, 1e4])
def test_average_logdet_matches_integral(E):
    rep = avg_logdet_check(maryland_spec(), E, 64)
    assert abs(rep.margin) < 0.01
