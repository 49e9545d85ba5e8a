"""Circle arithmetic and Diophantine approximation.

Torus points are plain floats in ``[0, 1)``. Orbits ``x0 + n*omega`` are
formed with an error-free product so that every point is accurate to a few
ulps no matter how large ``n`` is.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import NamedTuple

import numpy as np

from .errors import LengthMismatch, RationalInput

GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0

# a convergent closer than this to omega means omega is rational in double precision
RATIONAL_TOL = 1e-14

_SPLITTER = 134217729.0  # 2**27 + 1


def wrap(x):
    """Reduce ``x`` (scalar or array) to ``[0, 1)``."""
    y = np.mod(x, 1.0)
    # np.mod returns 1.0 for tiny negative inputs
    y = np.where(y >= 1.0, 0.0, y)
    if np.ndim(y) == 0:
        return float(y)
    return y


def torus_dist(x):
    """Distance from ``x`` to the nearest integer, ``||x||``."""
    d = np.abs(np.asarray(x, dtype=float) - np.round(x))
    if np.ndim(d) == 0:
        return float(d)
    return d


@dataclass(frozen=True)
class Frequency:
    """Rotation number together with its Diophantine constants ``a`` and ``A``."""

    omega: float
    dc_a: float = 0.1
    dc_A: float = 2.0

    def __post_init__(self):
        if not 0.0 < self.omega < 1.0:
            raise ValueError(f"omega must lie in (0, 1), got {self.omega}")
        if self.dc_a <= 0.0:
            raise ValueError("Diophantine constant a must be > 0")
        if self.dc_A < 1.0:
            raise ValueError("Diophantine exponent A must be >= 1")


class Convergent(NamedTuple):
    p: int
    q: int
    err: float


@dataclass(frozen=True)
class ConvergentList:
    entries: tuple = ()
    partial_quotients: tuple = field(default=())

    def __iter__(self):
        return iter(self.entries)

    def __len__(self):
        return len(self.entries)

    def __getitem__(self, i):
        return self.entries[i]

    @property
    def denominators(self):
        return [c.q for c in self.entries]


def continued_fraction(omega: float, depth: int) -> ConvergentList:
    """First ``depth`` convergents ``p_k/q_k`` (k >= 1) of ``omega`` in (0, 1).

    The expansion runs on the exact rational value of the double, so the only
    source of error is the input itself. Raises :class:`RationalInput` once a
    convergent matches ``omega`` to within ``RATIONAL_TOL``.
    """
    if not 0.0 < omega < 1.0:
        raise ValueError(f"omega must lie in (0, 1), got {omega}")
    if depth < 1:
        raise ValueError("depth must be >= 1")

    x = Fraction(omega)
    rem = x  # a_0 = 0
    p_prev, q_prev = 1, 0
    p, q = 0, 1
    entries, quotients = [], []
    for _ in range(depth):
        if rem == 0:
            raise RationalInput(f"expansion of {omega!r} terminates after {len(entries)} terms")
        t = 1 / rem
        a = math.floor(t)
        rem = t - a
        p, p_prev = a * p + p_prev, p
        q, q_prev = a * q + q_prev, q
        err = float(abs(x - Fraction(p, q)))
        if err < RATIONAL_TOL:
            raise RationalInput(
                f"{omega!r} is rational at working precision (|omega - {p}/{q}| = {err:.1e})"
            )
        entries.append(Convergent(p, q, err))
        quotients.append(a)
    return ConvergentList(tuple(entries), tuple(quotients))


class DiophantineReport(NamedTuple):
    passed: bool
    k: int | None  # smallest violating k, None on pass
    ratio: float | None  # ||k omega|| k^A / a at that k
    worst_k: int
    worst_ratio: float


def diophantine_check(freq: Frequency, K: int) -> DiophantineReport:
    """Check ``||k omega|| > a k^-A`` for ``0 < k <= K``.

    Only positive ``k`` are scanned since ``||-k omega|| = ||k omega||``.
    The worst ratio is reported on pass too so ``a`` can be tuned.
    """
    if K < 1:
        raise ValueError("K must be >= 1")
    k = np.arange(1, K + 1, dtype=float)
    ratio = torus_dist(orbit_points(0.0, freq.omega, k)) * k**freq.dc_A / freq.dc_a
    worst = int(np.argmin(ratio))
    bad = np.flatnonzero(ratio <= 1.0)
    if bad.size:
        i = int(bad[0])
        return DiophantineReport(False, i + 1, float(ratio[i]), worst + 1, float(ratio[worst]))
    return DiophantineReport(True, None, None, worst + 1, float(ratio[worst]))


def _two_product(a, b):
    """Dekker's error-free product: returns ``(p, e)`` with ``a*b == p + e`` exactly."""
    p = a * b
    t = _SPLITTER * a
    ah = t - (t - a)
    al = a - ah
    t = _SPLITTER * b
    bh = t - (t - b)
    bl = b - bh
    e = ((ah * bh - p) + ah * bl + al * bh) + al * bl
    return p, e


def orbit_points(x0: float, omega: float, n) -> np.ndarray:
    """``x0 + n*omega mod 1`` for an integer array ``n``, without drift."""
    n = np.asarray(n, dtype=float)
    p, e = _two_product(n, np.full_like(n, omega))
    frac = p - np.floor(p)
    return wrap((x0 + frac) + e)


def orbit(x0: float, omega, n_lo: int, n_hi: int) -> np.ndarray:
    """Orbit segment ``x0 + n*omega mod 1`` for ``n_lo <= n <= n_hi``."""
    if n_lo > n_hi:
        raise ValueError("n_lo must not exceed n_hi")
    if isinstance(omega, Frequency):
        omega = omega.omega
    return orbit_points(float(x0), float(omega), np.arange(n_lo, n_hi + 1))


def fejer_weights(M: int) -> np.ndarray:
    """Weights ``(M - |m|)/M**2`` for ``m = -(M-1), ..., M-1``; they sum to 1."""
    if M < 1:
        raise ValueError("M must be >= 1")
    m = np.arange(-(M - 1), M)
    return (M - np.abs(m)) / float(M * M)


def weighted_average(u_values, M: int) -> float:
    """Fejer-weighted average of ``u(x + m omega)`` over ``|m| < M``."""
    u = np.asarray(u_values, dtype=float)
    if u.ndim != 1 or u.size != 2 * M - 1:
        raise LengthMismatch(f"expected {2 * M - 1} values for M={M}, got {u.size}")
    return float(fejer_weights(M) @ u)
