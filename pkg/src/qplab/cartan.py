"""Cartan-type lower bounds for analytic and meromorphic functions on a disk.

The exclusion disks have equal radii: one of radius ``H`` around each zero and
one of radius ``Hp`` around the reflection ``R**2 / conj(b)`` of each pole.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, NamedTuple

import numpy as np

from .errors import BadRadii, NormalizationError, PoleTooClose

# grid points closer than this to a disk boundary are not checked
BOUNDARY_SKIP = 1e-6


def analytic_lower_bound(logM: float, R: float, r: float) -> float:
    """``-(2r/(R-r)) log M`` for a zero-free ``f`` with ``|f(0)| = 1``, valid on ``|z| = r``."""
    if not 0.0 <= r < R:
        raise BadRadii(f"need 0 <= r < R, got r={r}, R={R}")
    if logM < 0:
        raise ValueError("log M_f(R) must be >= 0 when |f(0)| = 1 and f is analytic")
    return -2.0 * r * logM / (R - r)


@dataclass(frozen=True)
class CartanInput:
    zeros: tuple = ()
    poles: tuple = ()
    R: float = 1.0
    R2: float = 0.5
    H: float = 0.1
    Hp: float = 0.1
    delta: float = 0.1
    logM: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "zeros", tuple(complex(a) for a in self.zeros))
        object.__setattr__(self, "poles", tuple(complex(b) for b in self.poles))

    def validate(self):
        if not 0.0 < self.R2 < self.R <= 1.0:
            raise BadRadii(f"need 0 < R2 < R <= 1, got R2={self.R2}, R={self.R}")
        if not (0.0 < self.H < 1.0 and 0.0 < self.Hp < 1.0):
            raise BadRadii("H and Hp must lie in (0, 1)")
        if self.delta <= 0:
            raise BadRadii("delta must be > 0")
        for a in self.zeros:
            if abs(a) >= self.R:
                raise BadRadii(f"zero {a} lies outside |z| < R")
        for b in self.poles:
            if abs(b) >= self.R:
                raise BadRadii(f"pole {b} lies outside |z| < R")
            if abs(b) < self.delta:
                raise PoleTooClose(f"pole {b} has modulus below delta={self.delta}")


@dataclass(frozen=True)
class DiskSystem:
    zero_disks: tuple = ()  # (center, radius)
    pole_disks: tuple = ()

    @property
    def disks(self):
        return self.zero_disks + self.pole_disks

    def contains(self, z, margin: float = 0.0) -> np.ndarray:
        """Mask of points inside some disk enlarged by ``margin``."""
        z = np.asarray(z, dtype=complex)
        mask = np.zeros(z.shape, dtype=bool)
        for c, r in self.disks:
            mask |= np.abs(z - c) < r + margin
        return mask

    def near_boundary(self, z, tol: float = BOUNDARY_SKIP) -> np.ndarray:
        z = np.asarray(z, dtype=complex)
        mask = np.zeros(z.shape, dtype=bool)
        for c, r in self.disks:
            mask |= np.abs(np.abs(z - c) - r) < tol
        return mask


def meromorphic_lower_bound(inp: CartanInput) -> tuple[float, DiskSystem]:
    """Lower bound for ``log|f|`` on ``|z| <= R2`` outside the returned disks."""
    inp.validate()
    R, R2 = inp.R, inp.R2
    n, n_p = len(inp.zeros), len(inp.poles)
    bound = -2.0 * R2 / (R - R2) * inp.logM
    bound -= n * math.log((R + R2) / inp.H)
    bound -= n_p * (2.0 * R / (R - R2) * math.log(1.0 / inp.delta) + math.log(R * (R + R2) / inp.Hp))
    disks = DiskSystem(
        tuple((a, inp.H) for a in inp.zeros),
        tuple((R * R / b.conjugate(), inp.Hp) for b in inp.poles),
    )
    return bound, disks


def disk_area_in_circle(center: complex, radius: float, R2: float) -> float:
    """Area of the intersection of a disk with ``{|z| <= R2}``."""
    d = abs(center)
    r = radius
    if d >= r + R2:
        return 0.0
    if d <= abs(R2 - r):
        return math.pi * min(r, R2) ** 2
    a1 = r * r * math.acos((d * d + r * r - R2 * R2) / (2 * d * r))
    a2 = R2 * R2 * math.acos((d * d + R2 * R2 - r * r) / (2 * d * R2))
    a3 = 0.5 * math.sqrt((-d + r + R2) * (d + r - R2) * (d - r + R2) * (d + r + R2))
    return a1 + a2 - a3


def excluded_area(disks: DiskSystem, R2: float) -> float:
    """Sum over disks of their area inside ``|z| <= R2`` (overlaps counted twice)."""
    return sum(disk_area_in_circle(c, r, R2) for c, r in disks.disks)


# ---------------------------------------------------------------------------
# test functions with known zeros and poles


def _blaschke(z, a, R):
    return R * (z - a) / (R * R - np.conj(a) * z)


@dataclass(frozen=True)
class BlaschkeQuotient:
    """``exp(c z) * prod B_a(z) / prod B_b(z)`` normalized to ``|f(0)| = 1``.

    ``B_a(z) = R (z - a) / (R**2 - conj(a) z)`` has modulus one on ``|z| = R``,
    so ``log M_f(R)`` is known in closed form.
    """

    zeros: tuple
    poles: tuple
    R: float
    c: complex = 0j
    _norm: complex = field(init=False, repr=False, default=1.0)

    def __post_init__(self):
        norm = 1.0 + 0j
        for a in self.zeros:
            norm *= _blaschke(0.0, a, self.R)
        for b in self.poles:
            norm /= _blaschke(0.0, b, self.R)
        object.__setattr__(self, "_norm", norm)

    def __call__(self, z):
        z = np.asarray(z, dtype=complex)
        out = np.exp(self.c * z) / self._norm
        for a in self.zeros:
            out = out * _blaschke(z, a, self.R)
        for b in self.poles:
            out = out / _blaschke(z, b, self.R)
        return out

    @property
    def logM(self) -> float:
        """``log max_{|z|=R} |f(z)|`` in closed form."""
        return abs(self.c) * self.R - math.log(abs(self._norm))


def random_blaschke_quotient(rng: np.random.Generator, R=1.0, R2=0.5, n_zeros=None, n_poles=None,
                             delta=0.2, H=0.05, Hp=0.05, c_max=1.0, r_min=0.05):
    """Draw a :class:`BlaschkeQuotient` and the matching :class:`CartanInput`.

    Zeros are uniform in ``r_min <= |a| < 0.95 R``; poles uniform in the
    annulus ``delta <= |b| < 0.95 R``.
    """
    if n_zeros is None:
        n_zeros = int(rng.integers(0, 4))
    if n_poles is None:
        n_poles = int(rng.integers(0, 4))

    def annulus(k, lo, hi):
        rad = np.sqrt(rng.uniform(lo * lo, hi * hi, size=k))
        ang = rng.uniform(0, 2 * math.pi, size=k)
        return tuple(complex(z) for z in rad * np.exp(1j * ang))

    zeros = annulus(n_zeros, r_min, 0.95 * R)
    poles = annulus(n_poles, delta, 0.95 * R)
    c = complex(*rng.uniform(-c_max, c_max, size=2)) / math.sqrt(2.0)
    fn = BlaschkeQuotient(zeros, poles, R, c)
    inp = CartanInput(zeros, poles, R=R, R2=R2, H=H, Hp=Hp, delta=delta, logM=fn.logM)
    return fn, inp


class CartanReport(NamedTuple):
    bound: float
    checked: int
    skipped: int
    violations: int
    worst_margin: float  # min over checked points of log|f| - bound


def verify_cartan(fn: Callable, inp: CartanInput, grid: int = 400) -> CartanReport:
    """Check ``log|fn| >= bound`` on a ``grid x grid`` sample of ``|z| <= R2`` outside the disks."""
    f0 = complex(np.asarray(fn(np.array([0j])))[0])
    if abs(abs(f0) - 1.0) > 1e-6:
        raise NormalizationError(f"|fn(0)| = {abs(f0):.9f}, expected 1")
    bound, disks = meromorphic_lower_bound(inp)
    t = np.linspace(-inp.R2, inp.R2, grid)
    z = (t[:, None] + 1j * t[None, :]).ravel()
    z = z[np.abs(z) <= inp.R2]
    skip = disks.contains(z) | disks.near_boundary(z)
    pts = z[~skip]
    with np.errstate(divide="ignore"):
        logf = np.log(np.abs(fn(pts)))
    margin = logf - bound
    worst = float(margin.min()) if margin.size else math.inf
    return CartanReport(bound, int(pts.size), int(skip.sum()), int((margin < 0).sum()), worst)
