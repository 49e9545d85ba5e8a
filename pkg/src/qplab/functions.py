"""Trigonometric polynomials on the torus, the potential v = g/f and the hopping kernel."""

from __future__ import annotations

import math
from typing import Mapping, NamedTuple

import numpy as np

from .errors import OutOfAnnulus, PoleProximity

TWO_PI = 2.0 * math.pi

DEFAULT_F_MIN = 1e-8


def _complete_hermitian(coeffs: Mapping[int, complex]) -> dict[int, complex]:
    out = {int(n): complex(c) for n, c in coeffs.items()}
    for n, c in list(out.items()):
        if -n not in out:
            out[-n] = c.conjugate()
    return out


class TrigPolynomial:
    """Finite Fourier series ``h(z) = sum_n c_n exp(2 pi i n z)`` with ``c_{-n} = conj(c_n)``.

    ``radius`` is the declared half-width of the strip ``|Im z| <= radius`` on
    which :meth:`evaluate` accepts complex arguments. Missing negative modes
    are filled in by conjugation, so ``{1: 0.5}`` already means ``cos(2 pi x)``.
    """

    __slots__ = ("_coeffs", "degree", "radius", "_n", "_c")

    def __init__(self, coeffs: Mapping[int, complex], radius: float = 1.0):
        full = _complete_hermitian(coeffs)
        scale = sum(abs(c) for c in full.values())
        for n, c in full.items():
            if abs(full[-n] - c.conjugate()) > 1e-12 * max(scale, 1.0):
                raise ValueError(f"coefficients are not Hermitian at n={n}")
        full = {n: c for n, c in full.items() if c != 0}
        # force exact symmetry so real evaluation is exactly real
        for n in [n for n in full if n > 0]:
            full[-n] = full[n].conjugate()
        if 0 in full:
            full[0] = complex(full[0].real, 0.0)
        self._coeffs = dict(sorted(full.items()))
        self.degree = max((abs(n) for n in self._coeffs), default=0)
        self.radius = float(radius)
        d = self.degree
        self._n = np.arange(-d, d + 1)
        self._c = np.array([self._coeffs.get(int(n), 0j) for n in self._n], dtype=complex)

    # construction helpers

    @classmethod
    def constant(cls, c: float, radius: float = 1.0):
        return cls({0: c}, radius)

    @classmethod
    def cos(cls, k: int = 1, amplitude: float = 1.0, radius: float = 1.0):
        return cls({k: amplitude / 2.0}, radius)

    @classmethod
    def sin(cls, k: int = 1, amplitude: float = 1.0, radius: float = 1.0):
        return cls({k: -0.5j * amplitude}, radius)

    @classmethod
    def from_triples(cls, triples, radius: float = 1.0):
        """Build from ``(n, re, im)`` triples as they appear in config files."""
        coeffs = {}
        for t in triples:
            n, re, im = t
            if int(n) != n:
                raise ValueError(f"mode index must be an integer, got {n!r}")
            coeffs[int(n)] = complex(re, im)
        return cls(coeffs, radius)

    # introspection

    @property
    def coeffs(self) -> dict[int, complex]:
        return dict(self._coeffs)

    @property
    def mean(self) -> float:
        return self._coeffs.get(0, 0j).real

    @property
    def l1_norm(self) -> float:
        return float(np.abs(self._c).sum())

    def is_zero(self) -> bool:
        return not self._coeffs

    def is_constant(self) -> bool:
        return all(n == 0 for n in self._coeffs)

    def triples(self):
        return [(n, c.real, c.imag) for n, c in self._coeffs.items()]

    def is_scalar_multiple_of(self, other: "TrigPolynomial", tol: float = 1e-12) -> bool:
        if other.is_zero():
            return self.is_zero()
        d = max(self.degree, other.degree)
        a = np.array([self._coeffs.get(n, 0j) for n in range(-d, d + 1)])
        b = np.array([other._coeffs.get(n, 0j) for n in range(-d, d + 1)])
        lam = np.vdot(b, a) / np.vdot(b, b)
        return float(np.abs(a - lam * b).max()) <= tol * max(np.abs(a).max(), 1e-300)

    # arithmetic

    def _combine(self, other, sign):
        if not isinstance(other, TrigPolynomial):
            other = TrigPolynomial.constant(float(other), self.radius)
        out = dict(self._coeffs)
        for n, c in other._coeffs.items():
            out[n] = out.get(n, 0j) + sign * c
        return TrigPolynomial(out, min(self.radius, other.radius))

    def __add__(self, other):
        return self._combine(other, 1.0)

    __radd__ = __add__

    def __sub__(self, other):
        return self._combine(other, -1.0)

    def __rsub__(self, other):
        return (-self)._combine(other, 1.0)

    def __neg__(self):
        return self * -1.0

    def __mul__(self, scalar):
        s = float(scalar)
        return TrigPolynomial({n: s * c for n, c in self._coeffs.items()}, self.radius)

    __rmul__ = __mul__

    def __truediv__(self, scalar):
        return self * (1.0 / float(scalar))

    def __eq__(self, other):
        return (
            isinstance(other, TrigPolynomial)
            and self._coeffs == other._coeffs
            and self.radius == other.radius
        )

    def __hash__(self):
        return hash((tuple(self._coeffs.items()), self.radius))

    def __repr__(self):
        return f"TrigPolynomial({self._coeffs!r}, radius={self.radius})"

    def __getstate__(self):
        return {"coeffs": self._coeffs, "radius": self.radius}

    def __setstate__(self, state):
        self.__init__(state["coeffs"], state["radius"])

    def derivative(self) -> "TrigPolynomial":
        return TrigPolynomial(
            {n: TWO_PI * 1j * n * c for n, c in self._coeffs.items() if n}, self.radius
        )

    # evaluation

    def evaluate(self, z):
        """Complex value at ``z`` (scalar or array) inside the declared strip."""
        z = np.asarray(z, dtype=complex)
        if np.any(np.abs(z.imag) > self.radius):
            raise OutOfAnnulus(f"|Im z| exceeds the analyticity radius {self.radius}")
        flat = z.reshape(-1)
        out = np.exp(TWO_PI * 1j * np.outer(flat, self._n)) @ self._c
        out = out.reshape(z.shape)
        return complex(out) if out.ndim == 0 else out

    def __call__(self, x):
        """Real value on the real torus."""
        x = np.asarray(x, dtype=float)
        flat = x.reshape(-1)
        d = self.degree
        out = np.full(flat.shape, self._c[d].real)
        if d:
            pos = self._c[d + 1 :]
            phase = np.exp(TWO_PI * 1j * np.outer(flat, np.arange(1, d + 1)))
            out = out + 2.0 * (phase @ pos).real
        out = out.reshape(x.shape)
        return float(out) if out.ndim == 0 else out


def eval(h: TrigPolynomial, z):  # noqa: A001 - mirrors the operation name
    """Evaluate ``h`` at a complex point of its analyticity strip."""
    return h.evaluate(z)


class RealZero(NamedTuple):
    x: float
    multiplicity: int


def _bisect_sign(f, a, b, fa, max_iter=200):
    for _ in range(max_iter):
        m = 0.5 * (a + b)
        if m <= a or m >= b:
            break
        fm = f(m)
        if fm == 0.0:
            return m
        if (fm < 0) == (fa < 0):
            a, fa = m, fm
        else:
            b = m
    return a if abs(f(a)) <= abs(f(b)) else b


def _minimize_abs(f, a, b, max_iter=200):
    """Golden-section search for the minimum of ``|f|`` on ``[a, b]``."""
    invphi = (math.sqrt(5.0) - 1.0) / 2.0
    c = b - invphi * (b - a)
    d = a + invphi * (b - a)
    fc, fd = abs(f(c)), abs(f(d))
    for _ in range(max_iter):
        if b - a < 1e-15:
            break
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - invphi * (b - a)
            fc = abs(f(c))
        else:
            a, c, fc = c, d, fd
            d = a + invphi * (b - a)
            fd = abs(f(d))
    return c if fc < fd else d


def zeros_on_torus(f: TrigPolynomial, tol: float = 1e-8) -> list[RealZero]:
    """Real zeros of ``f`` on ``[0, 1)`` with a multiplicity flag (1 = sign change, 2 = touch).

    A uniform scan at ``10*degree + 64`` samples finds sign changes, refined by
    bisection, and local minima of ``|f|``, refined by golden-section search on
    ``|f|``; a minimum is reported when ``|f| < tol`` there.
    """
    if f.is_zero():
        raise ValueError("f is identically zero")
    fs = lambda t: f(t)  # noqa: E731
    n0 = 10 * f.degree + 64
    h = 1.0 / n0
    xs = np.arange(n0) * h
    vals = f(xs)
    found: list[RealZero] = []

    def add(x, mult):
        x = x % 1.0
        for z in found:
            if abs((x - z.x + 0.5) % 1.0 - 0.5) < 1e-9:
                return
        found.append(RealZero(float(x), mult))

    for i in range(n0):
        a, fa = xs[i], vals[i]
        b, fb = a + h, vals[(i + 1) % n0]
        fprev = vals[i - 1]
        if fa == 0.0:
            add(a, 1 if fprev * fb < 0 else 2)
            continue
        if fb != 0.0 and (fa < 0) != (fb < 0):
            add(_bisect_sign(fs, a, b, fa), 1)
            continue
        # interior local minimum of |f| without a sign change in the adjacent cells
        if abs(fa) < abs(fprev) and abs(fa) <= abs(fb) and (fprev < 0) == (fa < 0):
            xm = _minimize_abs(fs, a - h, b)
            fm = f(xm)
            if fm != 0.0 and (fm < 0) != (fa < 0):
                # dipped through zero between samples: two simple zeros
                add(_bisect_sign(fs, a - h, xm, fprev), 1)
                add(_bisect_sign(fs, xm, b, fm), 1)
            elif abs(fm) < tol:
                add(xm, 2)
    return sorted(found, key=lambda z: z.x)


def sup_norm_annulus(h: TrigPolynomial, r: float, grid: int = 1024) -> float:
    """Upper estimate of ``max |h(x +- i r)|`` from a uniform grid with a Bernstein allowance."""
    if grid < 256:
        raise ValueError("grid must be >= 256")
    xs = np.arange(grid) / grid
    top = np.abs(h.evaluate(xs + 1j * r)).max()
    bottom = np.abs(h.evaluate(xs - 1j * r)).max()
    return float(max(top, bottom) * (1.0 + TWO_PI * h.degree / grid))


class MeromorphicPotential:
    """The singular potential ``v = g/f`` with the real zeros of ``f`` precomputed."""

    __slots__ = ("g", "f", "f_zeros", "f_zero_multiplicity", "g_sup", "f_sup")

    def __init__(self, g: TrigPolynomial, f: TrigPolynomial, normalize: bool = False):
        if f.is_zero():
            raise ValueError("f must not be identically zero")
        if g.is_scalar_multiple_of(f):
            raise ValueError("v = g/f is constant")
        if normalize:
            s = sup_norm_annulus(f, 0.0, 4096)
            g, f = g / s, f / s
        self.g = g
        self.f = f
        zeros = zeros_on_torus(f, 1e-10)
        self.f_zeros = tuple(z.x for z in zeros)
        self.f_zero_multiplicity = tuple(z.multiplicity for z in zeros)
        self.g_sup = sup_norm_annulus(g, 0.0, 4096)
        self.f_sup = sup_norm_annulus(f, 0.0, 4096)

    @classmethod
    def maryland(cls):
        """``tan(pi x) = sin(2 pi x) / (1 + cos(2 pi x))``."""
        return cls(TrigPolynomial.sin(), TrigPolynomial({0: 1.0, 1: 0.5}))

    def __call__(self, x):
        return self.g(x) / self.f(x)

    def linear(self, E: float) -> TrigPolynomial:
        """``g - E f``."""
        return self.g - self.f * E

    def __repr__(self):
        return f"MeromorphicPotential(g={self.g!r}, f={self.f!r})"

    def __getstate__(self):
        return {"g": self.g, "f": self.f}

    def __setstate__(self, state):
        self.__init__(state["g"], state["f"])


def eval_potential(p: MeromorphicPotential, x: float, f_min: float = DEFAULT_F_MIN) -> float:
    """``g(x)/f(x)``, refusing points where ``|f(x)| < f_min``."""
    if f_min <= 0:
        raise ValueError("f_min must be > 0")
    fx = p.f(x)
    if abs(fx) < f_min:
        raise PoleProximity(float(x), abs(fx))
    return float(p.g(x) / fx)


class ToeplitzKernel:
    """Hopping coefficients ``phi_hat(n)`` with ``|phi_hat(n)| < exp(-rho |n|)`` and ``phi_hat(0) = 0``."""

    __slots__ = ("coeffs", "rho", "cutoff", "_table")

    def __init__(self, coeffs: Mapping[int, complex], rho: float, cutoff: int | None = None):
        if rho <= 0:
            raise ValueError("rho must be > 0")
        full = _complete_hermitian(coeffs)
        for n, c in full.items():
            if abs(full[-n] - c.conjugate()) > 1e-15 * max(abs(c), 1.0):
                raise ValueError(f"kernel coefficients are not Hermitian at n={n}")
        if full.get(0, 0) != 0:
            raise ValueError("kernel must satisfy phi_hat(0) = 0")
        full.pop(0, None)
        for n in sorted(full, key=lambda n: (abs(n), n < 0)):
            if not abs(full[n]) < math.exp(-rho * abs(n)):
                raise ValueError(f"kernel decay violated at n={n}")
        if cutoff is None:
            cutoff = max((abs(n) for n in full), default=0)
        full = {n: c for n, c in full.items() if abs(n) <= cutoff}
        self.coeffs = dict(sorted(full.items()))
        self.rho = float(rho)
        self.cutoff = int(cutoff)
        table = np.zeros(2 * self.cutoff + 1, dtype=complex)
        for n, c in self.coeffs.items():
            table[n + self.cutoff] = c
        if not np.any(table.imag):
            table = table.real.copy()
        self._table = table

    @classmethod
    def exponential(cls, rho: float, amplitude: float = 0.5, cutoff: int | None = None):
        """``phi_hat(n) = amplitude * exp(-rho |n|)`` for ``0 < |n| <= cutoff``."""
        if not 0.0 < amplitude < 1.0:
            raise ValueError("amplitude must lie in (0, 1)")
        if cutoff is None:
            cutoff = max(1, math.ceil(37.0 / rho))  # exp(-37) is below double resolution
        return cls({n: amplitude * math.exp(-rho * n) for n in range(1, cutoff + 1)}, rho, cutoff)

    @classmethod
    def from_triples(cls, triples, rho: float, cutoff: int | None = None):
        coeffs = {}
        for n, re, im in triples:
            coeffs[int(n)] = complex(re, im)
        return cls(coeffs, rho, cutoff)

    @property
    def is_real_even(self) -> bool:
        return self._table.dtype != complex

    @property
    def l1_norm(self) -> float:
        return float(np.abs(self._table).sum())

    def __call__(self, n):
        n = np.asarray(n)
        inside = np.abs(n) <= self.cutoff
        idx = np.clip(n + self.cutoff, 0, 2 * self.cutoff)
        return np.where(inside, self._table[idx], 0.0)

    def matrix(self, rows, cols=None) -> np.ndarray:
        """``S[i, j] = phi_hat(rows[i] - cols[j])``."""
        rows = np.asarray(rows)
        cols = rows if cols is None else np.asarray(cols)
        return self(rows[:, None] - cols[None, :])

    def __repr__(self):
        return f"ToeplitzKernel(rho={self.rho}, cutoff={self.cutoff}, {len(self.coeffs)} modes)"

    def __getstate__(self):
        return {"coeffs": self.coeffs, "rho": self.rho, "cutoff": self.cutoff}

    def __setstate__(self, state):
        self.__init__(state["coeffs"], state["rho"], state["cutoff"])


def kernel_tail_bound(k: ToeplitzKernel, m: int) -> float:
    """``sum_{|n| > m} exp(-rho |n|)``, a ceiling on hopping mass beyond range ``m``."""
    if m < 0:
        raise ValueError("m must be >= 0")
    q = math.exp(-k.rho)
    return 2.0 * math.exp(-k.rho * (m + 1)) / (1.0 - q)


_GAUSS2 = np.array([-1.0, 1.0]) / math.sqrt(3.0)


def log_abs_integral(h: TrigPolynomial, grid: int = 1024, refine_levels: int = 3,
                     refine_radius: float = 2.0**-6) -> float:
    """``int_0^1 log|h(x)| dx`` by the midpoint rule, refined near the real zeros of ``h``.

    Cells whose centers lie within ``refine_radius`` of a zero are split
    ``2**refine_levels`` times and integrated with two-point Gauss nodes, which
    never land on the cell center.
    """
    if h.is_zero():
        return -math.inf
    if h.is_constant():
        return math.log(abs(h.mean))
    zeros = np.array([z.x for z in zeros_on_torus(h)])
    w = 1.0 / grid
    centers = (np.arange(grid) + 0.5) * w
    if zeros.size:
        dist = np.abs((centers[:, None] - zeros[None, :] + 0.5) % 1.0 - 0.5).min(axis=1)
        near = dist <= refine_radius
    else:
        near = np.zeros(grid, dtype=bool)
    with np.errstate(divide="ignore"):
        total = float(np.log(np.abs(h(centers[~near]))).sum()) * w
        if near.any():
            k = 2**refine_levels
            sub_w = w / k
            left = centers[near] - 0.5 * w
            sub_c = (left[:, None] + (np.arange(k)[None, :] + 0.5) * sub_w).ravel()
            nodes = (sub_c[:, None] + 0.5 * sub_w * _GAUSS2[None, :]).ravel()
            total += float(np.log(np.abs(h(nodes))).sum()) * 0.5 * sub_w
    return total
