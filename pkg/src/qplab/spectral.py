"""Finite windows of ``H(x) = v(x + n omega) delta + eps S_phi`` and their Green's functions.

Every determinant and inverse goes through the factorization
``H - E = F B`` with ``F = diag(sqrt(1+E^2) / f(x + n omega))`` and

    B(n, n)  = (g - E f)(x + n omega) / sqrt(1 + E^2)
    B(n, n') = eps f(x + n omega) phi_hat(n - n') / sqrt(1 + E^2)

whose entries stay bounded for every real ``E`` and every phase, including
phases on top of a pole of ``v``. ``H - E`` itself is only formed for the
small direct-inverse oracles, behind the ``f_min`` guard.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np
import scipy.linalg as la

from .errors import AllSingular, InsufficientData, PoleProximity, SingularWindow
from .functions import DEFAULT_F_MIN, MeromorphicPotential, ToeplitzKernel, log_abs_integral
from .torus import Frequency, fejer_weights, orbit_points, wrap

PIVOT_FLOOR = 1e-300
BATCH = 2048  # matrices per batched LAPACK call; fixed so results never depend on worker count


@dataclass(frozen=True)
class OperatorSpec:
    potential: MeromorphicPotential
    kernel: ToeplitzKernel
    eps: float
    freq: Frequency
    f_min: float = DEFAULT_F_MIN

    def __post_init__(self):
        if not 0.0 <= self.eps < 1.0:
            raise ValueError(f"coupling eps must lie in [0, 1), got {self.eps}")
        if self.f_min <= 0:
            raise ValueError("f_min must be > 0")

    @property
    def omega(self) -> float:
        return self.freq.omega


@dataclass(frozen=True)
class IndexWindow:
    lo: int
    hi: int

    def __post_init__(self):
        if self.lo > self.hi:
            raise ValueError(f"empty window [{self.lo}, {self.hi}]")

    @classmethod
    def of_size(cls, N: int, start: int = 0):
        return cls(start, start + N - 1)

    @classmethod
    def centered(cls, N: int):
        """``[-N, N]``."""
        return cls(-N, N)

    @property
    def size(self) -> int:
        return self.hi - self.lo + 1

    @property
    def indices(self) -> np.ndarray:
        return np.arange(self.lo, self.hi + 1)

    def shift(self, m: int) -> "IndexWindow":
        return IndexWindow(self.lo + m, self.hi + m)

    def __contains__(self, k) -> bool:
        return self.lo <= k <= self.hi


def _as_indices(w) -> np.ndarray:
    if isinstance(w, IndexWindow):
        return w.indices
    return np.asarray(w, dtype=np.int64)


def _orbit_values(spec: OperatorSpec, x: float, idx: np.ndarray, guard: bool):
    y = orbit_points(x, spec.omega, idx)
    gv = spec.potential.g(y)
    fv = spec.potential.f(y)
    if guard:
        bad = np.flatnonzero(np.abs(fv) < spec.f_min)
        if bad.size:
            i = int(bad[0])
            raise PoleProximity(float(y[i]), float(abs(fv[i])), int(idx[i]))
    return y, gv, fv


def build_window(spec: OperatorSpec, x: float, w, E: float) -> np.ndarray:
    """The matrix of ``H - E`` restricted to the window (or index array) ``w``."""
    idx = _as_indices(w)
    _, gv, fv = _orbit_values(spec, x, idx, guard=True)
    A = spec.eps * spec.kernel.matrix(idx)
    A[np.diag_indices_from(A)] = gv / fv - E
    return A


@dataclass(frozen=True)
class FactorPair:
    F_diag: np.ndarray
    B: np.ndarray
    E: float
    x: float
    indices: np.ndarray = field(repr=False)

    @property
    def F_inv_diag(self) -> np.ndarray:
        return 1.0 / self.F_diag

    def product(self) -> np.ndarray:
        return self.F_diag[:, None] * self.B


def _build_B(spec: OperatorSpec, gv, fv, idx, E):
    s = math.sqrt(1.0 + E * E)
    B = (spec.eps / s) * fv[:, None] * spec.kernel.matrix(idx)
    B[np.diag_indices_from(B)] = (gv - E * fv) / s
    return B


def factor_B(spec: OperatorSpec, x: float, w, E: float) -> np.ndarray:
    """``B_N(x, E)`` alone; needs no pole guard because its entries are bounded."""
    idx = _as_indices(w)
    _, gv, fv = _orbit_values(spec, x, idx, guard=False)
    return _build_B(spec, gv, fv, idx, E)


def factorize(spec: OperatorSpec, x: float, w, E: float) -> FactorPair:
    """Split ``H - E = F B`` on the window ``w``."""
    idx = _as_indices(w)
    _, gv, fv = _orbit_values(spec, x, idx, guard=True)
    s = math.sqrt(1.0 + E * E)
    return FactorPair(s / fv, _build_B(spec, gv, fv, idx, E), float(E), float(x), idx)


def entry_bounds(spec: OperatorSpec, pair: FactorPair) -> np.ndarray:
    """Entrywise ceilings: ``|g|+|f|`` on the diagonal, ``eps |f| exp(-rho |n-n'|)`` off it."""
    p = spec.potential
    idx = pair.indices
    d = np.abs(idx[:, None] - idx[None, :])
    bound = spec.eps * p.f_sup * np.exp(-spec.kernel.rho * d)
    bound[np.diag_indices_from(bound)] = p.g_sup + p.f_sup
    return bound


class LogDet(NamedTuple):
    logabs: float
    sign: complex | float  # +-1 for real matrices, a unit phase for complex ones, 0 if singular


def logdet(B: np.ndarray) -> LogDet:
    """``log|det B|`` and its sign from a row-pivoted LU factorization."""
    B = np.asarray(B)
    n = B.shape[0]
    if n == 0:
        return LogDet(0.0, 1.0)
    if not np.all(np.isfinite(B)):
        raise ValueError("matrix has non-finite entries")
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", la.LinAlgWarning)
        lu, piv = la.lu_factor(B, check_finite=False)
    return _logdet_from_lu(lu, piv)


def _logdet_from_lu(lu, piv) -> LogDet:
    u = np.diag(lu)
    au = np.abs(u)
    if np.any(au < PIVOT_FLOOR):
        return LogDet(-math.inf, 0.0)
    swaps = int(np.count_nonzero(piv != np.arange(piv.size)))
    if np.iscomplexobj(u):
        phase = np.prod(u / au) * (-1) ** swaps
        sign = complex(phase)
    else:
        sign = float((-1) ** (swaps + int(np.count_nonzero(u < 0))))
    return LogDet(float(np.log(au).sum()), sign)


def hadamard_ceiling(B: np.ndarray) -> float:
    """``sum_n log ||row_n(B)||_2``, an upper bound for ``log|det B|``."""
    with np.errstate(divide="ignore"):
        return float(np.log(np.linalg.norm(B, axis=1)).sum())


def hadamard_ok(B: np.ndarray, ld: float | None = None) -> bool:
    if ld is None:
        ld = logdet(B).logabs
    ceiling = hadamard_ceiling(B)
    return ld <= ceiling + 1e-10 * (1.0 + abs(ceiling))


class DecayFit(NamedTuple):
    c_eff: float  # minus the slope of log|G| against |n - n'|
    offset: float
    r2: float


def decay_fit(G: np.ndarray, frac: float = 0.1) -> DecayFit:
    """Fit ``log|G(n, n')| ~ offset - c_eff |n - n'|`` over pairs with ``|n - n'| >= frac N``."""
    if not 0.0 < frac < 1.0:
        raise ValueError("frac must lie in (0, 1)")
    G = np.asarray(G)
    N = G.shape[0]
    i, j = np.indices(G.shape)
    d = np.abs(i - j)
    a = np.abs(G)
    keep = (d >= max(1.0, frac * N)) & (a > PIVOT_FLOOR)
    if keep.sum() < 10:
        raise InsufficientData(f"only {int(keep.sum())} usable pairs")
    X = d[keep].astype(float)
    Y = np.log(a[keep])
    if np.ptp(X) == 0:
        raise InsufficientData("all usable pairs share one distance")
    slope, intercept = np.polyfit(X, Y, 1)
    resid = Y - (slope * X + intercept)
    ss_tot = float(((Y - Y.mean()) ** 2).sum())
    r2 = 1.0 - float((resid**2).sum()) / ss_tot if ss_tot > 0 else 1.0
    return DecayFit(float(-slope), float(intercept), max(0.0, min(1.0, r2)))


@dataclass(frozen=True)
class GreenResult:
    G: np.ndarray = field(repr=False)
    logdet_B: float
    c_eff: float
    offset: float
    r2: float
    max_entry: float
    x: float = 0.0
    E: float = 0.0
    window: IndexWindow | None = None
    hadamard_ok: bool = True

    @property
    def N(self) -> int:
        return self.G.shape[0]


def _green_from_B(B, finv, frac):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", la.LinAlgWarning)
        lu, piv = la.lu_factor(B, check_finite=False)
    ld = _logdet_from_lu(lu, piv)
    if ld.sign == 0:
        raise SingularWindow("B is numerically singular; E is (close to) an eigenvalue")
    G = la.lu_solve((lu, piv), np.diag(finv).astype(B.dtype), check_finite=False)
    try:
        fit = decay_fit(G, frac)
    except InsufficientData:
        fit = DecayFit(math.nan, math.nan, math.nan)
    return G, ld, fit


def green_indices(spec: OperatorSpec, x: float, idx, E: float, frac: float = 0.1) -> GreenResult:
    """Green's function on an arbitrary index set (rows/columns ordered as ``idx``)."""
    idx = _as_indices(idx)
    _, gv, fv = _orbit_values(spec, x, idx, guard=True)
    B = _build_B(spec, gv, fv, idx, E)
    finv = fv / math.sqrt(1.0 + E * E)
    G, ld, fit = _green_from_B(B, finv, frac)
    return GreenResult(G, ld.logabs, fit.c_eff, fit.offset, fit.r2, float(np.abs(G).max()),
                       float(x), float(E), None, hadamard_ok(B, ld.logabs))


def green(spec: OperatorSpec, x: float, w: IndexWindow, E: float, frac: float = 0.1) -> GreenResult:
    """``G = B^-1 F^-1`` on the window ``w`` at phase ``x`` and energy ``E``."""
    res = green_indices(spec, x, w.indices, E, frac)
    return GreenResult(res.G, res.logdet_B, res.c_eff, res.offset, res.r2, res.max_entry,
                       res.x, res.E, w, res.hadamard_ok)


def cramer_check(spec: OperatorSpec, x: float, w: IndexWindow, E: float, n: int, n2: int) -> float:
    """Relative mismatch between ``|B^-1(n, n2)|`` and its minor ratio.

    ``n`` and ``n2`` are positions inside the window. The minor removes row
    ``n2`` and column ``n`` (the adjugate is the transposed cofactor matrix).
    """
    B = factor_B(spec, x, w, E)
    ld = logdet(B)
    if ld.sign == 0:
        raise SingularWindow("B is numerically singular")
    inv_entry = abs(la.solve(B, np.eye(B.shape[0])[:, n2], check_finite=False)[n])
    minor = np.delete(np.delete(B, n2, axis=0), n, axis=1)
    lm = logdet(minor)
    ratio = 0.0 if lm.sign == 0 else math.exp(lm.logabs - ld.logabs)
    scale = max(inv_entry, ratio)
    if scale == 0.0:
        return 0.0
    return abs(inv_entry - ratio) / scale


def path_ceiling(spec: OperatorSpec, x: float, w: IndexWindow, E: float, n: int, n2: int) -> float:
    """Log of a path-expansion ceiling on ``|B^-1(n, n2)|``.

    Summing the path expansion of the minor over all step counts gives
    ``sum_{b >= |n-n2|} ((1 + 2 eps') e^-rho)^b`` times a Hadamard bound on the
    leftover determinants, with ``eps' = eps ||f|| / sqrt(1+E^2)``. Returns
    ``+inf`` when the geometric ratio is not below one.
    """
    B = factor_B(spec, x, w, E)
    ld = logdet(B)
    if ld.sign == 0:
        raise SingularWindow("B is numerically singular")
    eps_eff = spec.eps * spec.potential.f_sup / math.sqrt(1.0 + E * E)
    q = (1.0 + 2.0 * eps_eff) * math.exp(-spec.kernel.rho)
    if q >= 1.0:
        return math.inf
    rows = np.linalg.norm(B, axis=1)
    log_h = float(np.log(np.maximum(rows, 1.0)).sum())
    d = abs(n - n2)
    return log_h + d * math.log(q) - math.log1p(-q) - ld.logabs


# ---------------------------------------------------------------------------
# batched determinants over many phases


def batch_factor_B(spec: OperatorSpec, x: np.ndarray, starts: np.ndarray, N: int, E: float):
    """Stack of ``B`` for windows ``[start, start+N)`` at phases ``x``, plus ``f`` on each orbit."""
    x = np.asarray(x, dtype=float)
    starts = np.asarray(starts, dtype=np.int64)
    s = math.sqrt(1.0 + E * E)
    base = np.arange(N)
    n = starts[:, None] + base[None, :]
    y = wrap(x[:, None] + orbit_points(0.0, spec.omega, n))
    p = spec.potential
    gv, fv = p.g(y), p.f(y)
    B = (spec.eps / s) * fv[:, :, None] * spec.kernel.matrix(base)[None, :, :]
    B[:, base, base] = (gv - E * fv) / s
    return B, fv


def batch_logdet_B(spec: OperatorSpec, x: np.ndarray, starts: np.ndarray, N: int, E: float) -> np.ndarray:
    """``log|det B|`` of the windows ``[start, start+N)`` at phases ``x`` (arrays of equal length).

    Singular windows give ``-inf``.
    """
    x = np.asarray(x, dtype=float)
    starts = np.asarray(starts, dtype=np.int64)
    out = np.empty(x.size)
    for lo in range(0, x.size, BATCH):
        B, _ = batch_factor_B(spec, x[lo:lo + BATCH], starts[lo:lo + BATCH], N, E)
        sign, la_ = np.linalg.slogdet(B)
        out[lo:lo + BATCH] = np.where(sign == 0, -np.inf, la_)
    return out


def midpoint_grid(n: int) -> np.ndarray:
    return (np.arange(n) + 0.5) / n


class AvgDetReport(NamedTuple):
    lhs: float
    rhs: float
    margin: float
    used: int
    skipped: int


def avg_logdet_check(spec: OperatorSpec, E: float, N: int, x_grid: int = 256,
                     quad_grid: int = 1024) -> AvgDetReport:
    """Grid average of ``(1/N) log|det B_N(x, E)|`` against ``int log(|g - E f| / sqrt(1+E^2))``."""
    if x_grid < 256:
        raise ValueError("x_grid must be >= 256")
    xs = midpoint_grid(x_grid)
    keep = np.ones(x_grid, dtype=bool)
    for j, x in enumerate(xs):
        fv = spec.potential.f(orbit_points(x, spec.omega, np.arange(N)))
        keep[j] = np.all(np.abs(fv) >= spec.f_min)
    ld = batch_logdet_B(spec, xs[keep], np.zeros(int(keep.sum()), dtype=np.int64), N, E)
    lhs = float(np.mean(ld) / N)
    rhs = log_abs_integral(spec.potential.linear(E), quad_grid) - 0.5 * math.log1p(E * E)
    return AvgDetReport(lhs, rhs, lhs - rhs, int(keep.sum()), int((~keep).sum()))


# ---------------------------------------------------------------------------
# large deviations


@dataclass(frozen=True)
class DeviationReport:
    M: int
    threshold: float
    bad_fraction: float
    mean: float
    C_tilde: float = 0.0


def default_C_tilde(spec: OperatorSpec, E: float) -> float:
    """A constant above ``10 (C_fg + 1)``, with ``C_fg`` estimated at this energy."""
    integral = log_abs_integral(spec.potential.linear(E)) - 0.5 * math.log1p(E * E)
    C_fg = max(0.0, -integral)
    return 10.0 * (C_fg + 1.0) + 1.0


def u_table(spec: OperatorSpec, E: float, N: int, xs: np.ndarray, M: int,
            C_tilde: float) -> np.ndarray:
    """``u(x_j + m omega)`` for ``|m| < M``, shape ``(len(xs), 2M - 1)``.

    ``u(x) = (1/N) log(|det B_N(x, E)| + C_tilde^-N)``.
    """
    ms = np.arange(-(M - 1), M)
    X = np.repeat(np.asarray(xs, dtype=float), ms.size)
    starts = np.tile(ms, len(xs))
    ld = batch_logdet_B(spec, X, starts, N, E)
    u = np.logaddexp(ld, -N * math.log(C_tilde)) / N
    return u.reshape(len(xs), ms.size)


def deviation_from_table(table: np.ndarray, M: int, threshold: float, C_tilde: float = 0.0) -> DeviationReport:
    """Bad fraction for Fejer order ``M`` from a table centered on ``m = 0``."""
    center = table.shape[1] // 2
    sub = table[:, center - (M - 1): center + M]
    mean = float(table[:, center].mean())
    avg = sub @ fejer_weights(M)
    bad = float(np.mean(np.abs(avg - mean) > threshold))
    return DeviationReport(M, float(threshold), bad, mean, C_tilde)


def ldt_scan(spec: OperatorSpec, E: float, N: int, M: int, x_grid: int = 2048,
             threshold: float = 0.05, C_tilde: float | None = None) -> DeviationReport:
    """Fraction of grid phases whose Fejer average of ``u`` strays from the mean by more than ``threshold``."""
    return ldt_ladder(spec, E, N, [M], x_grid, threshold, C_tilde)[0]


def ldt_ladder(spec: OperatorSpec, E: float, N: int, Ms: Sequence[int], x_grid: int = 2048,
               threshold: float = 0.05, C_tilde: float | None = None) -> list[DeviationReport]:
    """:func:`ldt_scan` for several ``M`` sharing one table of ``u`` values."""
    if C_tilde is None:
        C_tilde = default_C_tilde(spec, E)
    table = u_table(spec, E, N, midpoint_grid(x_grid), max(Ms), C_tilde)
    return [deviation_from_table(table, M, threshold, C_tilde) for M in Ms]


# ---------------------------------------------------------------------------
# good shifts


class GoodShift(NamedTuple):
    m: int
    result: GreenResult
    logdets: dict


def shift_range(N: int) -> range:
    """``m`` with ``|m| < floor(sqrt(N))``."""
    r = math.isqrt(N)
    return range(-(r - 1), r)


def good_shift(spec: OperatorSpec, x: float, E: float, N: int, frac: float = 0.1) -> GoodShift:
    """Among shifts ``|m| < floor(sqrt N)`` pick the window ``[m, m+N)`` with the largest ``log|det B|``.

    Ties go to the smallest ``|m|``, then to positive ``m``.
    """
    ms = np.array(list(shift_range(N)), dtype=np.int64)
    ld = batch_logdet_B(spec, np.full(ms.size, float(x)), ms, N, E)
    if np.all(np.isneginf(ld)):
        raise AllSingular(f"every shift of the size-{N} window is singular at E={E}")
    order = sorted(range(ms.size), key=lambda i: (-ld[i], abs(int(ms[i])), int(ms[i]) < 0))
    m = int(ms[order[0]])
    res = green(spec, x, IndexWindow.of_size(N, m), E, frac)
    return GoodShift(m, res, {int(k): float(v) for k, v in zip(ms, ld)})
