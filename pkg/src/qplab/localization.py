"""Multiscale checks: interval paving, resolvent patching, bad sets, orbit counts
and eigenvector decay on finite windows.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np
import scipy.linalg as la

from .errors import BadSizes, EigenFailure, HypothesisFailed, InsufficientData
from .spectral import (
    BATCH,
    IndexWindow,
    OperatorSpec,
    _build_B,
    _orbit_values,
    batch_factor_B,
    build_window,
    green,
    green_indices,
    midpoint_grid,
    shift_range,
)
from .torus import Frequency, orbit

RESOLVENT_TOL = 1e-8
EIGEN_TOL = 1e-8


# ---------------------------------------------------------------------------
# paving


@dataclass(frozen=True)
class Paving:
    parent: IndexWindow
    children: tuple
    M: int

    def covering_ok(self) -> bool:
        return _first_uncovered(self.parent, self.children, self.M) is None


def _first_uncovered(parent: IndexWindow, children, M: int):
    """First ``k`` whose quarter-neighbourhood fits in no child, or ``None``."""
    q = M / 4.0
    for k in range(parent.lo, parent.hi + 1):
        a = max(parent.lo, math.ceil(k - q))
        b = min(parent.hi, math.floor(k + q))
        if not any(c.lo <= a and b <= c.hi for c in children):
            return k
    return None


def pave(parent: IndexWindow, M: int) -> Paving:
    """Cover ``parent`` by windows of size ``M`` at stride ``M // 2``, the last one right-aligned.

    The covering property (every ``[k - M/4, k + M/4]`` inside the parent sits
    in a single child) is checked for every ``k``.
    """
    N = parent.size
    if not 1 <= M <= N:
        raise BadSizes(f"need 1 <= M <= N, got M={M}, N={N}")
    if M == N:
        return Paving(parent, (parent,), M)
    stride = max(1, M // 2)
    offsets = list(range(0, N - M + 1, stride))
    if offsets[-1] != N - M:
        offsets.append(N - M)
    children = tuple(IndexWindow.of_size(M, parent.lo + o) for o in offsets)
    k = _first_uncovered(parent, children, M)
    if k is not None:
        raise BadSizes(f"no child of size {M} covers the quarter-neighbourhood of k={k}")
    return Paving(parent, children, M)


# ---------------------------------------------------------------------------
# resolvent patching


@dataclass(frozen=True)
class PatchReport:
    x: float
    E: float
    c0: float
    slack: float
    child_c_eff: tuple
    max_entry: float
    b4_bound: float
    b4_ok: bool
    b5_worst: float  # max of log|G| + c0 d / 2 over d > N/10; negative means (b5) holds
    b5_ok: bool
    resolvent_residual: float
    resolvent_ok: bool
    parent_c_eff: float
    G: np.ndarray = field(repr=False, default=None)

    @property
    def ok(self) -> bool:
        return self.b4_ok and self.b5_ok and self.resolvent_ok


def _distance(n: int) -> np.ndarray:
    i = np.arange(n)
    return np.abs(i[:, None] - i[None, :])


def _check_child(res, child: IndexWindow, c0: float, slack: float):
    G = np.abs(res.G)
    d = _distance(child.size)
    bound = np.exp(-c0 * (d - slack))
    bad = np.argwhere(G >= bound)
    if bad.size:
        i, j = (int(v) for v in bad[0])
        raise HypothesisFailed(child, (child.lo + i, child.lo + j), float(G[i, j]), float(bound[i, j]))


def resolvent_residual(spec: OperatorSpec, x: float, parent: IndexWindow, block: IndexWindow,
                       E: float, G_parent: np.ndarray | None = None) -> float:
    """Relative residual of ``G_I = G_blk + G_blk (H_blk - H_I) G_I``.

    ``H_blk`` keeps the couplings inside ``block`` and inside its complement
    in ``parent`` and drops those between them.
    """
    idx = parent.indices
    inside = (idx >= block.lo) & (idx <= block.hi)
    if G_parent is None:
        G_parent = green(spec, x, parent, E).G
    G_blk = np.zeros_like(G_parent)
    for mask in (inside, ~inside):
        if mask.any():
            sub = green_indices(spec, x, idx[mask], E).G
            pos = np.flatnonzero(mask)
            G_blk[np.ix_(pos, pos)] = sub
    cut = inside[:, None] != inside[None, :]
    # H_blk - H_I is minus the couplings that cross the cut
    D = np.where(cut, -spec.eps * spec.kernel.matrix(idx), 0.0)
    rhs = G_blk + G_blk @ D @ G_parent
    scale = float(np.abs(G_parent).max())
    if scale == 0.0:
        return 0.0
    return float(np.abs(G_parent - rhs).max()) / scale


def calibrate(spec: OperatorSpec, x: float, E: float, paving: Paving,
              margin: float = 1e-6) -> tuple[float, float]:
    """``(c0, slack)`` measured on the children.

    ``c0`` is the smallest positive fitted child rate and ``slack`` the least
    value (plus ``margin``) for which every child meets the decay template.
    """
    results = [green(spec, x, c, E) for c in paving.children]
    rates = [r.c_eff for r in results if math.isfinite(r.c_eff) and r.c_eff > 0]
    if not rates:
        raise InsufficientData("no child has a positive fitted decay rate")
    c0 = min(rates)
    slack = 0.0
    for r in results:
        d = _distance(r.N)
        with np.errstate(divide="ignore"):
            need = d + np.log(np.abs(r.G)) / c0
        slack = max(slack, float(need.max()))
    return c0, slack + margin


def patch_check(spec: OperatorSpec, x: float, E: float, paving: Paving, c0: float,
                slack: float, frac: float = 0.1) -> PatchReport:
    """Check the child decay hypothesis, then the parent bounds and the resolvent identity.

    Raises :class:`HypothesisFailed` if some child misses
    ``|G(n1, n2)| < exp(-c0 (|n1 - n2| - slack))``. Conclusion failures are
    reported through the ``*_ok`` flags.
    """
    if c0 <= 0:
        raise ValueError("c0 must be > 0")
    child_rates = []
    for child in paving.children:
        res = green(spec, x, child, E, frac)
        _check_child(res, child, c0, slack)
        child_rates.append(res.c_eff)

    parent = paving.parent
    pres = green(spec, x, parent, E, frac)
    G = pres.G
    A = np.abs(G)
    b4_bound = 2.0 * math.exp(c0 * slack)
    max_entry = float(A.max())

    d = _distance(parent.size)
    far = d > parent.size / 10.0
    if far.any():
        with np.errstate(divide="ignore"):
            b5_worst = float((np.log(A[far]) + 0.5 * c0 * d[far]).max())
    else:
        b5_worst = -math.inf

    centre = 0.5 * (parent.lo + parent.hi)
    block = min(paving.children, key=lambda c: (abs(0.5 * (c.lo + c.hi) - centre), c.lo))
    resid = resolvent_residual(spec, x, parent, block, E, G)

    return PatchReport(float(x), float(E), float(c0), float(slack), tuple(child_rates),
                       max_entry, b4_bound, max_entry < b4_bound, b5_worst, b5_worst < 0.0,
                       resid, resid <= RESOLVENT_TOL, pres.c_eff, G)


# ---------------------------------------------------------------------------
# bad sets


@dataclass(frozen=True)
class BadSet:
    E: float
    N: int
    grid: int
    flagged: np.ndarray = field(repr=False)
    fraction: float
    c0: float = 0.0
    slack: float = 0.0

    def __post_init__(self):
        flagged = np.asarray(self.flagged, dtype=bool)
        if flagged.size != self.grid:
            raise ValueError("flagged must have one entry per grid point")
        object.__setattr__(self, "flagged", flagged)

    @classmethod
    def from_flags(cls, E, N, flagged, c0=0.0, slack=0.0):
        flagged = np.asarray(flagged, dtype=bool)
        return cls(float(E), int(N), flagged.size, flagged, float(flagged.mean()), c0, slack)

    def contains(self, y) -> np.ndarray:
        """Membership of torus points through the nearest grid cell."""
        cell = np.floor(np.asarray(y, dtype=float) * self.grid).astype(np.int64) % self.grid
        return self.flagged[cell]


def _template_margin(spec: OperatorSpec, x: np.ndarray, starts: np.ndarray, N: int, E: float,
                     c0: float) -> np.ndarray:
    """``max_{n1,n2} (log|G(n1, n2)| + c0 |n1 - n2|)`` for each window; ``+inf`` if singular."""
    s = math.sqrt(1.0 + E * E)
    d = _distance(N)
    out = np.empty(x.size)
    for lo in range(0, x.size, BATCH):
        B, fv = batch_factor_B(spec, x[lo:lo + BATCH], starts[lo:lo + BATCH], N, E)
        sign, _ = np.linalg.slogdet(B)
        singular = sign == 0
        B[singular] = np.eye(N)
        rhs = np.zeros_like(B)
        rhs[:, np.arange(N), np.arange(N)] = fv / s
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            G = np.linalg.solve(B, rhs)
        with np.errstate(divide="ignore", invalid="ignore"):
            m = (np.log(np.abs(G)) + c0 * d[None]).max(axis=(1, 2))
        m[singular | ~np.isfinite(m)] = math.inf
        out[lo:lo + BATCH] = m
    return out


def bad_flags(spec: OperatorSpec, E: float, N: int, xs, c0: float, slack: float) -> np.ndarray:
    """For each phase in ``xs``, whether no shift ``|m| < sqrt(N)`` gives a good window."""
    xs = np.asarray(xs, dtype=float)
    ms = np.array(list(shift_range(N)), dtype=np.int64)
    X = np.repeat(xs, ms.size)
    starts = np.tile(ms, xs.size)
    margin = _template_margin(spec, X, starts, N, E, c0).reshape(xs.size, ms.size)
    return ~(margin < c0 * slack).any(axis=1)


def bad_set(spec: OperatorSpec, E: float, N: int, grid: int = 512, c0: float = 0.9,
            slack: float = 0.0) -> BadSet:
    """Flag midpoint-grid phases where no shift ``|m| < sqrt(N)`` gives a good window.

    A window ``[m, m + N)`` is good when ``|G(n1, n2)| < exp(-c0 (|n1 - n2| - slack))``
    for all pairs. Singular windows are never good.
    """
    if grid < 512:
        raise ValueError("grid must be >= 512")
    if c0 <= 0:
        raise ValueError("c0 must be > 0")
    return BadSet.from_flags(E, N, bad_flags(spec, E, N, midpoint_grid(grid), c0, slack), c0, slack)


class SigmaFit(NamedTuple):
    sigma: float
    intercept: float
    points: int  # ladder entries with 0 < fraction < 1


def fit_sigma(Ns: Sequence[int], fractions: Sequence[float]) -> SigmaFit:
    """Slope of ``log(-log fraction)`` against ``log N``; ``nan`` with fewer than two usable points."""
    Ns = np.asarray(Ns, dtype=float)
    fr = np.asarray(fractions, dtype=float)
    keep = (fr > 0) & (fr < 1)
    if keep.sum() < 2:
        return SigmaFit(math.nan, math.nan, int(keep.sum()))
    slope, intercept = np.polyfit(np.log(Ns[keep]), np.log(-np.log(fr[keep])), 1)
    return SigmaFit(float(slope), float(intercept), int(keep.sum()))


def bad_set_ladder(spec: OperatorSpec, E: float, Ns: Sequence[int], grid: int = 512,
                   c0: float = 0.9, kappa: float = 0.1, slack: float | None = None):
    """:func:`bad_set` for each ``N`` with slack ``kappa * N`` (or a fixed ``slack``), plus a sigma fit."""
    sets = [bad_set(spec, E, N, grid, c0, kappa * N if slack is None else slack) for N in Ns]
    return sets, fit_sigma(Ns, [b.fraction for b in sets])


# ---------------------------------------------------------------------------
# orbit counts


class OrbitCount(NamedTuple):
    count: int
    bound: float  # N1 ** (1 - delta)
    ratio: float  # count / bound
    degenerate: bool  # count reached N1, so the sanity check count < N1 fails


def orbit_count(bad: BadSet, x0: float, freq: Frequency | float, N1: int,
                delta: float = 0.1) -> OrbitCount:
    """Count ``1 <= k <= N1`` with ``x0 + k omega`` in the flagged set (a qualitative check)."""
    if N1 < 1:
        raise ValueError("N1 must be >= 1")
    pts = orbit(x0, freq, 1, N1)
    count = int(bad.contains(pts).sum())
    bound = float(N1) ** (1.0 - delta)
    return OrbitCount(count, bound, count / bound, count >= N1)


# ---------------------------------------------------------------------------
# eigenvectors


class EigenPair(NamedTuple):
    E: float
    xi: np.ndarray
    residual: float
    decay_c: float
    decay_r2: float
    center: int
    interior: bool


@dataclass(frozen=True)
class EigenReport:
    pairs: list
    window: IndexWindow
    energies: dict = field(default_factory=dict)  # j -> spectrum of H on [-j, j]

    def interior(self) -> list:
        return [p for p in self.pairs if p.interior]

    def localized_fraction(self, r2_min: float = 0.9) -> float:
        inner = self.interior()
        if not inner:
            return math.nan
        good = sum(1 for p in inner if p.decay_r2 > r2_min and p.decay_c > 0)
        return good / len(inner)


def _fit_profile(xi: np.ndarray, c: int, min_dist: float):
    a = np.abs(xi)
    d = np.abs(np.arange(xi.size) - c)
    off = d > 0
    if not np.any(a[off] > 0):
        return math.inf, math.nan
    keep = (d >= min_dist) & (a > 1e-300)
    if keep.sum() < 3 or np.ptp(d[keep]) == 0:
        return math.nan, math.nan
    X, Y = d[keep].astype(float), np.log(a[keep])
    slope, intercept = np.polyfit(X, Y, 1)
    resid = Y - (slope * X + intercept)
    ss_tot = float(((Y - Y.mean()) ** 2).sum())
    r2 = 1.0 - float((resid**2).sum()) / ss_tot if ss_tot > 0 else 1.0
    return float(-slope), max(0.0, min(1.0, r2))


def _refine(spec, gv, fv, idx, H, E, v):
    """Eigenvector with ``xi_c = 1`` at its centre, tails recomputed through ``B``.

    Solving ``B_L xi_L = -F_L^-1 H_{L,c}`` on the complement ``L`` of the centre
    resolves tails far below the rounding floor of a dense eigensolver.
    """
    c = int(np.argmax(np.abs(v)))  # argmax returns the first, i.e. smallest, index on ties
    n = idx.size
    rest = np.delete(np.arange(n), c)
    xi = np.zeros(n, dtype=H.dtype)
    xi[c] = 1.0
    if rest.size:
        s = math.sqrt(1.0 + E * E)
        B = _build_B(spec, gv[rest], fv[rest], idx[rest], E)
        rhs = -(fv[rest] / s) * H[rest, c]
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("error", la.LinAlgWarning)
                xi[rest] = la.solve(B, rhs, check_finite=False)
        except (la.LinAlgError, la.LinAlgWarning):
            xi = v / v[c]
    return xi, c


def _residual(H, E, xi) -> float:
    r = H @ xi - E * xi
    return float(np.abs(r).max() / np.linalg.norm(xi))


def eigen_decay(spec: OperatorSpec, x0: float, N: int, energy_window=None,
                j_stride: int | None = None, N1: int | None = None,
                frac: float = 0.1) -> EigenReport:
    """Eigenpairs of ``H`` on ``[-N, N]`` with fitted decay away from their centres.

    Each eigenvector is scaled so its largest entry (the centre) equals 1.
    The decay fit uses ``|n - centre| >= frac N`` and centres closer than
    ``frac N`` to an edge are marked as not interior. ``energies`` maps ``j``
    to the spectrum on ``[-j, j]`` for ``j = j_stride, 2 j_stride, ... <= N1``.
    """
    w = IndexWindow.centered(N)
    idx = w.indices
    H = build_window(spec, x0, w, 0.0)
    _, gv, fv = _orbit_values(spec, x0, idx, guard=True)
    if energy_window is None:
        evals, vecs = la.eigh(H)
    else:
        lo, hi = energy_window
        evals, vecs = la.eigh(H, subset_by_value=(lo, hi))

    edge = frac * N
    pairs = []
    for k in range(evals.size):
        E = float(evals[k])
        xi, c = _refine(spec, gv, fv, idx, H, E, vecs[:, k])
        res = _residual(H, E, xi)
        if res > EIGEN_TOL:
            v = vecs[:, k]
            xi = v / v[c]
            res = _residual(H, E, xi)
            if res > EIGEN_TOL:
                raise EigenFailure(f"eigenpair {k} (E={E}) has residual {res:.2e}")
        decay_c, r2 = _fit_profile(xi, c, edge)
        center = int(idx[c])
        interior = (center - w.lo) >= edge and (w.hi - center) >= edge
        pairs.append(EigenPair(E, xi, res, decay_c, r2, center, interior))

    energies = {}
    if j_stride:
        top = N if N1 is None else min(N1, N)
        for j in range(j_stride, top + 1, j_stride):
            sub = (idx >= -j) & (idx <= j)
            energies[j] = la.eigvalsh(H[np.ix_(sub, sub)])
    return EigenReport(pairs, w, energies)


def interlacing_ok(inner: np.ndarray, outer: np.ndarray, tol: float = 1e-9) -> bool:
    """Cauchy interlacing ``mu_i <= lambda_i <= mu_{i+k}`` between a principal submatrix and its parent."""
    lam = np.sort(np.asarray(inner))
    mu = np.sort(np.asarray(outer))
    k = mu.size - lam.size
    if k < 0:
        return False
    i = np.arange(lam.size)
    scale = tol * (1.0 + np.abs(mu).max()) if mu.size else tol
    return bool(np.all(mu[i] <= lam + scale) and np.all(lam <= mu[i + k] + scale))
