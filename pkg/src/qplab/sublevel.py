"""Sublevel-set measures on the torus and Lojasiewicz exponent fits.

Measures are bracketed, never point-estimated: dyadic intervals are classified
IN or OUT from five equally spaced samples (the endpoints of the refinement
two levels down). Anything unresolved at the requested depth counts towards
the upper bound only.

An interval whose samples are all OUT is only accepted as OUT once that is
certain. With a Lipschitz constant ``L`` for the margin (known for
trigonometric polynomials) this means the smallest sampled margin exceeds
``L`` times the distance to the nearest sample. Without one, intervals whose
samples dip in the middle stay suspect. Suspect intervals keep being split
down to ``DIP_DEPTH`` regardless of the requested depth, and whatever is still
suspect there counts towards the upper bound. This refinement does not depend
on ``depth``, which keeps brackets nested as ``depth`` grows.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, NamedTuple, Sequence

import numpy as np

from .errors import DepthExceeded
from .functions import MeromorphicPotential, TrigPolynomial

MAX_DEPTH = 24
DIP_DEPTH = 24
START_LEVEL = 6


@dataclass(frozen=True)
class MeasureBracket:
    lower: float
    upper: float
    depth: int
    undecided: int = 0

    @property
    def mid(self) -> float:
        return 0.5 * (self.lower + self.upper)

    @property
    def width(self) -> float:
        return self.upper - self.lower

    @property
    def resolution(self) -> float:
        return 2.0**-self.depth

    def contains(self, value: float) -> bool:
        return self.lower <= value <= self.upper


def dyadic_bracket(margin: Callable[[np.ndarray], np.ndarray], depth: int,
                   lipschitz: float | None = None) -> MeasureBracket:
    """Bracket ``mes{x in [0, 1) : margin(x) < 0}`` at resolution ``2**-depth``.

    ``margin`` must accept and return numpy arrays. ``lipschitz``, if given,
    must bound ``|margin'|`` on the torus.
    """
    if not 1 <= depth <= MAX_DEPTH:
        raise ValueError(f"depth must lie in [1, {MAX_DEPTH}]")
    level = min(START_LEVEL, depth)
    k = np.arange(2**level, dtype=np.int64)
    inside_total = 0.0
    undecided_total = 0.0
    undecided_count = 0
    quarters = np.arange(5) / 4.0
    while k.size:
        size = 2.0**-level
        pts = (k[:, None] + quarters[None, :]) * size
        m = np.asarray(margin(pts.ravel()), dtype=float).reshape(pts.shape)
        inn = m < 0  # nan counts as outside
        all_in = inn.all(axis=1)
        all_out = ~inn.any(axis=1)
        mixed = ~(all_in | all_out)

        inside_total += all_in.sum() * size

        if lipschitz is None:
            with np.errstate(invalid="ignore"):
                interior = np.nanmin(np.where(np.isnan(m[:, 1:4]), np.inf, m[:, 1:4]), axis=1)
                ends = np.minimum(m[:, 0], m[:, 4])
                dip = all_out & (interior < ends)
        else:
            # every point is within size/8 of a sample
            low = np.where(np.isnan(m), -np.inf, m).min(axis=1)
            dip = all_out & (low <= lipschitz * size / 8.0)

        split = np.zeros(k.shape, dtype=bool)
        if level < depth:
            split |= mixed
        else:
            undecided_count += int(mixed.sum())
            undecided_total += mixed.sum() * size
        if level < DIP_DEPTH:
            split |= dip
        elif lipschitz is not None:
            undecided_count += int(dip.sum())
            undecided_total += dip.sum() * size

        parents = k[split]
        k = np.concatenate([2 * parents, 2 * parents + 1])
        k.sort()
        level += 1

    lower = min(inside_total, 1.0)
    upper = min(inside_total + undecided_total, 1.0)
    if undecided_total > 0.5:
        raise DepthExceeded(f"undecided mass {undecided_total:.3f} exceeds 0.5 at depth {depth}")
    return MeasureBracket(lower, upper, depth, undecided_count)


def slope_bound(h: TrigPolynomial) -> float:
    """``sum_n 2 pi |n c_n|``, an upper bound for ``|h'|`` on the real torus."""
    return h.derivative().l1_norm


def sublevel_measure(fn: Callable, threshold: float, depth: int = 20) -> MeasureBracket:
    """Bracket ``mes{x : |fn(x)| < threshold}``."""
    if threshold <= 0:
        raise ValueError("threshold must be > 0")

    def margin(x):
        with np.errstate(all="ignore"):
            return np.abs(fn(x)) - threshold

    lip = slope_bound(fn) if isinstance(fn, TrigPolynomial) else None
    return dyadic_bracket(margin, depth, lip)


def potential_measure(p: MeromorphicPotential, E: float, eps: float, depth: int = 20) -> MeasureBracket:
    """Bracket ``mes{x : |v(x) - E| < eps}`` through ``|g - E f| < eps |f|`` (no division)."""
    if eps <= 0:
        raise ValueError("eps must be > 0")
    h = p.linear(E)
    f = p.f
    lip = slope_bound(h) + eps * slope_bound(f)
    return dyadic_bracket(lambda x: np.abs(h(x)) - eps * np.abs(f(x)), depth, lip)


def normalized_linear_measure(p: MeromorphicPotential, E: float, eps: float,
                              depth: int = 20) -> MeasureBracket:
    """Bracket ``mes{x : |g(x) - E f(x)| / sqrt(1 + E**2) < eps}``."""
    if eps <= 0:
        raise ValueError("eps must be > 0")
    h = p.linear(E)
    s = math.sqrt(1.0 + E * E)
    return dyadic_bracket(lambda x: np.abs(h(x)) / s - eps, depth, slope_bound(h) / s)


def default_eps_list() -> np.ndarray:
    """Five points per decade over ``[1e-5, 1e-1]``."""
    return np.logspace(-5, -1, 21)


class ExponentFit(NamedTuple):
    c: float
    r2: float
    intercept: float
    samples: list  # (eps, MeasureBracket)


def fit_exponent(eps, measures) -> tuple[float, float, float]:
    """Least squares of ``log(measure)`` against ``log(eps)``; returns ``(slope, intercept, r2)``."""
    eps = np.asarray(eps, dtype=float)
    m = np.asarray(measures, dtype=float)
    keep = m > 0
    if keep.sum() < 2:
        raise ValueError("need at least two positive measures to fit an exponent")
    X, Y = np.log(eps[keep]), np.log(m[keep])
    slope, intercept = np.polyfit(X, Y, 1)
    resid = Y - (slope * X + intercept)
    ss_tot = float(((Y - Y.mean()) ** 2).sum())
    r2 = 1.0 - float((resid**2).sum()) / ss_tot if ss_tot > 0 else 1.0
    return float(slope), float(intercept), max(0.0, min(1.0, r2))


def _check_eps_list(eps_list):
    eps = np.asarray(eps_list, dtype=float)
    if eps.size < 4:
        raise ValueError("eps_list needs at least 4 entries")
    if math.log10(eps.max() / eps.min()) < 3 - 1e-9:
        raise ValueError("eps_list must span at least 3 decades")
    return eps


def lojasiewicz_fit(p: MeromorphicPotential, E: float, eps_list: Sequence[float] | None = None,
                    depth: int = MAX_DEPTH) -> ExponentFit:
    """Fit ``mes{|v - E| < eps} ~ K eps**c`` over ``eps_list``."""
    eps = _check_eps_list(default_eps_list() if eps_list is None else eps_list)
    brackets = [potential_measure(p, E, e, depth) for e in eps]
    c, b, r2 = fit_exponent(eps, [br.mid for br in brackets])
    return ExponentFit(c, r2, b, list(zip(eps.tolist(), brackets)))


def linear_exponent_fit(p: MeromorphicPotential, E: float, eps_list: Sequence[float] | None = None,
                        depth: int = MAX_DEPTH) -> ExponentFit:
    """Same fit for the normalized linear combination ``|g - E f| / sqrt(1 + E**2)``."""
    eps = _check_eps_list(default_eps_list() if eps_list is None else eps_list)
    brackets = [normalized_linear_measure(p, E, e, depth) for e in eps]
    c, b, r2 = fit_exponent(eps, [br.mid for br in brackets])
    return ExponentFit(c, r2, b, list(zip(eps.tolist(), brackets)))


class ChainCheck(NamedTuple):
    E: float
    eps: float
    lhs: float  # upper bound of mes{|g - E f| < eps}
    rhs: float  # upper(|v - E| < sqrt eps) + upper(|f| < sqrt eps) + 4 * resolution
    ok: bool


def chain_check(p: MeromorphicPotential, E: float, eps: float, depth: int = 20) -> ChainCheck:
    """Compare the splitting ``{|g-Ef| < eps} subset {|v-E| < sqrt(eps)} u {|f| < sqrt(eps)}``."""
    h = p.linear(E)
    lhs = dyadic_bracket(lambda x: np.abs(h(x)) - eps, depth, slope_bound(h)).upper
    root = math.sqrt(eps)
    rhs = (potential_measure(p, E, root, depth).upper
           + sublevel_measure(p.f, root, depth).upper
           + 4.0 * 2.0**-depth)
    return ChainCheck(E, eps, lhs, rhs, lhs <= rhs)
