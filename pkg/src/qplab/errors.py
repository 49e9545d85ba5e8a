"""Exception types raised across the package."""


class QPLabError(Exception):
    """Base class for all package errors."""


class RationalInput(QPLabError, ValueError):
    pass


class LengthMismatch(QPLabError, ValueError):
    pass


class OutOfAnnulus(QPLabError, ValueError):
    pass


class PoleProximity(QPLabError, ArithmeticError):
    """An orbit point sits within ``f_min`` of a zero of the denominator."""

    def __init__(self, x, f_abs, index=None):
        self.x = x
        self.f_abs = f_abs
        self.index = index
        where = "" if index is None else f" at n={index}"
        super().__init__(f"|f(x)| = {f_abs:.3g} below f_min at x = {x!r}{where}")


class BadRadii(QPLabError, ValueError):
    pass


class PoleTooClose(QPLabError, ValueError):
    pass


class NormalizationError(QPLabError, ValueError):
    pass


class DepthExceeded(QPLabError, RuntimeError):
    pass


class SingularWindow(QPLabError, ArithmeticError):
    pass


class InsufficientData(QPLabError, ValueError):
    pass


class AllSingular(QPLabError, ArithmeticError):
    pass


class BadSizes(QPLabError, ValueError):
    pass


class HypothesisFailed(QPLabError):
    """A child window does not satisfy the assumed off-diagonal decay."""

    def __init__(self, child, pair, value, bound):
        self.child = child
        self.pair = pair
        self.value = value
        self.bound = bound
        super().__init__(
            f"child [{child.lo}, {child.hi}] pair {pair}: |G| = {value:.3e} >= {bound:.3e}"
        )


class EigenFailure(QPLabError, ArithmeticError):
    pass


class ConfigError(QPLabError, ValueError):
    """Invalid configuration; ``line`` and ``key`` locate the problem when known."""

    def __init__(self, message, line=None, key=None):
        self.message = message
        self.line = line
        self.key = key
        where = []
        if line is not None:
            where.append(f"line {line}")
        if key is not None:
            where.append(f"key '{key}'")
        prefix = f"[{', '.join(where)}] " if where else ""
        super().__init__(prefix + message)
