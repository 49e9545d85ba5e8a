import math
import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from qplab.functions import MeromorphicPotential, ToeplitzKernel, TrigPolynomial  # noqa: E402
from qplab.spectral import OperatorSpec  # noqa: E402
from qplab.torus import GOLDEN, Frequency  # noqa: E402

MARYLAND_G = {1: -0.5j}
MARYLAND_F = {0: 1.0, 1: 0.5}

# criterion number -> (passed, detail), filled by test_acceptance
ACCEPTANCE: dict = {}


def maryland_spec(eps=0.05, rho=1.0, amplitude=0.5, omega=GOLDEN):
    return OperatorSpec(MeromorphicPotential.maryland(), ToeplitzKernel.exponential(rho, amplitude),
                        eps, Frequency(omega))


def random_spec(rng: np.random.Generator):
    """A random operator with a pole-carrying ``f`` or a smooth one, and a random kernel."""
    deg = int(rng.integers(1, 3))
    g = {n: complex(*rng.normal(size=2)) for n in range(1, deg + 1)}
    g[0] = float(rng.normal())
    if rng.random() < 0.5:
        f = dict(MARYLAND_F)
    else:
        f = {0: 2.0 + rng.random(), 1: complex(*(0.4 * rng.normal(size=2)))}
    rho = float(rng.uniform(0.5, 2.0))
    cutoff = int(rng.integers(1, 6))
    kernel = {n: float(rng.uniform(-0.9, 0.9)) * math.exp(-rho * n) for n in range(1, cutoff + 1)}
    eps = float(rng.uniform(0.0, 0.9))
    omega = float(rng.uniform(0.05, 0.95))
    spec = OperatorSpec(MeromorphicPotential(TrigPolynomial(g), TrigPolynomial(f)),
                        ToeplitzKernel(kernel, rho), eps, Frequency(omega))
    return spec, g, f, kernel


def kernel_fn(kernel: dict):
    def phi(n):
        if n == 0:
            return 0.0
        return kernel.get(abs(n), 0.0)
    return phi


def safe_phase(spec, rng, idx, f_min=1e-3):
    """A phase whose orbit over ``idx`` keeps ``|f| >= f_min``."""
    from qplab.torus import orbit_points

    for _ in range(1000):
        x = float(rng.random())
        if np.all(np.abs(spec.potential.f(orbit_points(x, spec.omega, np.asarray(idx)))) >= f_min):
            return x
    raise RuntimeError("no safe phase found")


@pytest.fixture
def maryland():
    return maryland_spec()


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[k]
        terminalreporter.write_line(f"criterion {k:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
