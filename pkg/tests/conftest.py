"""Shared fixtures and independent oracles.

The oracles here deliberately avoid the package's own quadrature: triangle
integrals go through ``scipy.integrate.dblquad`` on the physical triangle.
"""
import numpy as np
import pytest
from hypothesis import HealthCheck, settings
from scipy import integrate

settings.register_profile("ci", max_examples=40, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("ci")

ACCEPTANCE_LINES = []


def triangle_integral(f, p0, p1, p2, epsabs=1e-13, epsrel=1e-12):
    """Integral of ``f(x, y)`` over the triangle ``p0 p1 p2`` by adaptive 2D quadrature.

    Maps the reference triangle ``{s, t >= 0, s + t <= 1}`` affinely.
    """
    p0, p1, p2 = (np.asarray(p, dtype=float) for p in (p0, p1, p2))
    J = abs(np.cross(np.append(p1 - p0, 0), np.append(p2 - p0, 0))[2])

    def g(t, s):
        x, y = p0 + s * (p1 - p0) + t * (p2 - p0)
        return f(x, y)

    val, _ = integrate.dblquad(g, 0.0, 1.0, 0.0, lambda s: 1.0 - s, epsabs=epsabs, epsrel=epsrel)
    return J * val


@pytest.fixture
def oracle_integral():
    return triangle_integral


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
