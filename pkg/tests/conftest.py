import math

import pytest

from stablerobin.geometry import MetricChart
from stablerobin.solver import Problem, SolveOptions

# cubic Hermite through (0, 1) and (ln 2, -1/2) with slope 10 at both ends, in s = u / ln 2
HERMITE_H = ("(2*(u/log(2))^3 - 3*(u/log(2))^2 + 1)"
             " + ((u/log(2))^3 - 2*(u/log(2))^2 + u/log(2))*log(2)*10"
             " - 0.5*(-2*(u/log(2))^3 + 3*(u/log(2))^2)"
             " + ((u/log(2))^3 - (u/log(2))^2)*log(2)*10")

ZERO2 = [["0", "0"], ["0", "0"]]


def square(n=32):
    return MetricChart(["x", "y"], [(0, 1), (0, 1)], [False, False], [["1", "0"], ["0", "1"]], n)


def annulus(n=32, analytic=True):
    d = {"r": [["0", "0"], ["0", "2*r"]], "th": ZERO2} if analytic else None
    return MetricChart(["r", "th"], [(1, 2), (0, 2 * math.pi)], [False, True], [["1", "0"], ["0", "r^2"]], n, d)


def sphere_band(n=32, lo=0.6, hi=1.4, analytic=True):
    d = {"th": [["0", "0"], ["0", "2*sin(th)*cos(th)"]], "ph": ZERO2} if analytic else None
    return MetricChart(["th", "ph"], [(lo, hi), (0, 2 * math.pi)], [False, True],
                       [["1", "0"], ["0", "sin(th)^2"]], n, d)


def cylinder(n=32):
    return MetricChart(["z", "th"], [(0, 1), (0, 2 * math.pi)], [False, True], [["1", "0"], ["0", "1"]], n)


def annulus_problem(n=64):
    return Problem(annulus(n), "0", HERMITE_H, label="annulus")


ANNULUS_OPTS = SolveOptions(init="log(r)", noise=0.01, seed=0)


@pytest.fixture(scope="session")
def annulus_solution():
    """Converged Newton solution of the manufactured annulus problem at n = 64."""
    from stablerobin.solver import solve_newton

    p = annulus_problem(64)
    sol = solve_newton(p, ANNULUS_OPTS)
    assert sol.converged
    return p, sol


# -- acceptance summary -------------------------------------------------------

ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def verdict():
    """``verdict(k, ok, detail)`` prints and records one acceptance line, then asserts."""

    def _verdict(k: int, ok: bool, detail: str):
        line = f"[criterion {k:2d}] {'PASS' if ok else 'FAIL'}  {detail}"
        print(line)
        ACCEPTANCE_LINES.append(line)
        assert ok, line

    return _verdict


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
