import math

import numpy as np
import pytest

from stablerobin import expr
from stablerobin import verify as V
from stablerobin.solver import Problem, SolveOptions, solve_newton

from conftest import ANNULUS_OPTS, annulus, annulus_problem, cylinder, sphere_band, square

CHARTS = {"square": square, "annulus": annulus, "sphere_band": sphere_band, "cylinder": cylinder}


def test_bochner_examples():
    assert V.check_bochner(square(16), "x^2").values["residual"] <= 1e-9
    assert V.check_bochner(sphere_band(16), 2.0).values["residual"] == 0.0
    rep = V.bochner_study(sphere_band(16), "cos(th)", [16, 32, 64])
    assert rep.passed and rep.order >= 1.7 and rep.levels[-1]["value"] <= 1e-3
    assert len(rep.levels) == 3


def test_hessian_gradient_examples():
    rep = V.check_hessian_gradient(annulus(64), "log(r)")
    assert rep.passed
    assert rep.values["min"] == pytest.approx(1 / 16, abs=5e-3)  # min of 1/r⁴ at r = 2
    lin = V.check_hessian_gradient(square(16), "2*x - 3*y")
    assert lin.passed and abs(lin.values["min"]) <= 1e-10


@pytest.mark.parametrize("name", sorted(CHARTS))
def test_hessian_gradient_random_fields(name):
    chart = CHARTS[name](32)
    rng = np.random.default_rng(7)
    for _ in range(20):
        rep = V.check_hessian_gradient(chart, V.random_trig_source(chart, rng))
        assert rep.passed, rep.values


def test_random_trig_is_periodic():
    chart = annulus(16)
    src = V.random_trig_source(chart, np.random.default_rng(0))
    a = expr.parse(src, chart.coords)
    for r in (1.0, 1.5, 2.0):
        assert expr.evaluate(a, {"r": r, "th": 0.0}) == pytest.approx(expr.evaluate(a, {"r": r, "th": 2 * math.pi}))


def test_boundary_identity_oracle(annulus_solution):
    p, sol = annulus_solution
    rep = V.check_boundary_identity(p, sol.u)
    assert rep.passed
    faces = rep.values["faces"]
    assert faces["r=high"]["lhs_mean"] == pytest.approx(-1 / 8, abs=1e-3)
    assert faces["r=high"]["rhs_mean"] == pytest.approx(-1 / 8, abs=1e-3)
    assert faces["r=low"]["lhs_mean"] == pytest.approx(1.0, abs=3e-3)
    assert faces["r=low"]["rhs_mean"] == pytest.approx(1.0, abs=3e-3)


def test_boundary_identity_requires_robin():
    with pytest.raises(V.PreconditionFailed):
        V.check_boundary_identity(annulus_problem(32), "cos(th) + log(r)")


def test_boundary_identity_trivial():
    p = Problem(square(16), "u - u^3", "0")
    assert V.check_boundary_identity(p, 1.0).values["residual"] == 0.0


def test_boundary_identity_sampled_field_second_order():
    """Sampled ln r is Robin only to O(h²); the identity residual follows."""
    res, hs = [], []
    for n in (16, 32, 64):
        p = annulus_problem(n)
        res.append(V.check_boundary_identity(p, "log(r)", robin_tol=1.0).values["residual"])
        hs.append(p.chart.grid.spacing[0])
    assert V.convergence_order(hs, res) >= 1.7


def test_boundary_identity_study_exact_on_radial_solution():
    rep = V.boundary_identity_study(annulus_problem(16), ANNULUS_OPTS, [16, 32, 64])
    assert rep.passed and rep.exact and rep.order is None


def test_gf_examples(annulus_solution):
    pc = Problem(square(16), "u - u^3", "0")
    rep = V.check_poincare_GF(pc, 1.0, "cos(x)*y")
    assert rep.values["lhs"] == 0.0 and rep.values["rhs"] == 0.0 and rep.passed
    p = annulus_problem(64)
    rep = V.check_poincare_GF(p, "log(r)", 1.0)
    assert rep.values["lhs"] == pytest.approx(-96.60, abs=0.5)
    assert rep.values["rhs"] == 0.0
    assert rep.values["slack"] > 0


def test_gf_random_fields(annulus_solution):
    from stablerobin.stability import is_stable

    p, sol = annulus_solution
    st = is_stable(p, sol.u)
    coarse_p = annulus_problem(32)
    coarse = (coarse_p, solve_newton(coarse_p, ANNULUS_OPTS).u)
    rng = np.random.default_rng(11)
    for _ in range(10):
        phi = V.random_trig_source(p.chart, rng)
        assert V.check_poincare_GF(p, sol.u, phi, stability=st, coarse=coarse).passed
        assert V.check_poincare_GF3(p, sol.u, phi, stability=st, coarse=coarse).passed


def test_gf_refuses_unstable():
    p = Problem(square(16), "u - u^3", "0")
    with pytest.raises(V.PreconditionFailed):
        V.check_poincare_GF(p, 0.0, 1.0)
    with pytest.raises(V.PreconditionFailed):
        V.check_poincare_GF3(p, 0.0, 1.0)


def test_gf3_consistency_with_cond(annulus_solution):
    p, sol = annulus_solution
    rep = V.check_poincare_GF3(p, sol.u, 1.0)
    assert abs(rep.values["tangential_term"]) <= 1e-10
    cond = V.check_cond(p, sol.u)
    assert rep.values["boundary_integral"] == pytest.approx(cond.values["integral"], abs=1e-8)
    pc = Problem(square(16), "u - u^3", "0")
    rep = V.check_poincare_GF3(pc, -1.0, "x*y")
    assert rep.values["lhs"] == 0.0 and rep.values["rhs"] == 0.0


def test_cond0_examples(annulus_solution):
    assert V.check_cond0(Problem(square(16), "u - u^3", "0"), 0.3).values["max_eigenvalue"] == 0.0
    p, sol = annulus_solution
    rep = V.check_cond0(p, sol.u)
    assert rep.passed and rep.values["max_eigenvalue"] == pytest.approx(-9.0, abs=1e-2)
    rep = V.check_cond0(Problem(annulus(16), "0", "0"), 0.0)
    assert not rep.passed and rep.values["max_eigenvalue"] == pytest.approx(1.0)


def test_cond_examples(annulus_solution):
    rep = V.check_cond(Problem(sphere_band(16), "u - u^3", "0"), "cos(ph)")
    assert rep.passed and rep.values["integral"] == 0.0
    p, sol = annulus_solution
    rep = V.check_cond(p, sol.u)
    assert not rep.passed
    assert rep.values["integral"] == pytest.approx(98.96, abs=0.5)
    assert rep.values["faces"]["r=high"] == pytest.approx(29.85, abs=0.1)
    assert rep.values["faces"]["r=low"] == pytest.approx(69.12, abs=0.1)
    alpha = Problem(sphere_band(16), "-8*u", "2*u")
    assert V.check_cond(alpha, "cos(ph)").passed


def test_cond_specialization_linear_robin():
    rng = np.random.default_rng(3)
    for alpha in (0.5, 2.0, 3.7):
        for f_src in ("u - u^3", "-8*u", "sin(u)"):
            p = Problem(sphere_band(16), f_src, f"{alpha!r}*u")
            integrand = V.cond_integrand_ast(p)
            f = expr.parse(f_src, ["u"])
            m = p.chart.dim
            for u, H in rng.uniform(-2, 2, (10, 2)):
                got = expr.evaluate(integrand, {"u": u, "H": H})
                fu = expr.evaluate(f, {"u": u})
                want = alpha * u * fu + (m - 1) * alpha ** 2 * u ** 2 * H + alpha ** 3 * u ** 2
                assert got == pytest.approx(want, abs=1e-12, rel=1e-12)


def test_ricci_checks():
    rep = V.check_ricci_nonnegative(square(16))
    assert rep.passed and rep.values["vanishes_identically"]
    rep = V.check_ricci_nonnegative(sphere_band(16))
    assert rep.passed and not rep.values["vanishes_identically"]


def test_classify_square_allen_cahn():
    p = Problem(square(16), "u - u^3", "0")
    outcomes, summary = V.classify_many(p, SolveOptions(init="random", seed=0), 20)
    assert summary["overall"] == "theorem-applies-and-holds"
    for o in outcomes:
        assert o.conclusion != "VIOLATION"
        assert o.ricci_vanishes and not o.smooth_boundary
        if o.converged and o.stability != "unstable":
            assert o.constant and o.cond0 and o.cond


def test_classify_sphere_band():
    p = Problem(sphere_band(16), "u - u^3", "0")
    outcomes, summary = V.classify_many(p, SolveOptions(init="random", seed=0), 5)
    assert summary["overall"] in ("theorem-applies-and-holds", "hypotheses-not-met")
    for o in outcomes:
        if o.converged:
            assert o.cond0 is False  # the inner circle has II > 0
            assert o.cond0_max_eigenvalue == pytest.approx(math.sin(0.6) * math.cos(0.6), rel=1e-6)


def test_classify_annulus():
    o = V.classify(annulus_problem(32), ANNULUS_OPTS)
    assert o.conclusion == "hypotheses-not-met"
    assert o.stability == "stable" and o.cond0 and not o.cond and not o.constant


def test_classify_no_solution():
    p = Problem(square(16), "u - u^3", "0")
    o = V.classify(p, SolveOptions(init="random", seed=0, max_steps=1))
    assert o.conclusion == "no-solution"


def _perturbed_problem(i, rng):
    """Random perturbations of the catalog families, cycling through four kinds."""
    kind = i % 4
    a, b = rng.uniform(0.3, 2.0), rng.uniform(0.3, 2.0)
    c = rng.uniform(-0.2, 0.2)
    if kind == 0:  # Neumann bistable on flat charts with boundary corners or none
        chart = (square, cylinder)[i % 8 // 4](16)
        return Problem(chart, f"{a!r}*u - {b!r}*u^3 + {c!r}", "0")
    if kind == 1:  # Neumann bistable on the positively curved band
        return Problem(sphere_band(16), f"{a!r}*u - {b!r}*u^3 + {c!r}", "0")
    if kind == 2:  # linear Robin data on the band
        d = rng.uniform(1.5, 3.0)
        return Problem(sphere_band(16), f"-{a!r}*u - {b!r}*u^3", f"{d!r}*u")
    d, e = rng.uniform(0.0, 2.0), rng.uniform(-0.5, 0.5)  # generic nonlinear Robin data
    return Problem((annulus, square)[i % 8 // 4](16), f"{a!r}*u - {b!r}*u^3 + {c!r}", f"{d!r}*u + {e!r}*u^3")


def test_falsification_alarm_random_problems():
    rng = np.random.default_rng(2024)
    seen = {}
    for i in range(50):
        p = _perturbed_problem(i, rng)
        o = V.classify(p, SolveOptions(init="random", seed=i, amplitude=0.8))
        seen[o.conclusion] = seen.get(o.conclusion, 0) + 1
        assert o.conclusion != "VIOLATION", (expr.to_source(p.f), expr.to_source(p.h), p.chart)
    assert seen.get("theorem-applies-and-holds", 0) >= 10
    assert seen.get("hypotheses-not-met", 0) >= 5


def test_convergence_study_contract():
    with pytest.raises(ValueError):
        V.convergence_study("x", lambda n: (1 / n, 1 / n ** 2), [16, 32])
    with pytest.raises(ValueError):
        V.convergence_study("x", lambda n: (1 / n, 1 / n ** 2), [16, 32, 48])
    rep = V.convergence_study("x", lambda n: (1 / n, 3 / n ** 2), [16, 32, 64])
    assert rep.order == pytest.approx(2.0) and rep.passed
    rep = V.convergence_study("x", lambda n: (1 / n, 3 / n), [16, 32, 64])
    assert not rep.passed
    assert V.convergence_order([0.1, 0.05], [1.0, 0.25]) is None


def test_constancy_measure():
    assert V.constancy(np.array([1.0, 1.0])) == 0.0
    assert V.constancy(np.array([0.0, 1.0])) == pytest.approx(0.5)
