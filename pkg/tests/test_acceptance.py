"""Acceptance criteria 1-10, one test each.

Every test prints a ``[criterion k] PASS|FAIL`` line; the lines are also
collected into an "acceptance criteria" section at the end of the pytest
run.  Criteria 3, 4 and 10 go through the built-in catalog and the CLI
runner, exactly as ``stablerobin classify --config <name>`` would.
"""

import json

import numpy as np

from stablerobin import cli, expr
from stablerobin import verify as V
from stablerobin.config import load_config
from stablerobin.solver import Problem, solve_newton
from stablerobin.stability import is_stable

from conftest import ANNULUS_OPTS, annulus, annulus_problem, cylinder, sphere_band, square
from exprgen import MALFORMED, derivative_agreement

LEVELS = [16, 32, 64]


def _study_ok(rep):
    return rep.passed and (rep.exact or (rep.order or 0) >= V.ORDER_MIN) and rep.levels[-1]["value"] <= 1e-3


def _study_text(rep):
    order = "exact" if rep.exact else f"order {rep.order:.2f}"
    return f"{rep.name}: {order}, n=64 residual {rep.levels[-1]['value']:.2e}"


def test_criterion_01_identity_convergence(verdict):
    boch = V.bochner_study(sphere_band(16), "cos(th)", LEVELS)
    pz = V.boundary_identity_study(annulus_problem(16), ANNULUS_OPTS, LEVELS)
    sss = V.split_study(annulus(16), "log(r)", LEVELS)
    p = annulus_problem(128)
    sol = solve_newton(p, ANNULUS_OPTS)
    faces = V.check_boundary_identity(p, sol.u).values["faces"]
    oracle = {"r=high": -1 / 8, "r=low": 1.0}
    errs = {f"{lab}.{side}": abs(faces[lab][f"{side}_mean"] - want)
            for lab, want in oracle.items() for side in ("lhs", "rhs")}
    ok = all(_study_ok(r) for r in (boch, pz, sss)) and max(errs.values()) <= 1e-3
    detail = "; ".join(_study_text(r) for r in (boch, pz, sss))
    verdict(1, ok, f"identity convergence: {detail}; n=128 oracle max error {max(errs.values()):.1e}")


def test_criterion_02_stability_eigenvalues(verdict):
    p = Problem(square(64), "u - u^3", "0")
    zero, one = is_stable(p, 0.0).lambda_min, is_stable(p, 1.0).lambda_min
    ok = abs(zero + 1) <= 0.05 and abs(one - 2) <= 0.05
    verdict(2, ok, f"stability eigenvalues: lambda(u=0) = {zero:.5f}, lambda(u=1) = {one:.5f}")


def test_criterion_03_rigidity_reproduction(verdict, tmp_path):
    cfg = load_config("euclid-square-allencahn")
    assert cfg.runs == 20
    rep = cli.run("classify", cfg, tmp_path)
    cls = rep.classification
    stable = [o for o in cls["outcomes"] if o["converged"] and o["stability"] != "unstable"]
    ok = (bool(stable) and all(o["constancy"] <= 1e-4 and o["cond0"] and o["cond"] for o in stable)
          and cls["overall"] != "VIOLATION" and not rep.errors)
    worst = max((o["constancy"] for o in stable), default=float("nan"))
    verdict(3, ok, f"rigidity: {len(stable)}/{cls['runs']} stable, max relative variation {worst:.1e}, "
                   f"overall {cls['overall']}")


def test_criterion_04_hypothesis_failure_control(verdict, tmp_path):
    cfg = load_config("euclid-annulus-logr-robin")
    rep = cli.run("classify", cfg, tmp_path)
    o = rep.classification["outcomes"][0]
    err = V.solution_error_study(cfg.problem, cfg.solve, cfg.exact, LEVELS)
    c0 = V.check_cond0(cfg.problem, solve_newton(cfg.problem, cfg.solve).u)
    bound = -9 * c0.values["min_induced_metric_eigenvalue"]
    ok = (o["converged"] and (err.order or 0) >= 1.7 and o["lambda_min"] >= -1e-6
          and c0.passed and c0.values["max_relative_eigenvalue"] <= bound
          and not o["cond"] and abs(o["cond_integral"] - 98.96) <= 0.5
          and o["conclusion"] == "hypotheses-not-met")
    verdict(4, ok, f"hypothesis failure: error order {err.order:.2f}, lambda_min {o['lambda_min']:.4g}, "
                   f"cond0 max {c0.values['max_relative_eigenvalue']:.4f} (bound {bound:.1f}), "
                   f"cond integral {o['cond_integral']:.3f}, outcome {o['conclusion']}")


def test_criterion_05_poincare_gf(verdict, annulus_solution):
    p, sol = annulus_solution
    st = is_stable(p, sol.u)
    coarse_p = annulus_problem(32)
    coarse = (coarse_p, solve_newton(coarse_p, ANNULUS_OPTS).u)
    one = V.check_poincare_GF(p, sol.u, 1.0, stability=st, coarse=coarse)
    rng = np.random.default_rng(0)
    rand = [V.check_poincare_GF(p, sol.u, V.random_trig_source(p.chart, rng), stability=st, coarse=coarse)
            for _ in range(10)]
    lhs, rhs, slack = one.values["lhs"], one.values["rhs"], one.values["slack"]
    worst = min(r.values["slack"] + r.tolerance for r in rand)
    ok = abs(lhs + 96.60) <= 0.5 and rhs == 0.0 and slack > 0 and all(r.passed for r in rand)
    verdict(5, ok, f"GF: phi=1 lhs {lhs:.3f}, rhs {rhs}, slack {slack:.3f}; "
                   f"10 random phi min slack+eps {worst:.3e}")


def test_criterion_06_hessian_gradient_inequality(verdict):
    charts = {name: load_config(name).chart for name in
              ("euclid-square-allencahn", "euclid-annulus-logr-robin", "sphere-band-allencahn",
               "cylinder-neumann", "sphere-band-robin-alpha")}
    rng = np.random.default_rng(6)
    failures, tested = [], 0
    for name, chart in charts.items():
        for _ in range(20):
            rep = V.check_hessian_gradient(chart, V.random_trig_source(chart, rng))
            tested += 1
            if not rep.passed:
                failures.append((name, rep.values["min"]))
    lin = V.check_hessian_gradient(square(64), "2*x - 3*y")
    eq = abs(lin.values["min"])
    ok = not failures and eq <= 1e-10
    verdict(6, ok, f"Hessian-gradient: {tested - len(failures)}/{tested} random fields pass, "
                   f"linear equality residual {eq:.1e}")


def test_criterion_07_curvature_oracle(verdict):
    sb = sphere_band(64)
    err = float(np.abs(sb.ric - sb.g).max())
    flat = max(float(np.abs(square(64).ric).max()), float(np.abs(cylinder(64).ric).max()))
    ok = err <= 1e-6 and flat <= 1e-8
    verdict(7, ok, f"curvature: sphere band |Ric - g| {err:.1e}, Euclidean/cylinder |Ric| {flat:.1e}")


def test_criterion_08_linear_robin_specialization(verdict):
    rng = np.random.default_rng(8)
    alpha = float(rng.uniform(0.5, 3.0))
    f_src = "u - u^3"
    p = Problem(sphere_band(16), f_src, f"{alpha!r}*u")
    integrand = V.cond_integrand_ast(p)
    f = expr.parse(f_src, ["u"])
    m = p.chart.dim
    worst = 0.0
    for u, H in rng.uniform(-2, 2, (10, 2)):
        got = expr.evaluate(integrand, {"u": u, "H": H})
        want = alpha * u * expr.evaluate(f, {"u": u}) + (m - 1) * alpha ** 2 * u ** 2 * H + alpha ** 3 * u ** 2
        worst = max(worst, abs(got - want) / max(1.0, abs(want)))
    verdict(8, worst <= 1e-12, f"linear Robin specialization: alpha={alpha:.4f}, max deviation {worst:.1e}")


def test_criterion_09_expression_layer(verdict):
    checked, failures = derivative_agreement(np.random.default_rng(9), 100)
    wrong = []
    for src, offset, fragment in MALFORMED:
        try:
            expr.parse(src, ["u"])
            wrong.append(src)
        except expr.ParseError as exc:
            if exc.offset != offset or fragment not in f"{exc.message} {exc.expected}":
                wrong.append(src)
    ok = not failures and checked >= 100 and not wrong
    verdict(9, ok, f"expressions: {checked} derivative points agree ({len(failures)} failures) on 100 trees; "
                   f"{len(MALFORMED) - len(wrong)}/{len(MALFORMED)} malformed offsets exact")


def test_criterion_10_determinism(verdict, tmp_path):
    texts = []
    for k in range(2):
        cfg = load_config("euclid-square-allencahn")
        cfg.runs = 5
        cli.run("classify", cfg, tmp_path / str(k), normalize=True)
        texts.append((tmp_path / str(k) / "report.json").read_bytes())
    assert "timings" not in json.loads(texts[0])
    verdict(10, texts[0] == texts[1], f"determinism: normalized classify reports byte-identical "
                                      f"({len(texts[0])} bytes)")
