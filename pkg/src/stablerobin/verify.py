"""Numerical checks of the rigidity theorem's identities, inequalities and hypotheses.

Identity checks (Bochner, boundary identity, Laplacian splitting) return
sup-norm residuals and are judged by convergence order under refinement.
Inequality checks return ``lhs``, ``rhs`` and ``slack = rhs - lhs`` and
pass when ``slack >= -eps_ineq``.  ``eps_ineq`` is calibrated from the
data: three times an observed discretization discrepancy (two consistent
discretizations of the same quantity, or the change between two grid
levels), plus a tiny absolute floor.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from . import boundary, expr
from .boundary import BoundaryFace, faces as chart_faces
from .disc import volume_integral
from .geometry import (MetricChart, ScalarField, grad_abs_grad_sq, grad_inner, grad_norm_sq, gradient,
                       hessian, hessian_norm_sq, interior_mask, laplace_beltrami, partials,
                       ricci_eigenvalues, ricci_quadratic)
from .solver import Problem, SolveOptions, Solution, residual_norms, solve_newton
from .stability import StabilityResult, is_stable

TAU_CRIT = 1e-6
ORDER_MIN = 1.7
CONSTANCY_TOL = 1e-4
RIC_TOL = 1e-6
EXACT_FLOOR = 1e-8  # identities that hold to solver tolerance at every level
ROBIN_TOL = 1e-6


class PreconditionFailed(ValueError):
    """A check was asked to run outside its hypotheses."""


@dataclass
class CheckReport:
    name: str
    passed: bool
    values: dict = field(default_factory=dict)
    tolerance: Optional[float] = None
    levels: list = field(default_factory=list)  # [{"n": .., "h": .., "value": ..}]
    order: Optional[float] = None
    exact: bool = False
    mask_fraction: Optional[float] = None
    notes: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        extra = ""
        if self.order is not None:
            extra = f" order={self.order:.3f}"
        elif self.exact:
            extra = " exact"
        main = ", ".join(f"{k}={_short(v)}" for k, v in self.values.items() if not isinstance(v, (dict, list, str)))
        return f"[{status}] {self.name}: {main}{extra}"


def _short(v):
    if isinstance(v, float):
        return f"{v:.6g}"
    return str(v)


def convergence_order(hs: Sequence[float], residuals: Sequence[float]) -> Optional[float]:
    """Least-squares slope of ``log(residual)`` against ``log(h)``."""
    hs = np.asarray(hs, dtype=float)
    rs = np.asarray(residuals, dtype=float)
    if len(hs) < 3 or np.any(rs <= 0):
        return None
    slope, _ = np.polyfit(np.log(hs), np.log(rs), 1)
    return float(slope)


def _field(chart: MetricChart, phi) -> ScalarField:
    return chart.field(phi)


# ---------------------------------------------------------------------------
# Identities


def bochner_residual(chart: MetricChart, phi, depth: int = 3) -> np.ndarray:
    """``½Δ|∇φ|² - |H_φ|² - <∇Δφ, ∇φ> - Ric(∇φ, ∇φ)`` on interior nodes."""
    phi = _field(chart, phi)
    lhs = 0.5 * laplace_beltrami(grad_norm_sq(phi)).values
    rhs = (hessian_norm_sq(hessian(phi)).values + grad_inner(laplace_beltrami(phi), phi).values
           + ricci_quadratic(phi).values)
    return (lhs - rhs)[interior_mask(chart, depth)]


def check_bochner(chart: MetricChart, phi, tol: float = 1e-3) -> CheckReport:
    r = float(np.max(np.abs(bochner_residual(chart, phi))))
    return CheckReport("bochner", r <= tol, {"residual": r}, tolerance=tol,
                       levels=[{"n": list(chart.resolution), "h": max(chart.grid.spacing), "value": r}])


def check_laplacian_split(chart: MetricChart, w, tol: float = 1e-3) -> CheckReport:
    per_face = boundary.check_laplacian_split(chart, w)
    r = max(per_face.values())
    return CheckReport("sss", r <= tol, {"residual": r, "faces": per_face}, tolerance=tol,
                       levels=[{"n": list(chart.resolution), "h": max(chart.grid.spacing), "value": r}])


def boundary_identity_terms(problem: Problem, w) -> dict[str, tuple[np.ndarray, np.ndarray, np.ndarray]]:
    """Per face: ``(lhs, rhs, robin_residual)`` of the boundary identity.

    ``lhs = ½ ∂_ν|∇w|²`` and
    ``rhs = II(∇̃w, ∇̃w) - h'(w)|∇̃w|² - h(w) H_w(ν, ν)``.
    """
    chart = problem.chart
    w = _field(chart, w)
    H = hessian(w)
    out = {}
    for face in problem.faces:
        wf = face.restrict(w)
        tg = boundary.tangential_gradient(face, w)
        tn = np.einsum("...ij,...i,...j->...", face.g, tg, tg)
        lhs = boundary.half_normal_derivative_grad_sq(face, w, H)
        rhs = (boundary.second_form_on(face, tg) - problem.dh_of(wf) * tn
               - problem.h_of(wf) * boundary.hessian_normal(face, w, H))
        robin = boundary.normal_derivative(face, w) + problem.h_of(wf)
        out[face.label] = (lhs, rhs, robin)
    return out


def check_boundary_identity(problem: Problem, w, tol: float = 1e-3, robin_tol: float = ROBIN_TOL) -> CheckReport:
    terms = boundary_identity_terms(problem, w)
    faces = {f.label: f for f in problem.faces}
    per_face, robin_max = {}, 0.0
    for label, (lhs, rhs, robin) in terms.items():
        mask = faces[label].smooth_mask
        robin_max = max(robin_max, float(np.max(np.abs(robin[mask]))))
        per_face[label] = {"residual": float(np.max(np.abs((lhs - rhs)[mask]))),
                           "lhs_mean": float(np.mean(lhs[mask])), "rhs_mean": float(np.mean(rhs[mask]))}
    if robin_max > robin_tol:
        raise PreconditionFailed(f"Robin residual {robin_max:.3e} exceeds {robin_tol:.1e}; "
                                 "the boundary identity only holds for Robin fields")
    r = max(v["residual"] for v in per_face.values())
    return CheckReport("pz", r <= tol, {"residual": r, "robin_residual": robin_max, "faces": per_face},
                       tolerance=tol, levels=[{"n": list(problem.chart.resolution),
                                               "h": max(problem.chart.grid.spacing), "value": r}])


# ---------------------------------------------------------------------------
# Inequalities


def check_hessian_gradient(chart: MetricChart, phi, tau: float = TAU_CRIT) -> CheckReport:
    """Pointwise ``|H_φ|² >= |∇|∇φ||²`` away from critical points of φ.

    The tolerance is three times the largest discrepancy between two
    discretizations of ``|∇|∇φ||²``: ``|∇|∇φ|²|²/(4|∇φ|²)`` (checked) and
    ``|H_φ(∇φ, ·)|²/|∇φ|²`` (equal in the continuum).
    """
    phi = _field(chart, phi)
    H = hessian(phi)
    hn = hessian_norm_sq(H).values
    gg, mask = grad_abs_grad_sq(phi, tau)
    X = gradient(phi)
    HX = np.einsum("...ij,...j->...i", H.values, X)  # covariant H(∇φ, ·)
    q = grad_norm_sq(phi).values
    with np.errstate(divide="ignore", invalid="ignore"):
        alt = np.where(mask, 0.0, np.einsum("...ij,...i,...j->...", chart.ginv, HX, HX) / np.where(mask, 1.0, q))
    keep = ~mask
    diff = hn - gg.values
    scale = float(np.max(hn)) if hn.size else 0.0
    eps = 3.0 * float(np.max(np.abs(gg.values - alt)[keep], initial=0.0)) + 1e-10 * (1.0 + scale)
    mn = float(np.min(diff[keep])) if keep.any() else 0.0
    return CheckReport("hessian_gradient", mn >= -eps, {"min": mn, "scale": scale}, tolerance=eps,
                       mask_fraction=float(mask.mean()))


def _masked_difference(u: ScalarField, tau: float):
    hn = hessian_norm_sq(hessian(u)).values
    gg, mask = grad_abs_grad_sq(u, tau)
    d = np.where(mask, 0.0, hn - gg.values)
    return d, mask


def poincare_terms(problem: Problem, u, phi, tau: float = TAU_CRIT) -> dict:
    """All integrals entering the two Poincaré-type inequalities."""
    chart = problem.chart
    u = _field(chart, u)
    phi = _field(chart, phi)
    phi2 = phi.map(np.square)
    q = grad_norm_sq(u)
    Hu = hessian(u)
    d, mask = _masked_difference(u, tau)
    interior = volume_integral(chart, (ricci_quadratic(u).values + d) * phi2.values)
    rhs_vol = volume_integral(chart, q.values * grad_norm_sq(phi).values)
    m = chart.dim

    bd_gf = bd_gf3 = tang = 0.0
    for face in problem.faces:
        uf = face.restrict(u)
        pf = face.restrict(phi2)
        hval, dh, fval = problem.h_of(uf), problem.dh_of(uf), problem.f_of(uf)
        tg = boundary.tangential_gradient(face, u)
        tn = np.einsum("...ij,...i,...j->...", face.g, tg, tg)
        gf = boundary.half_normal_derivative_grad_sq(face, u, Hu) + dh * face.restrict(q)
        gf3 = (boundary.second_form_on(face, tg) - dh * tn + hval * fval
               + (m - 1) * hval ** 2 * boundary.mean_curvature(face) + dh * hval ** 2)
        bd_gf += boundary.surface_integral(face, gf * pf)
        bd_gf3 += boundary.surface_integral(face, gf3 * pf)
        tang += boundary.surface_integral(face, hval * boundary.tangential_inner(face, u, phi2))
    return {"interior": interior, "boundary_gf": bd_gf, "boundary_gf3": bd_gf3, "rhs_volume": rhs_vol,
            "tangential": tang, "mask_fraction": float(mask.mean())}


def _require_stable(problem: Problem, u, stability: Optional[StabilityResult]) -> StabilityResult:
    stability = stability or is_stable(problem, u)
    if stability.verdict == "unstable":
        raise PreconditionFailed(f"solution is unstable (lambda_min={stability.lambda_min:.3e}); "
                                 "the inequality is only asserted for stable solutions")
    return stability


def _ineq_tolerance(value: float, coarse_value: Optional[float], scale: float, eps: Optional[float]) -> float:
    if eps is not None:
        return eps
    floor = 1e-8 * (1.0 + abs(scale))
    if coarse_value is None:
        return floor
    return 3.0 * abs(value - coarse_value) + floor


def check_poincare_GF(problem: Problem, u, phi, stability: Optional[StabilityResult] = None,
                      eps_ineq: Optional[float] = None, coarse: Optional[tuple] = None) -> CheckReport:
    """``lhs <= rhs`` for the interior/boundary weighted inequality.

    ``coarse`` is an optional ``(problem, u)`` pair at half resolution used
    to calibrate the tolerance from the change in slack.
    """
    stability = _require_stable(problem, u, stability)
    t = poincare_terms(problem, u, phi)
    lhs = t["interior"] - t["boundary_gf"]
    rhs = t["rhs_volume"]
    slack = rhs - lhs
    coarse_slack = None
    if coarse is not None:
        tc = poincare_terms(coarse[0], coarse[1], phi)
        coarse_slack = tc["rhs_volume"] - (tc["interior"] - tc["boundary_gf"])
    eps = _ineq_tolerance(slack, coarse_slack, max(abs(lhs), abs(rhs)), eps_ineq)
    return CheckReport("gf", slack >= -eps, {"lhs": lhs, "rhs": rhs, "slack": slack}, tolerance=eps,
                       mask_fraction=t["mask_fraction"])


def check_poincare_GF3(problem: Problem, u, phi, stability: Optional[StabilityResult] = None,
                       eps_ineq: Optional[float] = None, coarse: Optional[tuple] = None) -> CheckReport:
    """Refined inequality with curvature and Robin boundary terms."""
    stability = _require_stable(problem, u, stability)
    t = poincare_terms(problem, u, phi)
    lhs = t["interior"] - t["boundary_gf3"]
    rhs = t["rhs_volume"] - t["tangential"]
    slack = rhs - lhs
    coarse_slack = None
    if coarse is not None:
        tc = poincare_terms(coarse[0], coarse[1], phi)
        coarse_slack = (tc["rhs_volume"] - tc["tangential"]) - (tc["interior"] - tc["boundary_gf3"])
    eps = _ineq_tolerance(slack, coarse_slack, max(abs(lhs), abs(rhs)), eps_ineq)
    return CheckReport("gf3", slack >= -eps,
                       {"lhs": lhs, "rhs": rhs, "slack": slack, "boundary_integral": t["boundary_gf3"],
                        "tangential_term": t["tangential"]},
                       tolerance=eps, mask_fraction=t["mask_fraction"])


# ---------------------------------------------------------------------------
# Hypotheses


def check_cond0(problem: Problem, u, eps: float = 1e-8) -> CheckReport:
    """Largest eigenvalue of ``II - h'(u) g̃`` over all face nodes."""
    u = _field(problem.chart, u)
    worst, worst_rel, min_gt = -math.inf, -math.inf, math.inf
    per_face = {}
    for face in problem.faces:
        dh = problem.dh_of(face.restrict(u))
        gt = face.induced_metric
        A = boundary.second_fundamental_form(face) - dh[..., None, None] * gt
        mask = face.smooth_mask
        ev = np.linalg.eigvalsh(A)[..., -1][mask]
        # eigenvalues relative to g̃ (coordinate independent)
        Li = np.linalg.inv(np.linalg.cholesky(gt))
        rel = np.linalg.eigvalsh(np.einsum("...ia,...ab,...jb->...ij", Li, A, Li))[..., -1][mask]
        per_face[face.label] = float(ev.max())
        worst = max(worst, float(ev.max()))
        worst_rel = max(worst_rel, float(rel.max()))
        min_gt = min(min_gt, float(np.linalg.eigvalsh(gt)[..., 0][mask].min()))
    return CheckReport("cond0", worst <= eps,
                       {"max_eigenvalue": worst, "max_relative_eigenvalue": worst_rel,
                        "min_induced_metric_eigenvalue": min_gt, "faces": per_face}, tolerance=eps)


def cond_integrand_ast(problem: Problem) -> expr.Ast:
    """``h f + (m-1) h² H + h' h²`` as an expression in ``u`` and ``H``."""
    u = problem.var
    m = problem.chart.dim
    h, f, dh = problem.h, problem.f, problem.dh
    two = expr.Num(2.0)
    hh = expr.power(h, two)
    return expr.add(expr.add(expr.mul(h, f), expr.mul(expr.mul(expr.Num(float(m - 1)), hh), expr.Var("H"))),
                    expr.mul(dh, hh))


def check_cond(problem: Problem, u, eps: float = 1e-8) -> CheckReport:
    """``∮ (h f + (m-1) h² H + h' h²) dσ <= eps * |∂Ω|``."""
    u = _field(problem.chart, u)
    integrand = cond_integrand_ast(problem)
    per_face = {}
    total = 0.0
    for face in problem.faces:
        vals = expr.evaluate(integrand, {problem.var: face.restrict(u), "H": boundary.mean_curvature(face)})
        vals = np.broadcast_to(vals, face.quad_weights.shape)
        per_face[face.label] = boundary.surface_integral(face, vals)
        total += per_face[face.label]
    measure = boundary.boundary_measure(problem.chart)
    return CheckReport("cond", total <= eps * measure,
                       {"integral": total, "boundary_measure": measure, "faces": per_face,
                        "integrand": expr.to_source(integrand)}, tolerance=eps * measure)


def check_ricci_nonnegative(chart: MetricChart, eps: float = RIC_TOL) -> CheckReport:
    ev = ricci_eigenvalues(chart)
    mn, mx = float(ev.min()), float(np.abs(ev).max())
    return CheckReport("ricci_nonnegative", mn >= -eps, {"min_eigenvalue": mn, "max_abs_eigenvalue": mx,
                                                         "vanishes_identically": mx <= eps}, tolerance=eps)


# ---------------------------------------------------------------------------
# Classification


@dataclass
class ClassificationOutcome:
    conclusion: str  # theorem-applies-and-holds | hypotheses-not-met | VIOLATION | no-solution
    converged: bool
    stability: Optional[str] = None
    lambda_min: Optional[float] = None
    cond0: Optional[bool] = None
    cond0_max_eigenvalue: Optional[float] = None
    cond: Optional[bool] = None
    cond_integral: Optional[float] = None
    ricci_nonnegative: Optional[bool] = None
    ricci_min_eigenvalue: Optional[float] = None
    ricci_vanishes: Optional[bool] = None
    constancy: Optional[float] = None
    constant: Optional[bool] = None
    smooth_boundary: bool = True
    seed: Optional[int] = None
    newton_steps: int = 0
    solution_range: Optional[list] = None
    notes: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)


def constancy(u) -> float:
    v = getattr(u, "values", u)
    return float((v.max() - v.min()) / (1.0 + np.abs(v).max()))


def classify_solution(problem: Problem, sol: Solution) -> tuple[ClassificationOutcome, StabilityResult | None]:
    chart = problem.chart
    out = ClassificationOutcome("no-solution", sol.converged, seed=sol.seed, newton_steps=sol.steps,
                                smooth_boundary=boundary.is_smooth_boundary(chart))
    if not out.smooth_boundary:
        out.notes.append("non-smooth boundary: box corners lie outside the smooth-boundary hypothesis")
    if sol.pinned_mean:
        out.notes.append("singular Jacobian: mean of the Newton update pinned (constant kernel)")
    if not sol.converged:
        return out, None
    u = sol.u
    st = is_stable(problem, u)
    ric = check_ricci_nonnegative(chart)
    c0 = check_cond0(problem, u)
    c = check_cond(problem, u)
    out.stability = st.verdict
    out.lambda_min = st.lambda_min
    out.ricci_nonnegative = ric.passed
    out.ricci_min_eigenvalue = ric.values["min_eigenvalue"]
    out.ricci_vanishes = ric.values["vanishes_identically"]
    out.cond0 = c0.passed
    out.cond0_max_eigenvalue = c0.values["max_eigenvalue"]
    out.cond = c.passed
    out.cond_integral = c.values["integral"]
    out.constancy = constancy(u)
    out.constant = out.constancy <= CONSTANCY_TOL
    out.solution_range = [float(u.values.min()), float(u.values.max())]
    if out.ricci_vanishes:
        out.notes.append("Ric vanishes identically: the constancy step relies on the flat-space case")
    hypotheses = st.passes and ric.passed and c0.passed and c.passed
    if hypotheses:
        out.conclusion = "theorem-applies-and-holds" if out.constant else "VIOLATION"
    else:
        out.conclusion = "hypotheses-not-met"
    return out, st


def classify(problem: Problem, opts: Optional[SolveOptions] = None) -> ClassificationOutcome:
    """Solve, then test stability, Ric >= 0, both boundary hypotheses and constancy."""
    sol = solve_newton(problem, opts or SolveOptions())
    return classify_solution(problem, sol)[0]


_RANK = {"VIOLATION": 3, "theorem-applies-and-holds": 2, "hypotheses-not-met": 1, "no-solution": 0}


def summarize_outcomes(outcomes: Sequence[ClassificationOutcome]) -> dict:
    counts = {}
    for o in outcomes:
        counts[o.conclusion] = counts.get(o.conclusion, 0) + 1
    overall = max((o.conclusion for o in outcomes), key=_RANK.get, default="no-solution")
    stable = [o for o in outcomes if o.converged and o.stability != "unstable"]
    return {"overall": overall, "runs": len(outcomes), "counts": counts,
            "stable_runs": len(stable), "stable_all_constant": all(o.constant for o in stable)}


def classify_many(problem: Problem, opts: SolveOptions, runs: int) -> tuple[list[ClassificationOutcome], dict]:
    """Classify from ``runs`` seeds ``opts.seed, opts.seed + 1, ...``."""
    outcomes = []
    for i in range(runs):
        o = SolveOptions(**{**asdict(opts), "seed": opts.seed + i})
        outcomes.append(classify(problem, o))
    return outcomes, summarize_outcomes(outcomes)


# ---------------------------------------------------------------------------
# Refinement studies


def convergence_study(name: str, residual_at: Callable[[int], tuple[float, float]],
                      resolutions: Sequence[int], order_min: float = ORDER_MIN) -> CheckReport:
    """Run ``residual_at(n) -> (h, residual)`` over doubling resolutions.

    Passes iff the fitted order is at least ``order_min``; residuals that
    are zero to roundoff at every level count as exact and pass.
    """
    resolutions = list(resolutions)
    if len(resolutions) < 3:
        raise ValueError("a convergence study needs at least 3 resolutions")
    for a, b in zip(resolutions, resolutions[1:]):
        if b != 2 * a:
            raise ValueError(f"resolutions must double: {resolutions}")
    levels = []
    for n in resolutions:
        h, r = residual_at(n)
        levels.append({"n": n, "h": h, "value": r})
    hs = [lv["h"] for lv in levels]
    rs = [lv["value"] for lv in levels]
    exact = all(r <= EXACT_FLOOR for r in rs)
    order = None if exact else convergence_order(hs, rs)
    passed = exact or (order is not None and order >= order_min)
    return CheckReport(name, passed, {"finest_residual": rs[-1]}, tolerance=order_min, levels=levels,
                       order=order, exact=exact)


def bochner_study(chart: MetricChart, phi, resolutions) -> CheckReport:
    def at(n):
        c = chart.with_resolution(n)
        return max(c.grid.spacing), float(np.max(np.abs(bochner_residual(c, phi))))

    return convergence_study("bochner", at, resolutions)


def split_study(chart: MetricChart, w, resolutions) -> CheckReport:
    def at(n):
        c = chart.with_resolution(n)
        return max(c.grid.spacing), max(boundary.check_laplacian_split(c, w).values())

    return convergence_study("sss", at, resolutions)


def boundary_identity_study(problem: Problem, opts: SolveOptions, resolutions) -> CheckReport:
    """Boundary identity on the Newton solution at each resolution."""

    def at(n):
        p = problem.with_resolution(n)
        sol = solve_newton(p, opts)
        if not sol.converged:
            raise PreconditionFailed(f"Newton did not converge at n={n}")
        rep = check_boundary_identity(p, sol.u)
        return max(p.chart.grid.spacing), rep.values["residual"]

    return convergence_study("pz", at, resolutions)


def solution_error_study(problem: Problem, opts: SolveOptions, exact, resolutions) -> CheckReport:
    """Sup error of the Newton solution against a manufactured solution."""

    def at(n):
        p = problem.with_resolution(n)
        sol = solve_newton(p, opts)
        if not sol.converged:
            raise PreconditionFailed(f"Newton did not converge at n={n}")
        return max(p.chart.grid.spacing), float(np.max(np.abs(sol.u.values - p.chart.field(exact).values)))

    return convergence_study("solution_error", at, resolutions)


def random_trig_source(chart: MetricChart, rng: np.random.Generator, terms: int = 3) -> str:
    """A smooth random trigonometric polynomial over the chart coordinates.

    Periodic coordinates get integer wave numbers so the field is smooth
    across the seam.
    """
    parts = []
    for _ in range(terms):
        amp = rng.uniform(-1.0, 1.0)
        phase = rng.uniform(0.0, 2 * np.pi)
        arg = []
        for name, (a, b), per in zip(chart.coords, chart.box, chart.periodic):
            k = int(rng.integers(0, 3)) if per else rng.uniform(0.0, 1.5)
            if k:
                arg.append(f"{float(2 * np.pi * k / (b - a))!r}*({name} - {a!r})")
        body = " + ".join(arg) if arg else "0"
        parts.append(f"{amp!r}*cos({body} + {phase!r})")
    return " + ".join(parts)
