"""Damped Newton solver for ``Δu + f(u) = 0`` in Ω, ``∂_ν u + h(u) = 0`` on ∂Ω.

Interior nodes carry the equation; nodes on a face carry the Robin
condition (summed over faces at box corners).  The Laplacian is the trace
form used by :func:`geometry.laplace_beltrami`, assembled once as a sparse
matrix, so residual and Jacobian are exactly consistent.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import boundary, disc, expr
from .geometry import MetricChart, ScalarField, grad_inner

log = logging.getLogger(__name__)


class LinearSolveFailure(RuntimeError):
    """Newton Jacobian numerically singular and not of the pinned-mean kind."""


class ExpressionError(ValueError):
    """A nonlinearity failed to evaluate; carries the offending node."""


@dataclass
class Problem:
    """``Δu + f(u) = 0`` in Ω, ``∂_ν u + h(u) = 0`` on ∂Ω."""

    chart: MetricChart
    f: expr.Ast
    h: expr.Ast
    label: str = ""
    var: str = "u"

    def __post_init__(self):
        if isinstance(self.f, str):
            self.f = expr.parse(self.f, [self.var])
        if isinstance(self.h, str):
            self.h = expr.parse(self.h, [self.var])
        for name, a in (("f", self.f), ("h", self.h)):
            extra = expr.variables(a) - {self.var}
            if extra:
                raise ValueError(f"{name} may depend on {self.var!r} only, found {sorted(extra)}")
        self.df = expr.differentiate(self.f, self.var)
        self.dh = expr.differentiate(self.h, self.var)
        self.faces = boundary.faces(self.chart)

    def _eval(self, a: expr.Ast, u: np.ndarray, name: str) -> np.ndarray:
        try:
            return np.broadcast_to(np.asarray(expr.evaluate(a, {self.var: u}), dtype=float), np.shape(u)).copy()
        except expr.ExprDomainError as exc:
            where = ""
            if np.ndim(u) and np.size(u) == self.chart.grid.size:
                # locate the first failing node by pointwise evaluation
                for idx, val in np.ndenumerate(np.reshape(u, self.chart.grid.shape)):
                    try:
                        expr.evaluate(a, {self.var: float(val)})
                    except expr.ExprDomainError:
                        where = f" at node {idx} (u={val:.6g})"
                        break
            raise ExpressionError(f"{name}: {exc}{where}") from exc

    def f_of(self, u):
        return self._eval(self.f, u, "f")

    def h_of(self, u):
        return self._eval(self.h, u, "h")

    def df_of(self, u):
        return self._eval(self.df, u, "f'")

    def dh_of(self, u):
        return self._eval(self.dh, u, "h'")

    def with_chart(self, chart: MetricChart) -> "Problem":
        return Problem(chart, self.f, self.h, self.label, self.var)

    def with_resolution(self, n) -> "Problem":
        return self.with_chart(self.chart.with_resolution(n))


@dataclass
class SolveOptions:
    init: object = 0.0  # constant, expression over the chart coordinates, or "random"
    amplitude: float = 1.0  # for random initial guesses
    seed: int = 0
    noise: float = 0.0  # seeded uniform noise added to a deterministic init
    tol_res: float = 1e-8
    max_steps: int = 50
    min_step: float = 2.0 ** -10


@dataclass
class Solution:
    u: ScalarField
    steps: int
    interior_residual: float
    boundary_residual: float
    converged: bool
    pinned_mean: bool = False
    history: list = field(default_factory=list)
    seed: Optional[int] = None


# ---------------------------------------------------------------------------
# Discrete operators


class _Discretization:
    """Sparse Laplacian and normal-derivative rows for one chart."""

    def __init__(self, chart: MetricChart):
        self.chart = chart
        grid = chart.grid
        m = chart.dim
        gi = chart.ginv.reshape(-1, m, m)
        D1 = [disc.partial_operator(grid, k, 1) for k in range(m)]
        L = sp.csr_matrix((grid.size, grid.size))
        for i in range(m):
            L = L + sp.diags(gi[:, i, i]) @ disc.partial_operator(grid, i, 2)
            for j in range(i + 1, m):
                L = L + sp.diags(2 * gi[:, i, j]) @ (D1[i] @ D1[j])
        contracted = np.einsum("nij,nkij->nk", gi, chart.gamma.reshape(-1, m, m, m))
        for k in range(m):
            L = L - sp.diags(contracted[:, k]) @ D1[k]
        self.L = L.tocsr()

        faces = boundary.faces(chart)
        on_face = np.zeros(grid.size, dtype=bool)
        N = sp.csr_matrix((grid.size, grid.size))
        for face in faces:
            idx = face.node_indices.ravel()
            on_face[idx] = True
            nu = face.normal.reshape(-1, m)
            rowsel = sp.csr_matrix((np.ones(idx.size), (idx, idx)), shape=(grid.size, grid.size))
            full = np.zeros((grid.size, m))
            full[idx] = nu
            # accumulate ν^j D_j on this face's rows (corners sum their faces)
            N = N + rowsel @ sum(sp.diags(full[:, j]) @ D1[j] for j in range(m))
        self.N = N.tocsr()
        self.boundary = on_face
        self.interior = ~on_face
        # face multiplicity for summing h at corners
        self.multiplicity = np.zeros(grid.size)
        for face in faces:
            np.add.at(self.multiplicity, face.node_indices.ravel(), 1.0)


_DISC_CACHE: dict[int, _Discretization] = {}


def _discretization(chart: MetricChart) -> _Discretization:
    key = id(chart)
    d = _DISC_CACHE.get(key)
    if d is None or d.chart is not chart:
        d = _Discretization(chart)
        _DISC_CACHE.clear()
        _DISC_CACHE[key] = d
    return d


def _residual_vector(problem: Problem, u: np.ndarray, d: _Discretization) -> np.ndarray:
    F = d.L @ u + problem.f_of(u)
    Fb = d.N @ u + d.multiplicity * problem.h_of(u)
    return np.where(d.interior, F, Fb)


def _jacobian(problem: Problem, u: np.ndarray, d: _Discretization) -> sp.csr_matrix:
    Ri = sp.diags(d.interior.astype(float))
    Rb = sp.diags(d.boundary.astype(float))
    J = Ri @ (d.L + sp.diags(problem.df_of(u))) + Rb @ (d.N + sp.diags(d.multiplicity * problem.dh_of(u)))
    return J.tocsc()


def residual(problem: Problem, u) -> tuple[ScalarField, dict[str, np.ndarray]]:
    """Interior field ``Δu + f(u)`` and per-face ``∂_ν u + h(u)``.

    The interior field is reported at every node; use the solver's row
    layout (interior nodes only) when judging convergence.
    """
    from .geometry import laplace_beltrami

    u = problem.chart.field(u)
    interior = laplace_beltrami(u).values + problem.f_of(u.values)
    faces_res = {}
    for face in problem.faces:
        faces_res[face.label] = boundary.normal_derivative(face, u) + problem.h_of(face.restrict(u))
    return ScalarField(problem.chart, interior), faces_res


def residual_norms(problem: Problem, u) -> tuple[float, float]:
    """Sup norms of the discrete system rows (interior, boundary)."""
    d = _discretization(problem.chart)
    F = _residual_vector(problem, problem.chart.field(u).values.ravel(), d)
    ri = float(np.max(np.abs(F[d.interior]))) if d.interior.any() else 0.0
    rb = float(np.max(np.abs(F[d.boundary]))) if d.boundary.any() else 0.0
    return ri, rb


# ---------------------------------------------------------------------------


def initial_guess(problem: Problem, opts: SolveOptions) -> np.ndarray:
    chart = problem.chart
    rng = np.random.default_rng(opts.seed)
    if isinstance(opts.init, str) and opts.init == "random":
        u0 = opts.amplitude * rng.uniform(-1.0, 1.0, chart.grid.shape)
    else:
        u0 = chart.field(opts.init).values.copy()
        if opts.noise:
            u0 = u0 + opts.noise * rng.uniform(-1.0, 1.0, chart.grid.shape)
    return u0.ravel()


def _solve_linear(J: sp.csc_matrix, rhs: np.ndarray, d: _Discretization):
    """Solve ``J x = rhs``; pin the mean when ``J`` kills constants."""
    scale = abs(J).max()
    ones = np.ones(J.shape[0])
    kernel = np.max(np.abs(J @ ones)) <= 1e-10 * scale
    singular = kernel
    lu = None
    if not kernel:
        try:
            lu = spla.splu(J)
            piv = np.abs(lu.U.diagonal())
            singular = piv.min() < 1e-14 * scale
        except RuntimeError:
            singular = True
    if not singular:
        x = lu.solve(rhs)
        if np.all(np.isfinite(x)):
            return x, False
        raise LinearSolveFailure("linear solve produced non-finite values")
    if not kernel:
        raise LinearSolveFailure("Newton Jacobian numerically singular")
    # bordered system [J 1; 1^T 0] keeps the mean of the update at zero
    w = d.chart.volume_weights.ravel()
    col = sp.csc_matrix(ones[:, None])
    row = sp.csr_matrix(w[None, :] / w.sum())
    A = sp.bmat([[J, col], [row, None]], format="csc")
    try:
        x = spla.splu(A).solve(np.append(rhs, 0.0))
    except RuntimeError as exc:
        raise LinearSolveFailure(f"pinned system singular: {exc}") from exc
    if not np.all(np.isfinite(x)):
        raise LinearSolveFailure("pinned linear solve produced non-finite values")
    return x[:-1], True


def solve_newton(problem: Problem, opts: Optional[SolveOptions] = None) -> Solution:
    """Damped Newton iteration; returns the last iterate if it does not converge."""
    opts = opts or SolveOptions()
    chart = problem.chart
    d = _discretization(chart)
    u = initial_guess(problem, opts)

    def norms(F):
        ri = float(np.max(np.abs(F[d.interior]))) if d.interior.any() else 0.0
        rb = float(np.max(np.abs(F[d.boundary]))) if d.boundary.any() else 0.0
        return ri, rb

    def merit(F):
        return float(np.linalg.norm(F))

    F = _residual_vector(problem, u, d)
    history = [merit(F)]
    pinned = False
    steps = 0
    converged = max(norms(F)) <= opts.tol_res
    while not converged and steps < opts.max_steps:
        J = _jacobian(problem, u, d)
        du, pin = _solve_linear(J, -F, d)
        pinned |= pin
        t = 1.0
        while True:
            trial = u + t * du
            try:
                Ft = _residual_vector(problem, trial, d)
                ok = merit(Ft) < (1 - 1e-4 * t) * merit(F) or merit(Ft) <= opts.tol_res
            except ExpressionError:
                ok = False
            if ok or t <= opts.min_step:
                break
            t *= 0.5
        if not ok:
            log.debug("line search stalled at step %d", steps)
            try:
                Ft = _residual_vector(problem, trial, d)
            except ExpressionError:
                break
        u, F = trial, Ft
        steps += 1
        history.append(merit(F))
        converged = max(norms(F)) <= opts.tol_res
        if not ok:
            break
    ri, rb = norms(F)
    return Solution(ScalarField(chart, u.reshape(chart.grid.shape)), steps, ri, rb, converged, pinned, history,
                    seed=opts.seed)


def weak_residual(problem: Problem, u, phi) -> float:
    """``∫<∇u,∇φ> dV + ∮ h(u) φ dσ - ∫ f(u) φ dV`` on the grid."""
    chart = problem.chart
    u = chart.field(u)
    phi = chart.field(phi)
    vol = disc.volume_integral(chart, grad_inner(u, phi).values - problem.f_of(u.values) * phi.values)
    surf = boundary.surface_integral(problem.faces,
                                     lambda f: problem.h_of(f.restrict(u)) * f.restrict(phi))
    return vol + surf

