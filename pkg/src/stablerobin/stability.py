"""Stability of solutions via the second variation of the energy.

``Q(φ) = ∫|∇φ|² dV + ∮ h'(u) φ² dσ - ∫ f'(u) φ² dV`` over all grid
functions (no boundary condition on φ).  ``u`` is stable iff the smallest
generalized eigenvalue of ``K x = λ M x`` is nonnegative, with ``M`` the
unit-weight lumped volume mass.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import disc
from .geometry import ScalarField
from .solver import Problem


class EigenFailure(RuntimeError):
    """The smallest eigenpair could not be computed to tolerance."""


@dataclass
class StabilityResult:
    lambda_min: float
    eigenfield: ScalarField
    verdict: str  # "stable" | "unstable" | "marginal"
    eps_stab: float
    residual: float = 0.0

    @property
    def passes(self) -> bool:
        """Stability hypothesis holds (``Q >= 0`` up to the margin)."""
        return self.verdict != "unstable"


def assemble_Q(problem: Problem, u) -> tuple[disc.SymmetricOperator, disc.SymmetricOperator]:
    """``(K, M)`` with ``K = K0 + B_{h'(u)} - M_{f'(u)}`` and ``M = M_1``."""
    chart = problem.chart
    u = chart.field(u)
    K0 = disc.assemble_stiffness(chart)
    B = disc.assemble_boundary_mass(problem.faces, problem.dh_of(u.values))
    Mf = disc.assemble_mass(chart, problem.df_of(u.values))
    M = disc.assemble_mass(chart)
    return K0 + B - Mf, M


def _gershgorin_lower(K: sp.spmatrix, mdiag: np.ndarray) -> float:
    """Lower bound on the spectrum of ``M^{-1/2} K M^{-1/2}``."""
    s = 1.0 / np.sqrt(mdiag)
    C = sp.diags(s) @ sp.csr_matrix(K) @ sp.diags(s)
    d = C.diagonal()
    off = np.asarray(abs(C).sum(axis=1)).ravel() - np.abs(d)
    return float(np.min(d - off))


def lambda_min(K: disc.SymmetricOperator, M: disc.SymmetricOperator, tol: float = 1e-8,
               lower_bound: float | None = None):
    """Smallest eigenpair of ``K x = λ M x`` (``M`` diagonal positive).

    Large problems use shift-invert Lanczos below ``lower_bound`` (a
    Gershgorin bound when not supplied); a tight bound speeds it up.
    """
    n = K.shape[0]
    if K.is_dense and M.is_dense:
        # M is diagonal: reduce to a standard symmetric problem
        sc = 1.0 / np.sqrt(np.diag(M.toarray()))
        C = K.toarray() * sc[:, None] * sc[None, :]
        w, v = sla.eigh(C, subset_by_index=[0, 0], driver="evr")
        lam, x = float(w[0]), v[:, 0] * sc
    else:
        Ks = K.tosparse().tocsc()
        Ms = M.tosparse().tocsc()
        mdiag = Ms.diagonal()
        if lower_bound is None:
            lower_bound = _gershgorin_lower(Ks, mdiag)
        sigma = lower_bound - max(1.0, 1e-2 * abs(lower_bound))
        try:
            w, v = spla.eigsh(Ks, k=1, M=Ms, sigma=sigma, which="LM", ncv=min(n - 1, 24), maxiter=10 * n, tol=1e-12)
        except spla.ArpackNoConvergence as exc:
            raise EigenFailure(f"shift-invert Lanczos did not converge: {exc}") from exc
        lam, x = float(w[0]), v[:, 0]
    Mx = M @ x
    xm = float(np.sqrt(x @ Mx))
    x = x / xm
    res = float(np.linalg.norm(K @ x - lam * (M @ x)))
    if not K.is_dense and res > tol:
        raise EigenFailure(f"eigen residual {res:.3e} exceeds {tol:.1e}")
    # fix the sign so output is deterministic
    i = int(np.argmax(np.abs(x)))
    if x[i] < 0:
        x = -x
    return lam, x, res


def stability_scale(problem: Problem, u) -> float:
    u = problem.chart.field(u)
    hb = np.concatenate([f.restrict(u).ravel() for f in problem.faces])
    return float(np.max(np.abs(problem.df_of(u.values))) + np.max(np.abs(problem.dh_of(hb))) + 1.0)


def is_stable(problem: Problem, u, eps_rel: float = 1e-6) -> StabilityResult:
    chart = problem.chart
    u = chart.field(u)
    K, M = assemble_Q(problem, u)
    # K0 is positive semidefinite and the remaining terms are diagonal
    K0 = disc.assemble_stiffness(chart)
    rest = (K - K0).tosparse().diagonal()
    bound = float(np.min(rest / M.tosparse().diagonal()))
    lam, x, res = lambda_min(K, M, lower_bound=bound)
    eps = eps_rel * stability_scale(problem, u)
    if lam >= eps:
        verdict = "stable"
    elif lam <= -eps:
        verdict = "unstable"
    else:
        verdict = "marginal"
    return StabilityResult(lam, ScalarField(chart, x.reshape(chart.grid.shape)), verdict, eps, res)


def rayleigh(problem: Problem, u, phi) -> float:
    """``Q(φ) = φᵀ K φ``."""
    K, _ = assemble_Q(problem, u)
    return K.quad(problem.chart.field(phi))
