"""Intrinsic Riemannian geometry on a logically rectangular chart.

A :class:`MetricChart` holds metric components as expressions over the
chart coordinates and a vertex grid.  Tensor data is stored with grid
axes first and component axes last: vectors are ``(*grid, m)``, 2-tensors
``(*grid, m, m)``, Christoffel symbols ``(*grid, k, i, j)`` for
``Γ^k_ij``.

Metric derivatives come from user-supplied expressions when given (second
derivatives then by symbolic differentiation of those), otherwise from
fourth-order centred differences of the metric expressions with step
``1e-4 * (b_k - a_k)``.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Callable, Mapping, Sequence, Union

import numpy as np

from . import disc, expr
from .disc import Axis, Grid

EPS_G = 1e-10
FD_REL_STEP = 1e-4


class DegenerateMetric(ValueError):
    """Metric not positive definite (``det`` or an eigenvalue ``<= 1e-10``)."""


ExprLike = Union[str, "expr.Ast", float, int]


def _as_ast(e: ExprLike, names: Sequence[str]) -> "expr.Ast":
    if isinstance(e, (int, float)):
        return expr.Num(float(e))
    if isinstance(e, str):
        return expr.parse(e, names)
    return e


def _fd4(fun: Callable, X: tuple, k: int, step: float):
    """Fourth-order centred derivative of ``fun`` along coordinate ``k``."""

    def shifted(s):
        Y = list(X)
        Y[k] = X[k] + s * step
        return fun(tuple(Y))

    return (-shifted(2) + 8 * shifted(1) - 8 * shifted(-1) + shifted(-2)) / (12 * step)


class MetricChart:
    """Coordinate chart ``(Ω, g)`` with a uniform vertex grid.

    Parameters
    ----------
    coords : names of the chart coordinates.
    box : ``[(a_1, b_1), ...]`` parameter intervals.
    periodic : per-coordinate periodicity flags.
    metric : ``m x m`` nested sequence of expressions (only the upper
        triangle is read; symmetry is by construction).
    resolution : node count per coordinate (int for all).
    metric_derivatives : optional ``{coord: m x m expressions}`` giving
        ``∂_k g_ij`` for every coordinate.
    """

    def __init__(self, coords, box, periodic, metric, resolution, metric_derivatives=None,
                 name: str = "", validate: bool = True):
        self.coords = tuple(coords)
        m = len(self.coords)
        if m < 2:
            raise ValueError("chart dimension must be at least 2")
        if len(box) != m or len(periodic) != m:
            raise ValueError("box and periodic flags must match the coordinate count")
        if isinstance(resolution, int):
            resolution = [resolution] * m
        self.box = tuple((float(a), float(b)) for a, b in box)
        self.periodic = tuple(bool(p) for p in periodic)
        self.resolution = tuple(int(n) for n in resolution)
        self.name = name
        self.grid = Grid(Axis(a, b, n, p) for (a, b), n, p in zip(self.box, self.resolution, self.periodic))

        self.metric_ast = tuple(
            tuple(_as_ast(metric[min(i, j)][max(i, j)], self.coords) for j in range(m)) for i in range(m))
        self.dmetric_ast = None
        if metric_derivatives is not None:
            missing = [c for c in self.coords if c not in metric_derivatives]
            if missing:
                raise ValueError(f"metric derivatives missing for coordinates {missing}")
            self.dmetric_ast = tuple(
                tuple(tuple(_as_ast(metric_derivatives[c][min(i, j)][max(i, j)], self.coords)
                            for j in range(m)) for i in range(m))
                for c in self.coords)
        self.fd_steps = tuple(FD_REL_STEP * (b - a) for a, b in self.box)
        if validate:
            self._validate()

    # -- construction helpers -------------------------------------------------

    def with_resolution(self, resolution) -> "MetricChart":
        derivs = None
        if self.dmetric_ast is not None:
            derivs = {c: self.dmetric_ast[k] for k, c in enumerate(self.coords)}
        return MetricChart(self.coords, self.box, self.periodic, self.metric_ast, resolution,
                           derivs, name=self.name)

    @property
    def dim(self) -> int:
        return len(self.coords)

    @property
    def has_analytic_derivatives(self) -> bool:
        return self.dmetric_ast is not None

    def field(self, source) -> "ScalarField":
        """Sample an expression, callable or array on the grid nodes."""
        if isinstance(source, ScalarField):
            return source
        if isinstance(source, np.ndarray):
            return ScalarField(self, source)
        if callable(source):
            return ScalarField(self, np.broadcast_to(source(*self.grid.mesh), self.grid.shape).astype(float))
        ast = _as_ast(source, self.coords)
        vals = expr.evaluate(ast, dict(zip(self.coords, self.grid.mesh)))
        return ScalarField(self, np.broadcast_to(np.asarray(vals, dtype=float), self.grid.shape).copy())

    def _bind(self, X) -> dict:
        return dict(zip(self.coords, X))

    def _validate(self) -> None:
        g = self.g
        det = np.linalg.det(g)
        eig = np.linalg.eigvalsh(g)
        bad = (det <= EPS_G) | (eig.min(axis=-1) <= EPS_G)
        if np.any(bad):
            node = tuple(int(i) for i in np.argwhere(bad)[0])
            x = tuple(float(c[node]) for c in self.grid.mesh)
            raise DegenerateMetric(f"metric degenerate at node {node} (coordinates {x}), det={det[node]:.3e}")
        if self.dmetric_ast is not None:
            analytic = self.metric_d1(self.grid.mesh)
            numeric = self._metric_d1_fd(self.grid.mesh)
            err = np.max(np.abs(analytic - numeric))
            scale = 1.0 + np.max(np.abs(numeric))
            if err > 1e-5 * scale:
                raise ValueError(f"metric derivative expressions disagree with the metric (max error {err:.3e})")

    # -- pointwise metric data (vectorized over coordinate arrays) ------------

    def _eval_matrix(self, asts, X) -> np.ndarray:
        shape = np.broadcast(*X).shape
        m = self.dim
        out = np.empty(shape + (m, m))
        b = self._bind(X)
        for i in range(m):
            for j in range(i, m):
                out[..., i, j] = out[..., j, i] = np.broadcast_to(expr.evaluate(asts[i][j], b), shape)
        return out

    def metric_values(self, X) -> np.ndarray:
        """``g_ij`` at coordinate arrays ``X``."""
        return self._eval_matrix(self.metric_ast, X)

    def _metric_d1_fd(self, X) -> np.ndarray:
        return np.stack([_fd4(self.metric_values, X, k, self.fd_steps[k]) for k in range(self.dim)], axis=-3)

    def metric_d1(self, X) -> np.ndarray:
        """``∂_k g_ij`` with shape ``(..., k, i, j)``."""
        if self.dmetric_ast is None:
            return self._metric_d1_fd(X)
        return np.stack([self._eval_matrix(self.dmetric_ast[k], X) for k in range(self.dim)], axis=-3)

    @cached_property
    def _d2metric_ast(self):
        m = self.dim
        return tuple(tuple(tuple(tuple(expr.differentiate(self.dmetric_ast[k][i][j], self.coords[l])
                                       for j in range(m)) for i in range(m))
                           for k in range(m)) for l in range(m))

    def metric_d2(self, X) -> np.ndarray:
        """``∂_l ∂_k g_ij`` with shape ``(..., l, k, i, j)`` (analytic mode only)."""
        d2 = self._d2metric_ast
        per_l = [np.stack([self._eval_matrix(d2[l][k], X) for k in range(self.dim)], axis=-3)
                 for l in range(self.dim)]
        return np.stack(per_l, axis=-4)

    def christoffel_values(self, X) -> np.ndarray:
        """``Γ^k_ij`` with shape ``(..., k, i, j)``."""
        g = self.metric_values(X)
        ginv = np.linalg.inv(g)
        dg = self.metric_d1(X)  # [..., c, a, b] = ∂_c g_ab
        # S_hij = ∂_i g_hj + ∂_j g_ih - ∂_h g_ij
        S = np.einsum("...ihj->...hij", dg) + np.einsum("...jih->...hij", dg) - dg
        G = 0.5 * np.einsum("...kh,...hij->...kij", ginv, S)
        return 0.5 * (G + np.swapaxes(G, -1, -2))

    def christoffel_d1(self, X) -> np.ndarray:
        """``∂_l Γ^k_ij`` with shape ``(..., l, k, i, j)``."""
        if self.dmetric_ast is None:
            return np.stack([_fd4(self.christoffel_values, X, l, self.fd_steps[l]) for l in range(self.dim)],
                            axis=-4)
        g = self.metric_values(X)
        ginv = np.linalg.inv(g)
        dg = self.metric_d1(X)
        d2g = self.metric_d2(X)  # [..., l, c, a, b]
        S = np.einsum("...ihj->...hij", dg) + np.einsum("...jih->...hij", dg) - dg
        dS = np.einsum("...lihj->...lhij", d2g) + np.einsum("...ljih->...lhij", d2g) - d2g
        dginv = -np.einsum("...ka,...lab,...bh->...lkh", ginv, dg, ginv)
        out = 0.5 * (np.einsum("...lkh,...hij->...lkij", dginv, S) + np.einsum("...kh,...lhij->...lkij", ginv, dS))
        return 0.5 * (out + np.swapaxes(out, -1, -2))

    def ricci_values(self, X) -> np.ndarray:
        """``Ric_ij`` from ``R^l_{ilj}``."""
        G = self.christoffel_values(X)
        dG = self.christoffel_d1(X)  # [..., l, k, i, j] = ∂_l Γ^k_ij
        # Ric_ij = ∂_l Γ^l_ij - ∂_j Γ^l_il + Γ^l_lp Γ^p_ij - Γ^l_jp Γ^p_il
        t1 = np.einsum("...llij->...ij", dG)
        t2 = np.einsum("...jlil->...ij", dG)
        t3 = np.einsum("...llp,...pij->...ij", G, G)
        t4 = np.einsum("...ljp,...pil->...ij", G, G)
        ric = t1 - t2 + t3 - t4
        return 0.5 * (ric + np.swapaxes(ric, -1, -2))

    # -- cached grid data -------------------------------------------------------

    @cached_property
    def g(self) -> np.ndarray:
        return self.metric_values(self.grid.mesh)

    @cached_property
    def ginv(self) -> np.ndarray:
        return np.linalg.inv(self.g)

    @cached_property
    def det(self) -> np.ndarray:
        return np.linalg.det(self.g)

    @cached_property
    def sqrt_det(self) -> np.ndarray:
        return np.sqrt(self.det)

    @cached_property
    def gamma(self) -> np.ndarray:
        return self.christoffel_values(self.grid.mesh)

    @cached_property
    def ric(self) -> np.ndarray:
        return self.ricci_values(self.grid.mesh)

    @cached_property
    def volume_weights(self) -> np.ndarray:
        return disc.trapezoid_weights(self.grid) * self.sqrt_det

    def __repr__(self) -> str:
        return f"MetricChart({self.name or self.coords}, resolution={self.resolution})"


@dataclass
class ScalarField:
    chart: MetricChart
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != self.chart.grid.shape:
            raise ValueError(f"field shape {self.values.shape} != grid shape {self.chart.grid.shape}")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("field has non-finite values")

    def map(self, fn) -> "ScalarField":
        return ScalarField(self.chart, fn(self.values))


@dataclass
class SymTensorField:
    chart: MetricChart
    values: np.ndarray  # (*grid, m, m), covariant components


def _vals(u) -> np.ndarray:
    return getattr(u, "values", u)


# ---------------------------------------------------------------------------
# Operations


def metric_at(chart: MetricChart, node) -> tuple[np.ndarray, np.ndarray, float]:
    """``(g, g_inv, det)`` at a grid node (multi-index)."""
    X = tuple(np.asarray(c[tuple(node)]) for c in chart.grid.mesh)
    return metric_at_point(chart, tuple(float(x) for x in X))


def metric_at_point(chart: MetricChart, x) -> tuple[np.ndarray, np.ndarray, float]:
    g = chart.metric_values(tuple(np.asarray(float(v)) for v in x))
    det = float(np.linalg.det(g))
    if det <= EPS_G or np.linalg.eigvalsh(g).min() <= EPS_G:
        raise DegenerateMetric(f"metric degenerate at {tuple(x)}: det={det:.3e}")
    return g, np.linalg.inv(g), det


def christoffel(chart: MetricChart, node=None) -> np.ndarray:
    """``Γ^k_ij`` at one node, or on the whole grid when ``node`` is None."""
    return chart.gamma if node is None else chart.gamma[tuple(node)]


def ricci(chart: MetricChart, node=None) -> np.ndarray:
    return chart.ric if node is None else chart.ric[tuple(node)]


def partials(u) -> np.ndarray:
    """Coordinate derivatives ``∂_k u`` stacked on the last axis."""
    chart = u.chart
    return np.stack([disc.partial(u.values, chart.grid, k, 1) for k in range(chart.dim)], axis=-1)


def raise_index(chart: MetricChart, cov: np.ndarray) -> np.ndarray:
    return np.einsum("...ij,...j->...i", chart.ginv, cov)


def inner(chart: MetricChart, X: np.ndarray, Y: np.ndarray) -> np.ndarray:
    """``g(X, Y)`` for contravariant vector fields."""
    return np.einsum("...ij,...i,...j->...", chart.g, X, Y)


def gradient(u: ScalarField) -> np.ndarray:
    """Contravariant gradient ``(∇u)^i = g^{ij} ∂_j u``."""
    return raise_index(u.chart, partials(u))


def grad_norm_sq(u: ScalarField) -> ScalarField:
    du = partials(u)
    return ScalarField(u.chart, np.einsum("...ij,...i,...j->...", u.chart.ginv, du, du))


def grad_inner(u: ScalarField, v: ScalarField) -> ScalarField:
    """``<∇u, ∇v>``."""
    return ScalarField(u.chart, np.einsum("...ij,...i,...j->...", u.chart.ginv, partials(u), partials(v)))


def hessian(u: ScalarField) -> SymTensorField:
    """Covariant Hessian ``∂²_ij u - Γ^k_ij ∂_k u``.

    Pure second derivatives use the compact second-difference stencil,
    mixed ones nested first differences (which commute, so the result is
    exactly symmetric).
    """
    chart = u.chart
    grid = chart.grid
    m = chart.dim
    d1 = [disc.partial(u.values, grid, k, 1) for k in range(m)]
    H = np.empty(grid.shape + (m, m))
    for i in range(m):
        H[..., i, i] = disc.partial(u.values, grid, i, 2)
        for j in range(i + 1, m):
            H[..., i, j] = H[..., j, i] = disc.partial(d1[j], grid, i, 1)
    H -= np.einsum("...kij,...k->...ij", chart.gamma, np.stack(d1, axis=-1))
    return SymTensorField(chart, H)


def hessian_norm_sq(H: SymTensorField) -> ScalarField:
    """Metric-contracted Frobenius norm ``g^{ik} g^{jl} H_ij H_kl``."""
    gi = H.chart.ginv
    return ScalarField(H.chart, np.einsum("...ik,...jl,...ij,...kl->...", gi, gi, H.values, H.values))


def laplace_beltrami(u: ScalarField) -> ScalarField:
    """Trace form ``g^{ij} (H_u)_ij``."""
    return ScalarField(u.chart, np.einsum("...ij,...ij->...", u.chart.ginv, hessian(u).values))


def laplace_divergence(u: ScalarField) -> ScalarField:
    """Divergence form ``|g|^{-1/2} ∂_i(|g|^{1/2} g^{ij} ∂_j u)``."""
    chart = u.chart
    flux = chart.sqrt_det[..., None] * raise_index(chart, partials(u))
    div = sum(disc.partial(flux[..., i], chart.grid, i, 1) for i in range(chart.dim))
    return ScalarField(chart, div / chart.sqrt_det)


def ricci_quadratic(u: ScalarField) -> ScalarField:
    """``Ric(∇u, ∇u)``."""
    X = gradient(u)
    return ScalarField(u.chart, np.einsum("...ij,...i,...j->...", u.chart.ric, X, X))


def grad_abs_grad_sq(u: ScalarField, tau_rel: float = 1e-6):
    """``|∇|∇u||²`` away from critical points, plus the critical-point mask.

    Computed as ``|∇|∇u|²|² / (4 |∇u|²)`` so that only the smooth field
    ``|∇u|²`` is differentiated.  Nodes with ``|∇u| < tau_rel * sup|∇u|``
    are masked (value set to 0 there).
    """
    q = grad_norm_sq(u)
    norm = np.sqrt(q.values)
    sup = norm.max()
    mask = norm < tau_rel * sup if sup > 0 else np.ones_like(norm, dtype=bool)
    dq = grad_norm_sq(q).values
    with np.errstate(divide="ignore", invalid="ignore"):
        val = np.where(mask, 0.0, dq / (4 * np.where(mask, 1.0, q.values)))
    return ScalarField(u.chart, val), mask


def ricci_eigenvalues(chart: MetricChart) -> np.ndarray:
    """Eigenvalues of ``Ric`` relative to ``g`` at every node, ``(*grid, m)``."""
    L = np.linalg.cholesky(chart.g)
    Li = np.linalg.inv(L)
    A = np.einsum("...ia,...ab,...jb->...ij", Li, chart.ric, Li)
    return np.linalg.eigvalsh(0.5 * (A + np.swapaxes(A, -1, -2)))


def volume_integral(field) -> float:
    return disc.volume_integral(field.chart, field)


def interior_mask(chart: MetricChart, depth: int = 3) -> np.ndarray:
    """Nodes at least ``depth`` stencils away from every non-periodic face."""
    return chart.grid.boundary_distance() >= depth
