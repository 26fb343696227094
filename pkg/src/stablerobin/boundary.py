"""Geometry of ∂Ω for box-shaped parameter domains.

Each non-periodic coordinate contributes two faces.  On a face normal to
coordinate ``k`` the outward unit normal is the normalised dual direction
``ν^i = ± g^{ik} / sqrt(g^{kk})``, whose covariant components vanish
except ``ν_k = ± 1/sqrt(g^{kk})``.

Sign convention for the second fundamental form::

    II(X, Y) = -<∇_X ν, Y>,   II_ab = Γ^k_ab ν_k   (a, b tangent)

Derivation on the Euclidean circle r = R with outward ν = ∂_r: for w with
w_r = 0 there, ½ ∂_ν |∇w|² = ½ ∂_r (w_θ²/r²) = -|∇̃w|²/R, and the
boundary identity ½∂_ν|∇w|² = II(∇̃w, ∇̃w) + ... then forces
II = -(1/R) g̃.  With this sign convex Euclidean domains have II <= 0.
The mean curvature is normalised by ``(m-1) H = tr_g̃ II``.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from . import disc
from .geometry import MetricChart, ScalarField, hessian, laplace_beltrami, partials


class NoBoundary(ValueError):
    """All chart coordinates are periodic."""


def _vals(u):
    return getattr(u, "values", u)


@dataclass(eq=False)
class BoundaryFace:
    chart: MetricChart
    axis: int
    high: bool

    @property
    def label(self) -> str:
        return f"{self.chart.coords[self.axis]}={'high' if self.high else 'low'}"

    @property
    def sign(self) -> float:
        return 1.0 if self.high else -1.0

    @property
    def index(self) -> int:
        return self.chart.grid.shape[self.axis] - 1 if self.high else 0

    @property
    def tangent_axes(self) -> tuple[int, ...]:
        return tuple(j for j in range(self.chart.dim) if j != self.axis)

    @cached_property
    def grid(self) -> disc.Grid:
        return self.chart.grid.drop(self.axis)

    def restrict(self, values) -> np.ndarray:
        """Face values of a full-grid array (trailing component axes kept)."""
        return np.take(_vals(values), self.index, axis=self.axis)

    @cached_property
    def node_indices(self) -> np.ndarray:
        flat = np.arange(self.chart.grid.size).reshape(self.chart.grid.shape)
        return self.restrict(flat)

    @cached_property
    def coordinates(self) -> tuple[np.ndarray, ...]:
        return tuple(self.restrict(c) for c in self.chart.grid.mesh)

    @cached_property
    def smooth_mask(self) -> np.ndarray:
        """Face nodes not shared with another face (corners excluded)."""
        own = np.zeros(self.chart.grid.shape, dtype=bool)
        for j, ax in enumerate(self.chart.grid.axes):
            if j == self.axis or ax.periodic:
                continue
            i = np.arange(ax.n)
            shape = [1] * self.chart.dim
            shape[j] = ax.n
            own |= ((i == 0) | (i == ax.n - 1)).reshape(shape)
        return ~self.restrict(own)

    # -- metric data on the face ------------------------------------------------

    @cached_property
    def g(self) -> np.ndarray:
        return self.restrict(self.chart.g)

    @cached_property
    def ginv(self) -> np.ndarray:
        return self.restrict(self.chart.ginv)

    @cached_property
    def normal(self) -> np.ndarray:
        """Contravariant outward unit normal ``ν^i``."""
        k = self.axis
        gi = self.ginv
        return self.sign * gi[..., :, k] / np.sqrt(gi[..., k, k])[..., None]

    @cached_property
    def normal_cov(self) -> np.ndarray:
        k = self.axis
        out = np.zeros(self.g.shape[:-1])
        out[..., k] = self.sign / np.sqrt(self.ginv[..., k, k])
        return out

    @cached_property
    def induced_metric(self) -> np.ndarray:
        t = list(self.tangent_axes)
        return self.g[..., t, :][..., :, t]

    @cached_property
    def induced_metric_inv(self) -> np.ndarray:
        return np.linalg.inv(self.induced_metric)

    @cached_property
    def sqrt_det_induced(self) -> np.ndarray:
        return np.sqrt(np.linalg.det(self.induced_metric))

    @cached_property
    def quad_weights(self) -> np.ndarray:
        """Trapezoidal weights times the surface element ``sqrt|g̃|``."""
        return disc.trapezoid_weights(self.grid) * self.sqrt_det_induced

    def __repr__(self) -> str:
        return f"BoundaryFace({self.label})"


# ---------------------------------------------------------------------------


def faces(chart: MetricChart) -> list[BoundaryFace]:
    """Two faces (low, high) per non-periodic coordinate."""
    out = [BoundaryFace(chart, k, high) for k, p in enumerate(chart.periodic) if not p for high in (False, True)]
    if not out:
        raise NoBoundary("all coordinates are periodic; the domain has no boundary")
    return out


def is_smooth_boundary(chart: MetricChart) -> bool:
    """False when two or more coordinates bound the box (corners present)."""
    return sum(not p for p in chart.periodic) <= 1


def normal_derivative(face: BoundaryFace, u) -> np.ndarray:
    """``∂_ν u = ν^j ∂_j u`` at the face nodes."""
    du = face.restrict(partials(u))
    return np.einsum("...j,...j->...", face.normal, du)


def normal_derivative_of(face: BoundaryFace, values) -> np.ndarray:
    """``∂_ν`` of a raw full-grid array."""
    return normal_derivative(face, ScalarField(face.chart, _vals(values)))


def tangential_gradient(face: BoundaryFace, u) -> np.ndarray:
    """``∇̃u = ∇u - g(∇u, ν) ν`` (contravariant, full components)."""
    du = face.restrict(partials(u))
    grad = np.einsum("...ij,...j->...i", face.ginv, du)
    dn = np.einsum("...j,...j->...", face.normal, du)
    return grad - dn[..., None] * face.normal


def tangential_inner(face: BoundaryFace, u, v) -> np.ndarray:
    """``<∇̃u, ∇̃v>``."""
    a = tangential_gradient(face, u)
    b = tangential_gradient(face, v)
    return np.einsum("...ij,...i,...j->...", face.g, a, b)


def second_fundamental_form(face: BoundaryFace) -> np.ndarray:
    """``II_ab`` in the tangent coordinate basis, shape ``(*face, m-1, m-1)``."""
    k = face.axis
    t = list(face.tangent_axes)
    gamma_k = face.restrict(face.chart.gamma)[..., k, :, :]
    II = gamma_k[..., t, :][..., :, t] * face.normal_cov[..., k][..., None, None]
    return 0.5 * (II + np.swapaxes(II, -1, -2))


def mean_curvature(face: BoundaryFace) -> np.ndarray:
    II = second_fundamental_form(face)
    return np.einsum("...ab,...ab->...", face.induced_metric_inv, II) / (face.chart.dim - 1)


def second_form_on(face: BoundaryFace, X: np.ndarray, Y: np.ndarray | None = None) -> np.ndarray:
    """``II(X, Y)`` for full contravariant vectors tangent to the face."""
    Y = X if Y is None else Y
    t = list(face.tangent_axes)
    return np.einsum("...ab,...a,...b->...", second_fundamental_form(face), X[..., t], Y[..., t])


def boundary_laplacian(face: BoundaryFace, u) -> np.ndarray:
    """Laplace–Beltrami of ``(∂Ω, g̃)`` in divergence form on the face grid.

    ``u`` may be a full-grid field or an array of face values.
    """
    vals = _vals(u)
    if np.shape(vals) == face.chart.grid.shape:
        vals = face.restrict(vals)
    grid = face.grid
    n = grid.dim
    du = np.stack([disc.partial(vals, grid, a, 1) for a in range(n)], axis=-1)
    flux = face.sqrt_det_induced[..., None] * np.einsum("...ab,...b->...a", face.induced_metric_inv, du)
    div = sum(disc.partial(flux[..., a], grid, a, 1) for a in range(n))
    return div / face.sqrt_det_induced


def hessian_normal(face: BoundaryFace, u, H=None) -> np.ndarray:
    """``H_u(ν, ν)`` at face nodes."""
    H = hessian(u) if H is None else H
    return np.einsum("...ij,...i,...j->...", face.restrict(H.values), face.normal, face.normal)


def half_normal_derivative_grad_sq(face: BoundaryFace, u, H=None) -> np.ndarray:
    """``½ ∂_ν |∇u|²`` evaluated as ``H_u(∇u, ν)``.

    Equal in the continuum (∇g = 0).  Differencing the grid field
    ``|∇u|²`` once more at a face loses an order, because the one-sided
    stencil error of ``∇u`` jumps between the face row and the next.
    """
    H = hessian(u) if H is None else H
    grad = np.einsum("...ij,...j->...i", face.ginv, face.restrict(partials(u)))
    return np.einsum("...ij,...i,...j->...", face.restrict(H.values), grad, face.normal)


def surface_integral(face_list, integrands) -> float:
    """Trapezoidal ``∮ integrand dσ`` over one face or a list of faces.

    ``integrands`` is a face-value array (single face), a list of them, or
    a callable ``face -> array``.
    """
    if isinstance(face_list, BoundaryFace):
        face_list = [face_list]
        if not callable(integrands):
            integrands = [integrands]
    total = 0.0
    for i, face in enumerate(face_list):
        vals = integrands(face) if callable(integrands) else integrands[i]
        total += float(np.sum(face.quad_weights * np.broadcast_to(vals, face.quad_weights.shape)))
    return total


def boundary_measure(chart: MetricChart) -> float:
    return surface_integral(faces(chart), lambda f: 1.0)


def laplacian_split_residual(face: BoundaryFace, w, H=None, lap=None) -> np.ndarray:
    """Pointwise ``Δw - Δ̃w + (m-1) H ∂_ν w - H_w(ν, ν)`` on a face."""
    H = hessian(w) if H is None else H
    lap = laplace_beltrami(w).values if lap is None else _vals(lap)
    m = face.chart.dim
    return (face.restrict(lap) - boundary_laplacian(face, w)
            + (m - 1) * mean_curvature(face) * normal_derivative(face, w)
            - hessian_normal(face, w, H))


def check_laplacian_split(chart: MetricChart, w) -> dict[str, float]:
    """Sup-norm of the Laplacian splitting residual on each face."""
    w = chart.field(w)
    H = hessian(w)
    lap = laplace_beltrami(w).values
    return {f.label: float(np.max(np.abs(laplacian_split_residual(f, w, H, lap)))) for f in faces(chart)}
