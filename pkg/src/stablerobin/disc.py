"""Grids, finite-difference stencils, quadrature and operator assembly.

Grids are vertex-centred and uniform per coordinate, nodes enumerated in
C (row-major) order.  Difference stencils are second order: centred in
the interior, one-sided at non-periodic ends, wrapped on periodic axes.

The quadratic-form operators used by the stability analysis are built
here.  Stiffness uses bilinear (Q1) cells with tensor Gauss quadrature of
``sqrt|g| g^{ij}``; the mass operators are lumped trapezoidal rules, so
``M_1`` is diagonal and positive.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from functools import cached_property
from typing import Sequence

import numpy as np
import scipy.sparse as sp

MIN_NODES = 8
DENSE_LIMIT = 4096


class AssemblyError(ValueError):
    """Non-finite weights or an operator that failed its symmetry check."""


@dataclass(frozen=True)
class Axis:
    lo: float
    hi: float
    n: int
    periodic: bool = False

    @property
    def h(self) -> float:
        if self.periodic:
            return (self.hi - self.lo) / self.n
        return (self.hi - self.lo) / (self.n - 1)

    @property
    def nodes(self) -> np.ndarray:
        return self.lo + self.h * np.arange(self.n)


class Grid:
    """Tensor-product vertex grid."""

    def __init__(self, axes: Sequence[Axis]):
        axes = tuple(axes)
        if not axes:
            raise ValueError("grid needs at least one axis")
        for k, ax in enumerate(axes):
            if ax.n < MIN_NODES:
                raise ValueError(f"axis {k}: need at least {MIN_NODES} nodes, got {ax.n}")
            if not ax.hi > ax.lo:
                raise ValueError(f"axis {k}: empty interval [{ax.lo}, {ax.hi}]")
        self.axes = axes

    @property
    def dim(self) -> int:
        return len(self.axes)

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(ax.n for ax in self.axes)

    @property
    def size(self) -> int:
        return int(np.prod(self.shape))

    @property
    def spacing(self) -> tuple[float, ...]:
        return tuple(ax.h for ax in self.axes)

    @cached_property
    def mesh(self) -> tuple[np.ndarray, ...]:
        return tuple(np.meshgrid(*(ax.nodes for ax in self.axes), indexing="ij"))

    def flat_index(self, multi) -> int:
        return int(np.ravel_multi_index(tuple(multi), self.shape))

    def multi_index(self, flat: int) -> tuple[int, ...]:
        return tuple(int(i) for i in np.unravel_index(flat, self.shape))

    def drop(self, k: int) -> "Grid":
        """The grid of the remaining axes (a face grid)."""
        return Grid(ax for j, ax in enumerate(self.axes) if j != k)

    def boundary_distance(self) -> np.ndarray:
        """Per-node index distance to the nearest non-periodic end."""
        dist = np.full(self.shape, np.iinfo(np.int64).max, dtype=np.int64)
        for k, ax in enumerate(self.axes):
            if ax.periodic:
                continue
            i = np.arange(ax.n)
            d = np.minimum(i, ax.n - 1 - i)
            shape = [1] * self.dim
            shape[k] = ax.n
            dist = np.minimum(dist, d.reshape(shape))
        return dist

    def __repr__(self) -> str:
        return f"Grid({self.axes!r})"


# ---------------------------------------------------------------------------
# 1-D stencils


def diff_matrix(ax: Axis, order: int, scaled: bool = True) -> sp.csr_matrix:
    """Second-order difference matrix for the first or second derivative.

    With ``scaled=False`` the raw stencil weights are returned (divide by
    ``h**order`` afterwards); their rows sum to zero exactly.
    """
    n = ax.n
    h = ax.h if scaled else 1.0
    rows, cols, vals = [], [], []

    def put(i, offsets, coefs, scale):
        for o, c in zip(offsets, coefs):
            rows.append(i)
            cols.append((i + o) % n)
            vals.append(c / scale)

    if order == 1:
        for i in range(n):
            if ax.periodic or 0 < i < n - 1:
                put(i, (-1, 1), (-0.5, 0.5), h)
            elif i == 0:
                put(i, (0, 1, 2), (-1.5, 2.0, -0.5), h)
            else:
                put(i, (0, -1, -2), (1.5, -2.0, 0.5), h)
    elif order == 2:
        for i in range(n):
            if ax.periodic or 0 < i < n - 1:
                put(i, (-1, 0, 1), (1.0, -2.0, 1.0), h * h)
            elif i == 0:
                put(i, (0, 1, 2, 3), (2.0, -5.0, 4.0, -1.0), h * h)
            else:
                put(i, (0, -1, -2, -3), (2.0, -5.0, 4.0, -1.0), h * h)
    else:
        raise ValueError(f"order must be 1 or 2, got {order}")
    return sp.csr_matrix((vals, (rows, cols)), shape=(n, n))


def partial(values: np.ndarray, grid: Grid, k: int, order: int = 1) -> np.ndarray:
    """Apply the 1-D stencil along axis ``k`` of ``values``.

    Trailing axes beyond the grid dimension (vector or tensor components)
    are carried along.
    """
    ax = grid.axes[k]
    D = diff_matrix(ax, order, scaled=False)
    moved = np.moveaxis(np.asarray(values, dtype=float), k, 0)
    out = (D @ moved.reshape(moved.shape[0], -1)) / ax.h ** order
    return np.moveaxis(out.reshape(moved.shape), 0, k)


def partial_operator(grid: Grid, k: int, order: int = 1) -> sp.csr_matrix:
    """Sparse ``N x N`` operator of :func:`partial` on flattened fields."""
    mats = [sp.identity(ax.n, format="csr") for ax in grid.axes]
    mats[k] = diff_matrix(grid.axes[k], order)
    out = mats[0]
    for m in mats[1:]:
        out = sp.kron(out, m, format="csr")
    return out


# ---------------------------------------------------------------------------
# Quadrature


def trapezoid_weights(grid: Grid) -> np.ndarray:
    """Product trapezoidal weights in parameter space."""
    w = np.ones(grid.shape)
    for k, ax in enumerate(grid.axes):
        wk = np.full(ax.n, ax.h)
        if not ax.periodic:
            wk[0] = wk[-1] = ax.h / 2
        shape = [1] * grid.dim
        shape[k] = ax.n
        w = w * wk.reshape(shape)
    return w


def volume_integral(chart, values) -> float:
    """Trapezoidal ``∫ values dV`` with the Riemannian volume weight."""
    values = getattr(values, "values", values)
    return float(np.sum(chart.volume_weights * values))


# ---------------------------------------------------------------------------
# Operators


@dataclass
class SymmetricOperator:
    """A symmetric matrix over grid nodes (dense below ``DENSE_LIMIT``)."""

    matrix: object
    asymmetry: float = 0.0

    @classmethod
    def from_sparse(cls, A: sp.spmatrix, symmetrize: bool = True) -> "SymmetricOperator":
        A = sp.csr_matrix(A)
        amax = abs(A).max() if A.nnz else 0.0
        asym = abs(A - A.T).max() if A.nnz else 0.0
        if symmetrize:
            A = ((A + A.T) * 0.5).tocsr()
        elif asym > 1e-12 * amax:
            raise AssemblyError(f"operator asymmetry {asym:.3e} exceeds tolerance")
        if A.shape[0] <= DENSE_LIMIT:
            return cls(A.toarray(), float(asym))
        return cls(A, float(asym))

    @property
    def shape(self):
        return self.matrix.shape

    @property
    def is_dense(self) -> bool:
        return isinstance(self.matrix, np.ndarray)

    def toarray(self) -> np.ndarray:
        return self.matrix if self.is_dense else self.matrix.toarray()

    def tosparse(self) -> sp.csr_matrix:
        return sp.csr_matrix(self.matrix)

    def __matmul__(self, x):
        return self.matrix @ x

    def __add__(self, other: "SymmetricOperator") -> "SymmetricOperator":
        return _combine(self, other, 1.0)

    def __sub__(self, other: "SymmetricOperator") -> "SymmetricOperator":
        return _combine(self, other, -1.0)

    def quad(self, phi) -> float:
        """``phi^T A phi``."""
        x = np.ravel(getattr(phi, "values", phi))
        return float(x @ (self.matrix @ x))


def _combine(a: SymmetricOperator, b: SymmetricOperator, sign: float) -> SymmetricOperator:
    if a.is_dense or b.is_dense:
        mat = a.toarray() + sign * b.toarray()
    else:
        mat = (a.matrix + sign * b.matrix).tocsr()
    return SymmetricOperator(mat, max(a.asymmetry, b.asymmetry))


def _check_weights(w: np.ndarray, what: str) -> np.ndarray:
    w = np.asarray(w, dtype=float)
    if not np.all(np.isfinite(w)):
        raise AssemblyError(f"{what}: non-finite weights")
    return w


def _cells(grid: Grid):
    """Cell origin multi-indices and node indices of the 2^m cell corners."""
    ranges = [np.arange(ax.n if ax.periodic else ax.n - 1) for ax in grid.axes]
    origin = np.stack(np.meshgrid(*ranges, indexing="ij"), axis=-1).reshape(-1, grid.dim)
    corners = np.array(list(itertools.product((0, 1), repeat=grid.dim)))
    idx = origin[:, None, :] + corners[None, :, :]
    n = np.array(grid.shape)
    idx = idx % n  # periodic wrap; non-periodic never overflows
    flat = np.ravel_multi_index(tuple(np.moveaxis(idx, -1, 0)), grid.shape)
    return origin, corners, flat


def assemble_stiffness(chart) -> SymmetricOperator:
    """``K0`` with ``phi^T K0 phi ≈ ∫ |∇phi|^2 dV`` (bilinear cells)."""
    grid = chart.grid
    m = grid.dim
    h = np.array(grid.spacing)
    lo = np.array([ax.lo for ax in grid.axes])
    origin, corners, flat = _cells(grid)

    gp = np.array([(1 - 1 / np.sqrt(3)) / 2, (1 + 1 / np.sqrt(3)) / 2])
    qpts = np.array(list(itertools.product(gp, repeat=m)))  # (Q, m) in [0,1]^m
    qw = 0.5 ** m
    # reference gradients dN[q, a, k] already divided by h_k
    dN = np.empty((len(qpts), len(corners), m))
    for q, xi in enumerate(qpts):
        for a, c in enumerate(corners):
            vals = np.where(c == 1, xi, 1 - xi)
            for k in range(m):
                d = 1.0 if c[k] == 1 else -1.0
                dN[q, a, k] = d * np.prod(np.delete(vals, k)) / h[k]

    coords = lo + (origin[:, None, :] + qpts[None, :, :]) * h  # (C, Q, m)
    X = tuple(coords[..., k] for k in range(m))
    g = chart.metric_values(X)
    ginv = np.linalg.inv(g)
    A = np.sqrt(np.linalg.det(g))[..., None, None] * ginv  # (C, Q, m, m)
    A = _check_weights(A, "stiffness")
    vol = float(np.prod(h))
    local = vol * qw * np.einsum("cqij,qai,qbj->cab", A, dN, dN)

    rows = np.repeat(flat, len(corners), axis=1).ravel()
    cols = np.tile(flat, (1, len(corners))).ravel()
    K = sp.coo_matrix((local.ravel(), (rows, cols)), shape=(grid.size, grid.size)).tocsr()
    return SymmetricOperator.from_sparse(K)


def assemble_mass(chart, weight=None) -> SymmetricOperator:
    """Lumped ``M_w`` with ``phi^T M_w phi ≈ ∫ w phi^2 dV``."""
    w = chart.volume_weights
    if weight is not None:
        w = w * _check_weights(getattr(weight, "values", weight), "mass")
    return SymmetricOperator.from_sparse(sp.diags(np.ravel(w)))


def assemble_boundary_mass(faces, weight=None) -> SymmetricOperator:
    """Lumped ``B_w`` with ``phi^T B_w phi ≈ ∫ w phi^2 dσ`` summed over faces.

    ``weight`` is a full-grid field; its face restriction is used.
    """
    if not faces:
        raise AssemblyError("no boundary faces")
    size = faces[0].chart.grid.size
    diag = np.zeros(size)
    wfield = None if weight is None else _check_weights(getattr(weight, "values", weight), "boundary mass")
    for face in faces:
        w = face.quad_weights
        if wfield is not None:
            w = w * face.restrict(wfield)
        np.add.at(diag, face.node_indices.ravel(), w.ravel())
    return SymmetricOperator.from_sparse(sp.diags(diag))
