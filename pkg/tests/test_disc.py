import math

import numpy as np
import pytest

from stablerobin import disc
from stablerobin.boundary import faces
from stablerobin.disc import Axis, Grid

from conftest import annulus, square


def test_grid_spacing_and_indexing():
    g = Grid([Axis(0, 1, 11), Axis(0, 2 * math.pi, 16, periodic=True)])
    assert g.spacing == pytest.approx((0.1, 2 * math.pi / 16))
    for flat in range(g.size):
        assert g.flat_index(g.multi_index(flat)) == flat
    with pytest.raises(ValueError):
        Grid([Axis(0, 1, 7)])


def test_partial_exactness():
    g = Grid([Axis(0, 1, 9), Axis(-1, 1, 12)])
    X, Y = g.mesh
    assert np.allclose(disc.partial(X, g, 0, 1), 1.0, atol=1e-12)
    assert np.allclose(disc.partial(X ** 2, g, 0, 2), 2.0, atol=1e-10)
    assert np.allclose(disc.partial(Y ** 2, g, 1, 1), 2 * Y, atol=1e-12)


def test_periodic_seam_second_order():
    errs = []
    for n in (16, 32, 64):
        g = Grid([Axis(0, 2 * math.pi, n, periodic=True), Axis(0, 1, 8)])
        T = g.mesh[0]
        errs.append(np.abs(disc.partial(np.sin(T), g, 0, 1) - np.cos(T)).max())
    assert errs[0] / errs[1] > 3.5 and errs[1] / errs[2] > 3.5


def test_operator_matches_array_partial():
    ch = annulus(16)
    u = np.sin(ch.grid.mesh[1]) * ch.grid.mesh[0] ** 3
    for k in range(2):
        for order in (1, 2):
            D = disc.partial_operator(ch.grid, k, order)
            assert np.allclose(D @ u.ravel(), disc.partial(u, ch.grid, k, order).ravel(), atol=1e-10)


def test_volume_integrals():
    assert disc.volume_integral(square(16), np.ones((16, 16))) == pytest.approx(1.0, abs=1e-14)
    assert disc.volume_integral(annulus(128), np.ones((128, 128))) == pytest.approx(3 * math.pi, abs=1e-4)
    assert disc.volume_integral(annulus(16), np.zeros((16, 16))) == 0.0


def test_quadrature_order():
    errs = []
    for n in (16, 32, 64):
        ch = annulus(n)
        r = ch.grid.mesh[0]
        errs.append(abs(disc.volume_integral(ch, r ** -4) - 2 * math.pi * (1 - 0.25) / 2))
    order = np.polyfit(np.log([1 / 16, 1 / 32, 1 / 64]), np.log(errs), 1)[0]
    assert order >= 1.7


def test_stiffness_examples():
    ch = square(64)
    K0 = disc.assemble_stiffness(ch)
    one = np.ones(ch.grid.size)
    assert abs(K0.quad(one)) <= 1e-10
    assert np.abs(K0 @ one).max() <= 1e-10
    phi = np.sin(math.pi * ch.grid.mesh[0])
    assert K0.quad(phi) == pytest.approx(math.pi ** 2 / 2, rel=1e-2)
    A = K0.toarray()
    assert np.abs(A - A.T).max() <= 1e-12 * np.abs(A).max()
    assert np.linalg.eigvalsh(disc.assemble_stiffness(square(12)).toarray()).min() >= -1e-12


def test_stiffness_curvilinear():
    ch = annulus(64)
    K0 = disc.assemble_stiffness(ch)
    # ∫|∇ ln r|² dV = 2π ln 2
    assert K0.quad(np.log(ch.grid.mesh[0])) == pytest.approx(2 * math.pi * math.log(2), rel=1e-3)
    assert abs(K0.quad(np.ones(ch.grid.size))) <= 1e-10


def test_mass_operators():
    ch = annulus(64)
    assert disc.assemble_boundary_mass(faces(ch)).quad(np.ones(ch.grid.size)) == pytest.approx(6 * math.pi, abs=1e-3)
    M = disc.assemble_mass(ch)
    assert M.quad(np.ones(ch.grid.size)) == pytest.approx(3 * math.pi, rel=1e-3)
    with pytest.raises(disc.AssemblyError):
        disc.assemble_mass(ch, np.full(ch.grid.shape, np.inf))


def test_dense_sparse_threshold():
    assert disc.assemble_mass(square(64)).is_dense
    assert not disc.assemble_mass(square(65)).is_dense
