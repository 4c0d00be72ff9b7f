"""Grid, operator, and norm checks against closed-form identities."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from chbcontrol.mesh import Grid, assemble_operators, discrete_norms


@pytest.fixture(scope="module")
def grid():
    return Grid(64)


@pytest.fixture(scope="module")
def ops(grid):
    return assemble_operators(grid)


def test_grid_layout(grid):
    assert grid.dx == 1.0 / 64
    assert grid.x.shape == (65,)
    assert grid.x[0] == 0.0 and grid.x[-1] == 1.0
    assert grid.x_interior.shape == (63,)
    # trapezoid weights integrate constants and linears exactly
    assert abs(grid.quad_weights.sum() - 1.0) < 1e-15
    assert abs(float(grid.quad_weights @ grid.x) - 0.5) < 1e-15
    assert np.all(grid.interior_weights == grid.dx)


def test_grid_rejects_tiny_n():
    with pytest.raises(ValueError):
        Grid(7)


def test_control_mask_is_open_interval_indicator(grid):
    mask = grid.control_mask(0.3, 0.7)
    inside = (grid.x > 0.3) & (grid.x < 0.7)
    assert np.array_equal(mask, inside.astype(float))
    assert mask.sum() > 0
    with pytest.raises(ValueError):
        grid.control_mask(0.5, 0.4)
    with pytest.raises(ValueError):
        grid.control_mask(0.50001, 0.50002)  # no nodes inside


def test_dirichlet_laplacian_eigenpairs(grid, ops):
    # sin(k pi x) restricted to interior nodes is an exact eigenvector of
    # the 3-point Laplacian with eigenvalue -(4/dx^2) sin^2(k pi dx / 2).
    for k in (1, 2, 5):
        v = np.sin(k * np.pi * grid.x_interior)
        lam = -(4.0 / grid.dx**2) * np.sin(k * np.pi * grid.dx / 2.0) ** 2
        assert np.max(np.abs(ops.D2_dir @ v - lam * v)) < 1e-9 * abs(lam)


def test_neumann_operators_annihilate_constants(grid, ops):
    ones = np.ones(grid.n + 1)
    assert np.max(np.abs(ops.D2_neu @ ones)) == 0.0
    assert np.max(np.abs(ops.D4_neu @ ones)) == 0.0
    assert np.max(np.abs(ops.D1_neu @ ones)) == 0.0


def test_cosine_modes_are_reflection_eigenvectors(grid, ops):
    # Even reflection keeps cos(k pi x) an exact eigenvector of D2_neu
    # with the standard discrete symbol.
    for k in (1, 3):
        v = np.cos(k * np.pi * grid.x)
        lam = -(4.0 / grid.dx**2) * np.sin(k * np.pi * grid.dx / 2.0) ** 2
        assert np.max(np.abs(ops.D2_neu @ v - lam * v)) < 1e-9 * abs(lam)
        # and of D4_neu with the squared symbol
        assert np.max(np.abs(ops.D4_neu @ v - lam**2 * v)) < 1e-9 * lam**2


def test_weighted_self_adjointness(grid, ops):
    # trapezoid weights make the reflection-closed even-order operators
    # exactly self-adjoint
    W = np.diag(grid.quad_weights)
    for op in (ops.D2_neu, ops.D4_neu):
        M = W @ op.toarray()
        scale = np.max(np.abs(M))
        assert np.max(np.abs(M - M.T)) < 1e-13 * scale
    # and the Dirichlet Laplacian is symmetric outright (uniform weights)
    D2 = ops.D2_dir.toarray()
    assert np.max(np.abs(D2 - D2.T)) == 0.0


def test_d4_positive_semidefinite(grid, ops):
    W = np.diag(grid.quad_weights)
    M = W @ ops.D4_neu.toarray()
    eigs = np.linalg.eigvalsh(0.5 * (M + M.T))
    assert eigs.min() > -1e-10 * eigs.max()


def test_norm_oracles(grid):
    norms = discrete_norms(grid)
    # ||sin(pi x)||_{L2}^2 = 1/2; trapezoid is exact for this integrand
    # up to O(dx^2)
    w = np.sin(np.pi * grid.x_interior)
    assert norms.l2(w) == pytest.approx(np.sqrt(0.5), rel=1e-3)
    p = np.cos(np.pi * grid.x)
    assert norms.l2(p) == pytest.approx(np.sqrt(0.5), rel=1e-3)
    # |sin(pi x)|_{H1} = pi/sqrt(2)
    assert norms.h1_semi(w) == pytest.approx(np.pi / np.sqrt(2.0), rel=1e-3)
    assert norms.h2_semi(p) == pytest.approx(np.pi**2 / np.sqrt(2.0), rel=1e-3)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_inner_product_axioms(seed):
    grid = Grid(32)
    norms = discrete_norms(grid)
    rng = np.random.default_rng(seed)
    f = rng.standard_normal(grid.n + 1)
    g = rng.standard_normal(grid.n + 1)
    assert norms.inner(f, g) == pytest.approx(norms.inner(g, f), rel=1e-14, abs=1e-14)
    assert norms.l2(f) ** 2 == pytest.approx(norms.inner(f, f), rel=1e-12)
    assert norms.l2(f + g) <= norms.l2(f) + norms.l2(g) + 1e-12
