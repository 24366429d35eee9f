import numpy as np
import pytest

from otmorph.config import SolverConfig
from otmorph.elliptic import (
    assemble_stiffness,
    mass_matrix,
    solve_eta,
    solve_eta_and_constant,
    solve_potential,
    velocity_from_potential,
)
from otmorph.errors import EllipticityError
from otmorph.fields import ScalarField2D
from otmorph.mesh import Grid2D
from otmorph.studies import elliptic_manufactured_error, observed_orders

CFG = SolverConfig()


def test_unit_density_stiffness_stencil():
    g = Grid2D(5, 5)
    A = assemble_stiffness(ScalarField2D.constant(g, 1.0)).toarray()
    center = 2 * 5 + 2
    assert A[center, center] == pytest.approx(8 / 3)
    assert A[center, center + 1] == pytest.approx(-1 / 3)
    assert A[center, center + 6] == pytest.approx(-1 / 3)
    assert np.allclose(A.sum(axis=1), 0.0, atol=1e-13)
    assert np.allclose(A, A.T)


def test_stiffness_spd_on_interior_for_variable_density():
    g = Grid2D(7, 6)
    rho = ScalarField2D.from_function(g, lambda X, Y: 0.2 + X * Y + np.sin(3 * X) ** 2)
    A = assemble_stiffness(rho).toarray()
    inner = g.interior_indices
    assert np.linalg.eigvalsh(A[np.ix_(inner, inner)]).min() > 0
    # scales linearly with rho
    A2 = assemble_stiffness(ScalarField2D(g, 2 * rho.values)).toarray()
    assert np.allclose(A2, 2 * A)


def test_stiffness_rejects_non_positive_density():
    g = Grid2D(4, 4)
    vals = np.ones(g.shape)
    vals[1, 1] = 0.0
    with pytest.raises(EllipticityError):
        assemble_stiffness(ScalarField2D(g, vals))
    with pytest.raises(EllipticityError):
        assemble_stiffness(ScalarField2D.constant(g, 0.04), floor=0.05)


def test_mass_matrix_total():
    g = Grid2D(6, 9)
    M = mass_matrix(g)
    assert M.sum() == pytest.approx(1.0)


def test_manufactured_solution_second_order():
    errs = [elliptic_manufactured_error(n, CFG) for n in (9, 17, 33)]
    orders = observed_orders([1 / 8, 1 / 16, 1 / 32], errs)
    assert all(abs(p - 2.0) <= 0.2 for p in orders[1:])


def test_boundary_constant_shifts_solution():
    g = Grid2D(9, 9)
    rho = ScalarField2D.from_function(g, lambda X, Y: 0.5 + X)
    rhs = ScalarField2D.from_function(g, lambda X, Y: np.cos(X + 2 * Y))
    a = solve_potential(rho, rhs, 0.0, CFG)
    b = solve_potential(rho, rhs, 7.0, CFG)
    assert np.all(b.boundary_values() == 7.0)
    assert np.allclose(b.values - a.values, 7.0, atol=1e-12)


def test_galerkin_residual():
    g = Grid2D(11, 8)
    rho = ScalarField2D.from_function(g, lambda X, Y: 0.3 + X**2 + Y)
    rhs = ScalarField2D.from_function(g, lambda X, Y: X - Y)
    phi = solve_potential(rho, rhs, 0.4, CFG)
    A = assemble_stiffness(rho)
    F = mass_matrix(g) @ rhs.values.ravel()
    r = (A @ phi.values.ravel() - F)[g.interior_indices]
    assert np.linalg.norm(r) <= 1e-9 * np.linalg.norm(F[g.interior_indices])


def test_eta_zero_mean_and_solves_projected_problem():
    g = Grid2D(9, 9)
    rho = ScalarField2D.from_function(g, lambda X, Y: 0.5 + 0.4 * X * Y)
    eta, proj, _ = solve_eta(rho, CFG)
    assert abs(g.integrate(eta.values)) < 1e-14
    assert 0 <= proj < 1
    A = assemble_stiffness(rho)
    r = A @ eta.values.ravel()
    # the applied load is the boundary flux minus its Euclidean mean
    assert abs(r.sum()) < 1e-9
    boundary = g.boundary_mask.ravel()
    assert np.all(r[boundary] > r[~boundary].max())


def test_eta_constant_vanishes_for_zero_time_derivative():
    g = Grid2D(9, 9)
    rho = ScalarField2D.constant(g, 1.0)
    eta, C = solve_eta_and_constant(rho, ScalarField2D.constant(g, 0.0), CFG)
    assert C == 0.0


def test_eta_symmetric_for_symmetric_density():
    g = Grid2D(9, 9)
    rho = ScalarField2D.from_function(g, lambda X, Y: 1 + (X - 0.5) ** 2 + (Y - 0.5) ** 2)
    eta, _, _ = solve_eta(rho, CFG)
    assert np.allclose(eta.values, eta.values[:, ::-1], atol=1e-8)
    assert np.allclose(eta.values, eta.values.T, atol=1e-8)


def test_velocity_examples():
    g = Grid2D(7, 5)
    v = velocity_from_potential(ScalarField2D.from_function(g, lambda X, Y: 2 * X - Y))
    assert np.allclose(v[1:-1, 1:-1], [2.0, -1.0])
    assert np.all(v[g.boundary_mask] == 0.0)
    v = velocity_from_potential(ScalarField2D.from_function(g, lambda X, Y: X**2))
    assert np.allclose(v[1:-1, 1:-1, 0], 2 * g.x[None, 1:-1])
