"""Per-slice solvers for the weighted elliptic problems behind the velocity.

For a density slice ``rho`` the discrete operator is the bilinear Galerkin
matrix of ``-div(rho grad .)`` on the unit square. Two problems use it:

* the Dirichlet potential problem ``-div(rho grad phi) = d_t rho`` with
  ``phi = C`` on the boundary, whose gradient is the velocity, and
* the Neumann problem ``-div(rho grad eta) = 0``, ``rho d_n eta = 1``, which
  only serves to define the boundary constant ``C``.

The Neumann data has nonzero net flux, so the load is projected onto the
range of the (singular) operator before solving, and ``eta`` is pinned to
zero mean. ``C`` shifts ``phi`` by a constant and never changes the velocity.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import scipy.sparse as sp

from .config import SolverConfig
from .errors import EllipticityError, ShapeError
from .fields import ScalarField2D
from .linalg import CGInfo, pcg
from .mesh import Grid2D, gauss_rule, shape_functions

__all__ = [
    "assemble_stiffness",
    "mass_matrix",
    "solve_potential",
    "solve_eta_and_constant",
    "velocity_from_potential",
    "EtaResult",
]


@lru_cache(maxsize=16)
def _reference_tables(grid: Grid2D):
    rule = gauss_rule(2, 2)
    N, dN = shape_functions("quad4", rule.points)
    G = dN / np.array([grid.hx, grid.hy])
    wJ = rule.weights * grid.hx * grid.hy
    return N, G, wJ


def _scatter(grid: Grid2D, local: np.ndarray) -> sp.csr_matrix:
    conn = grid.elements
    rows = np.repeat(conn, 4, axis=1).ravel()
    cols = np.tile(conn, (1, 4)).ravel()
    n = grid.n_nodes
    return sp.coo_matrix((local.ravel(), (rows, cols)), shape=(n, n)).tocsr()


def assemble_stiffness(rho_slice: ScalarField2D, floor: float = 0.0) -> sp.csr_matrix:
    """Matrix of ``integral rho grad psi_i . grad psi_j`` over all nodes.

    ``rho`` is interpolated bilinearly and integrated with 2x2 Gauss, which
    is exact for this integrand. Raises :class:`EllipticityError` if the
    coefficient drops below ``floor`` or is not positive.
    """
    grid = rho_slice.grid
    rho = rho_slice.values
    rmin = float(rho.min())
    if not rmin > 0.0 or rmin < floor:
        raise EllipticityError(
            f"density coefficient {rmin:.4g} below positivity floor {max(floor, 0.0):.4g}"
        )
    N, G, wJ = _reference_tables(grid)
    rho_e = rho.ravel()[grid.elements]  # (E, 4)
    rho_q = rho_e @ N.T  # (E, Q)
    GG = np.einsum("qad,qbd->qab", G, G)
    local = np.einsum("eq,qab->eab", rho_q * wJ, GG)
    return _scatter(grid, local)


@lru_cache(maxsize=16)
def mass_matrix(grid: Grid2D) -> sp.csr_matrix:
    N, _, wJ = _reference_tables(grid)
    local = np.einsum("q,qa,qb->ab", wJ, N, N)
    return _scatter(grid, np.broadcast_to(local, (len(grid.elements), 4, 4)))


@lru_cache(maxsize=16)
def _boundary_load(grid: Grid2D) -> np.ndarray:
    """``integral over the boundary of psi_i ds`` (exact for piecewise-linear traces)."""
    g = np.zeros(grid.shape)
    g[0, :] += grid.hx
    g[-1, :] += grid.hx
    g[:, 0] += grid.hy
    g[:, -1] += grid.hy
    g[0, [0, -1]] -= 0.5 * grid.hx
    g[-1, [0, -1]] -= 0.5 * grid.hx
    g[[0, -1], 0] -= 0.5 * grid.hy
    g[[0, -1], -1] -= 0.5 * grid.hy
    g = g.ravel()
    g.setflags(write=False)
    return g


def _check_pair(a: ScalarField2D, b: ScalarField2D):
    if a.grid != b.grid:
        raise ShapeError("density and right-hand side live on different grids")


def solve_potential(
    rho_slice: ScalarField2D,
    rhs_slice: ScalarField2D,
    C: float,
    cfg: SolverConfig,
    return_info: bool = False,
):
    """Dirichlet problem ``-div(rho grad phi) = rhs``, ``phi = C`` on the boundary.

    The load is the consistent-mass integral of ``rhs`` against the test
    functions. Interior values come from Jacobi-PCG at ``cfg.cg_tol``.
    """
    _check_pair(rho_slice, rhs_slice)
    grid = rho_slice.grid
    A = assemble_stiffness(rho_slice, floor=0.5 * cfg.beta_min)
    F = mass_matrix(grid) @ rhs_slice.values.ravel()
    inner = grid.interior_indices
    phi = np.full(grid.n_nodes, float(C))
    A_II = A[inner][:, inner]
    # rows of A annihilate constants, so phi - C solves the homogeneous problem
    w, info = pcg(A_II, F[inner], cfg.cg_tol, cfg.max_iter_for(len(inner)))
    phi[inner] += w
    field = ScalarField2D(grid, phi)
    return (field, info) if return_info else field


@dataclass(frozen=True)
class EtaResult:
    eta: ScalarField2D
    C: float
    projection_residual: float
    info: CGInfo


def solve_eta(rho_slice: ScalarField2D, cfg: SolverConfig) -> tuple[ScalarField2D, float, CGInfo]:
    """Projected Neumann problem; returns ``(eta, projection_residual, info)``.

    ``projection_residual`` is the relative size of the part of the boundary
    load that had to be removed to make the problem solvable.
    """
    grid = rho_slice.grid
    A = assemble_stiffness(rho_slice, floor=0.5 * cfg.beta_min)
    g = _boundary_load(grid)
    g_proj = g - g.mean()
    proj_res = float(np.linalg.norm(g - g_proj) / np.linalg.norm(g))
    eta, info = pcg(A, g_proj, cfg.cg_tol, cfg.max_iter_for(grid.n_nodes))
    eta = eta.reshape(grid.shape)
    eta -= grid.integrate(eta)  # unit area, so this is the mean
    return ScalarField2D(grid, eta), proj_res, info


def solve_eta_and_constant(
    rho_slice: ScalarField2D,
    dtrho_slice: ScalarField2D,
    cfg: SolverConfig,
    return_info: bool = False,
):
    """Return ``(eta, C)`` with ``C = (1/|boundary|) * integral(dtrho * eta)``.

    With ``return_info`` an :class:`EtaResult` is returned instead.
    """
    _check_pair(rho_slice, dtrho_slice)
    grid = rho_slice.grid
    eta, proj_res, info = solve_eta(rho_slice, cfg)
    perimeter = 4.0
    C = float(dtrho_slice.values.ravel() @ (mass_matrix(grid) @ eta.values.ravel())) / perimeter
    if return_info:
        return EtaResult(eta, C, proj_res, info)
    return eta, C


def velocity_from_potential(phi: ScalarField2D) -> np.ndarray:
    """Nodal ``grad phi`` of shape ``(ny, nx, 2)``, zero on the boundary.

    Each element's bilinear gradient is evaluated at the node and averaged
    over the elements sharing it (equal areas on a uniform grid).
    """
    grid = phi.grid
    p = phi.values
    dx = (p[:, 1:] - p[:, :-1]) / grid.hx  # x-gradient along each row, per element column
    dy = (p[1:, :] - p[:-1, :]) / grid.hy
    gx = np.zeros(grid.shape)
    gy = np.zeros(grid.shape)
    cnt = np.zeros(grid.shape)
    # an element (j, i) contributes dx[j or j+1, i] to its four corners
    for oj in (0, 1):
        for oi in (0, 1):
            rows = slice(oj, grid.ny - 1 + oj)
            cols = slice(oi, grid.nx - 1 + oi)
            gx[rows, cols] += dx[rows, :]
            gy[rows, cols] += dy[:, cols]
            cnt[rows, cols] += 1.0
    v = np.stack([gx / cnt, gy / cnt], axis=-1)
    v[grid.boundary_mask] = 0.0
    return v
