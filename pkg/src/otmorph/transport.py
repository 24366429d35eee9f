"""Space-time least-squares solver for the continuity equation.

Given per-slice nodal velocities ``v`` and the lifting ``(1 - t) rho0 + t rho1``,
the density is ``rho = lifting + c`` where ``c`` vanishes on the first and
last slice and minimises

    J(c) = 1/2 * || d_t rho + div(v rho) ||^2_{L2(Q)}.

The unknowns live on trilinear brick elements; the velocity inside a brick is
the trilinear interpolant of its eight nodal values, and everything is
integrated with 2x2x2 Gauss.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import scipy.sparse as sp

from .config import SolverConfig
from .errors import ShapeError
from .fields import SpaceTimeField, VelocityField
from .linalg import pcg
from .mesh import SpaceTimeGrid, gauss_rule, shape_functions

__all__ = [
    "LsqSystem",
    "assemble_lsq",
    "solve_transport",
    "lsq_residual",
    "transport_images",
    "space_time_mass_matrix",
]


@lru_cache(maxsize=16)
def _tables(grid: SpaceTimeGrid):
    rule = gauss_rule(3, 2)
    N, dN = shape_functions("brick8", rule.points)
    dN = dN / np.array([grid.spatial.hx, grid.spatial.hy, grid.dt])
    wJ = rule.weights * grid.spatial.hx * grid.spatial.hy * grid.dt
    return N, dN, wJ


def transport_images(v: VelocityField) -> tuple[np.ndarray, np.ndarray]:
    """Values of ``d_t psi_a + div(v psi_a)`` at every brick quadrature point.

    Returns ``(L, wJ)`` with ``L`` of shape ``(n_bricks, 8 quad points, 8 basis)``.
    """
    grid = v.grid
    N, dN, wJ = _tables(grid)
    conn = grid.elements
    vflat = v.values.reshape(-1, 2)
    vx = vflat[conn, 0]  # (E, 8)
    vy = vflat[conn, 1]
    vxq = vx @ N.T  # (E, Q)
    vyq = vy @ N.T
    divq = vx @ dN[:, :, 0].T + vy @ dN[:, :, 1].T
    L = (
        dN[None, :, :, 2]
        + vxq[:, :, None] * dN[None, :, :, 0]
        + vyq[:, :, None] * dN[None, :, :, 1]
        + divq[:, :, None] * N[None, :, :]
    )
    return L, wJ


def _scatter(grid: SpaceTimeGrid, local: np.ndarray) -> sp.csr_matrix:
    conn = grid.elements
    rows = np.repeat(conn, 8, axis=1).ravel()
    cols = np.tile(conn, (1, 8)).ravel()
    n = grid.n_nodes
    return sp.coo_matrix((local.ravel(), (rows, cols)), shape=(n, n)).tocsr()


@lru_cache(maxsize=8)
def space_time_mass_matrix(grid: SpaceTimeGrid) -> sp.csr_matrix:
    N, _, wJ = _tables(grid)
    local = np.einsum("q,qa,qb->ab", wJ, N, N)
    return _scatter(grid, np.broadcast_to(local, (len(grid.elements), 8, 8)))


def _check_grid(v: VelocityField, rho: SpaceTimeField):
    if v.grid != rho.grid:
        raise ShapeError("velocity and density live on different grids")


@dataclass(frozen=True, eq=False)
class LsqSystem:
    """Normal equations restricted to slices ``1 .. nt-2``.

    ``full_operator`` is the Gram matrix over all nodes; ``operator`` is its
    interior block plus the optional Tikhonov shift.
    """

    operator: sp.csr_matrix
    load: np.ndarray
    lifting: SpaceTimeField
    full_operator: sp.csr_matrix
    velocity: VelocityField
    eps: float = 0.0

    @property
    def dof_slice(self) -> slice:
        per = self.lifting.grid.spatial.n_nodes
        return slice(per, (self.lifting.grid.nt - 1) * per)

    def objective(self, c: np.ndarray) -> float:
        """``J(c)`` from the assembled quadratic form (Tikhonov term excluded)."""
        rho = self.lifting.values.ravel().copy()
        rho[self.dof_slice] += c
        return 0.5 * float(rho @ (self.full_operator @ rho))


def assemble_lsq(
    v: VelocityField,
    lifting: SpaceTimeField,
    cfg: SolverConfig,
    rho_prev: SpaceTimeField | None = None,
    require_zero_boundary: bool = True,
) -> LsqSystem:
    """Assemble the least-squares normal equations for the correction ``c``.

    The load is ``-integral div~(v lifting) div~(v psi_j)``. With
    ``cfg.legacy_rhs`` the term ``-integral d_t rho_prev div~(v psi_j)`` is
    added as well (``rho_prev`` is then required).
    """
    _check_grid(v, lifting)
    if require_zero_boundary and not v.boundary_is_zero():
        raise ShapeError("velocity must vanish on boundary nodes of every slice")
    grid = v.grid
    L, wJ = transport_images(v)
    local = np.einsum("eqa,eqb,q->eab", L, L, wJ)
    A = _scatter(grid, local)
    sl = slice(grid.spatial.n_nodes, (grid.nt - 1) * grid.spatial.n_nodes)
    lift = lifting.values.ravel()
    b = -(A @ lift)[sl]
    if cfg.legacy_rhs:
        if rho_prev is None:
            raise ValueError("legacy_rhs requires the previous density iterate")
        _check_grid(v, rho_prev)
        _, dN, _ = _tables(grid)
        dtq = rho_prev.values.ravel()[grid.elements] @ dN[:, :, 2].T  # (E, Q)
        extra = np.einsum("eq,eqa,q->ea", dtq, L, wJ)
        full = np.zeros(grid.n_nodes)
        np.add.at(full, grid.elements, -extra)
        b = b + full[sl]
    A_II = A[sl][:, sl]
    if cfg.lsq_eps > 0:
        A_II = (A_II + cfg.lsq_eps * space_time_mass_matrix(grid)[sl][:, sl]).tocsr()
    return LsqSystem(A_II, b, lifting, A, v, cfg.lsq_eps)


def solve_transport(sys: LsqSystem, cfg: SolverConfig, return_info: bool = False):
    """Solve the normal equations and return ``lifting + c``.

    Endpoint slices are copied from the lifting, so they are exact.
    """
    c, info = pcg(sys.operator, sys.load, cfg.cg_tol, cfg.max_iter_for(len(sys.load)))
    rho = sys.lifting.values.copy()
    inner = rho[1:-1].reshape(-1)
    inner += c
    rho[1:-1] = inner.reshape(rho[1:-1].shape)
    field = SpaceTimeField(sys.lifting.grid, rho)
    return (field, info) if return_info else field


def lsq_residual(rho: SpaceTimeField, v: VelocityField) -> float:
    """``integral over Q of (d_t rho + div(v rho))^2`` by brick quadrature (= 2 J)."""
    _check_grid(v, rho)
    L, wJ = transport_images(v)
    r = np.einsum("eqa,ea->eq", L, rho.values.ravel()[rho.grid.elements])
    return float(np.sum(r**2 * wJ[None, :]))

