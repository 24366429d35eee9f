"""Mesh-refinement studies with known exact solutions."""

from __future__ import annotations

import numpy as np

from .config import SolverConfig
from .elliptic import solve_potential
from .fields import ScalarField2D, VelocityField, interpolate_lifting
from .mesh import Grid2D, build_space_time_grid, gauss_rule, shape_functions
from .transport import assemble_lsq, solve_transport


def l2_error_bilinear(field: ScalarField2D, exact) -> float:
    """Continuous L2 norm of ``bilinear(field) - exact`` with 3x3 Gauss per element."""
    grid = field.grid
    rule = gauss_rule(2, 3)
    N, _ = shape_functions("quad4", rule.points)
    conn = grid.elements
    uh = field.values.ravel()[conn] @ N.T  # (E, Q)
    j, i = np.divmod(conn[:, 0], grid.nx)
    xq = (i[:, None] + rule.points[None, :, 0]) * grid.hx
    yq = (j[:, None] + rule.points[None, :, 1]) * grid.hy
    err = uh - exact(xq, yq)
    return float(np.sqrt(np.sum(err**2 * rule.weights[None, :]) * grid.hx * grid.hy))


def sine_exact(x, y):
    return np.sin(np.pi * x) * np.sin(np.pi * y)


def elliptic_manufactured_error(n: int, cfg: SolverConfig | None = None, C: float = 0.0) -> float:
    """L2 error of the potential solve for ``rho = 1`` and ``phi = sin(pi x) sin(pi y) + C``."""
    cfg = cfg or SolverConfig()
    grid = Grid2D(n, n)
    rho = ScalarField2D.constant(grid, 1.0)
    rhs = ScalarField2D.from_function(grid, lambda X, Y: 2.0 * np.pi**2 * sine_exact(X, Y))
    phi = solve_potential(rho, rhs, C, cfg)
    return l2_error_bilinear(phi, lambda x, y: sine_exact(x, y) + C)


def translation_bump(shift: float = 0.0, center=(0.35, 0.5), width: float = 0.08, floor: float = 0.2):
    cx, cy = center
    return lambda X, Y: floor + 0.8 * np.exp(-((X - cx - shift) ** 2 + (Y - cy) ** 2) / (2 * width**2))


def transport_translation_error(
    nx: int, nt: int, speed: float = 0.2, cfg: SolverConfig | None = None
) -> float:
    """Relative nodal L2 error of the least-squares transport for a rigid translation.

    The velocity is the constant ``(speed, 0)`` everywhere (boundary included),
    so the exact density is the translated bump.
    """
    cfg = cfg or SolverConfig()
    grid = build_space_time_grid(nx, nx, nt)
    bump = translation_bump()
    rho0 = ScalarField2D.from_function(grid.spatial, bump)
    rho1 = ScalarField2D.from_function(grid.spatial, lambda X, Y: bump(X - speed, Y))
    v = VelocityField.constant(grid, speed, 0.0)
    lifting = interpolate_lifting(rho0, rho1, grid)
    rho = solve_transport(assemble_lsq(v, lifting, cfg, require_zero_boundary=False), cfg)
    T, Y, X = np.meshgrid(grid.times, grid.spatial.y, grid.spatial.x, indexing="ij")
    exact = bump(X - speed * T, Y)
    return float(np.linalg.norm(rho.values - exact) / np.linalg.norm(exact))


def observed_orders(hs, errors) -> list:
    """Orders between consecutive refinements; the first entry is ``nan``."""
    out = [float("nan")]
    for k in range(1, len(hs)):
        out.append(float(np.log(errors[k - 1] / errors[k]) / np.log(hs[k - 1] / hs[k])))
    return out


def run_studies(cfg: SolverConfig) -> list[dict]:
    """Rows ``case, n, nt, h, error, order`` for both refinement studies."""
    rows = []
    ns = list(cfg.convergence_elliptic_n)
    errs = [elliptic_manufactured_error(n, cfg) for n in ns]
    hs = [1.0 / (n - 1) for n in ns]
    for n, h, e, p in zip(ns, hs, errs, observed_orders(hs, errs)):
        rows.append({"case": "elliptic", "n": n, "nt": "", "h": h, "error": e, "order": p})
    ns = list(cfg.convergence_transport_n)
    nts = [max(3, (n - 1) // 2 + 1) for n in ns]
    errs = [transport_translation_error(n, nt, cfg=cfg) for n, nt in zip(ns, nts)]
    hs = [1.0 / (n - 1) for n in ns]
    for n, nt, h, e, p in zip(ns, nts, hs, errs, observed_orders(hs, errs)):
        rows.append({"case": "transport", "n": n, "nt": nt, "h": h, "error": e, "order": p})
    return rows
