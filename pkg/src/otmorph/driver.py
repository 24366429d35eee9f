"""Fixed-point iteration coupling the elliptic and transport solvers.

Starting from the lifting, each sweep

1. computes ``eta`` and the boundary constant ``C(t_k)`` on every slice,
2. solves the Dirichlet potential problem for ``phi`` with ``phi = C(t_k)``,
3. sets ``v = grad phi`` (zero on the boundary),
4. recomputes the density as the least-squares solution of the continuity
   equation with both endpoint conditions,

until consecutive densities agree to ``fp_tol`` in relative L2(Q).
"""

from __future__ import annotations

import logging
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .config import SolverConfig
from .errors import OtmorphError, ShapeError
from .fields import (
    ScalarField2D,
    SpaceTimeField,
    VelocityField,
    interpolate_lifting,
    time_derivative,
)
from .elliptic import solve_eta_and_constant, solve_potential, velocity_from_potential
from .mesh import SpaceTimeGrid, gauss_rule, shape_functions
from .transport import assemble_lsq, lsq_residual, solve_transport, _tables

logger = logging.getLogger(__name__)

__all__ = [
    "IterationRecord",
    "IterationReport",
    "run_fixed_point",
    "compute_velocity",
    "bb_cost",
    "conservation_residual",
    "thread_count",
]


def thread_count() -> int:
    """Worker threads from ``OTMORPH_THREADS``; 0 (the default) is sequential."""
    raw = os.environ.get("OTMORPH_THREADS", "0").strip() or "0"
    try:
        return max(int(raw), 0)
    except ValueError:
        logger.warning("ignoring non-integer OTMORPH_THREADS=%r", raw)
        return 0


@dataclass
class IterationRecord:
    iteration: int
    fp_residual_l2: float
    fp_residual_max: float
    cost: float
    lsq_residual: float
    mass_drift: list
    max_mass_drift: float
    cg_iterations_elliptic: int
    cg_iterations_transport: int
    neumann_projection_residual: float
    boundary_constants: list
    clamped_nodes: int


@dataclass
class IterationReport:
    records: list = field(default_factory=list)
    verdict: str = "not-run"
    config: dict = field(default_factory=dict)
    timings: dict = field(default_factory=dict)

    @property
    def converged(self) -> bool:
        return self.verdict == "converged"

    @property
    def iterations(self) -> int:
        return len(self.records)

    @property
    def final(self) -> IterationRecord:
        return self.records[-1]

    def to_dict(self) -> dict:
        return {
            "verdict": self.verdict,
            "iterations": self.iterations,
            "config": self.config,
            "records": [asdict(r) for r in self.records],
            "timings": self.timings,
        }


def _solve_slice(rho_k, dt_k, cfg):
    res = solve_eta_and_constant(rho_k, dt_k, cfg, return_info=True)
    phi, info = solve_potential(rho_k, dt_k, res.C, cfg, return_info=True)
    return velocity_from_potential(phi), res.C, res.projection_residual, res.info.iterations + info.iterations


def compute_velocity(rho: SpaceTimeField, cfg: SolverConfig, threads: int | None = None):
    """Velocity of one sweep for the density iterate ``rho``.

    Returns ``(velocity, boundary_constants, max_projection_residual, cg_iterations)``.
    """
    grid = rho.grid
    dtrho = time_derivative(rho)
    jobs = [(rho.slice(k), dtrho.slice(k)) for k in range(grid.nt)]
    threads = thread_count() if threads is None else threads
    if threads > 0:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(lambda job: _solve_slice(*job, cfg), jobs))
    else:
        results = [_solve_slice(r, d, cfg) for r, d in jobs]
    v = np.stack([r[0] for r in results])
    constants = [float(r[1]) for r in results]
    proj = max(r[2] for r in results)
    iters = sum(r[3] for r in results)
    return VelocityField(grid, v), constants, proj, iters


def run_fixed_point(
    rho0: ScalarField2D,
    rho1: ScalarField2D,
    cfg: SolverConfig,
    threads: int | None = None,
) -> tuple[SpaceTimeField, VelocityField, IterationReport]:
    """Run the fixed-point loop; never raises on non-convergence.

    Solver errors are re-raised with the failing iteration attached.
    """
    if rho0.grid != rho1.grid:
        raise ShapeError("rho0 and rho1 live on different grids")
    grid = SpaceTimeGrid(rho0.grid, cfg.nt)
    report = IterationReport(config=cfg.to_dict())
    t_start = time.perf_counter()
    lifting = interpolate_lifting(rho0, rho1, grid)
    mass0 = rho0.integral()
    norm0 = lifting.l2_norm()
    rho = lifting
    v = VelocityField.zeros(grid)
    floor = 0.5 * cfg.beta_min
    for n in range(1, cfg.fp_max_iter + 1):
        try:
            v, constants, proj, it_ell = compute_velocity(rho, cfg, threads)
            system = assemble_lsq(v, lifting, cfg, rho_prev=rho)
            new, info = solve_transport(system, cfg, return_info=True)
        except OtmorphError as exc:
            exc.iteration = n
            exc.args = (f"fixed-point iteration {n}: {exc}",) + exc.args[1:]
            raise
        vals = new.values
        if cfg.relaxation != 1.0:
            vals = (1.0 - cfg.relaxation) * rho.values + cfg.relaxation * vals
        clamped = int(np.count_nonzero(vals < floor))
        if clamped:
            logger.warning("iteration %d: clamping %d nodes below %.3g", n, clamped, floor)
            vals = np.maximum(vals, floor)
        new = SpaceTimeField(grid, vals)
        diff = SpaceTimeField(grid, new.values - rho.values)
        res_l2 = diff.l2_norm() / norm0
        res_max = float(np.max(np.abs(diff.values)))
        rho = new
        masses = rho.masses()
        drift = ((masses - mass0) / mass0).tolist()
        report.records.append(
            IterationRecord(
                iteration=n,
                fp_residual_l2=res_l2,
                fp_residual_max=res_max,
                cost=bb_cost(rho, v),
                lsq_residual=lsq_residual(rho, v),
                mass_drift=drift,
                max_mass_drift=float(np.max(np.abs(drift))),
                cg_iterations_elliptic=int(it_ell),
                cg_iterations_transport=int(info.iterations),
                neumann_projection_residual=float(proj),
                boundary_constants=constants,
                clamped_nodes=clamped,
            )
        )
        logger.info(
            "iteration %d: residual %.3e cost %.6g lsq %.3e", n, res_l2, report.records[-1].cost,
            report.records[-1].lsq_residual,
        )
        if not np.isfinite(res_l2):
            report.verdict = "diverged"
            break
        if res_l2 <= cfg.fp_tol:
            report.verdict = "converged"
            break
    else:
        report.verdict = "max-iterations"
    report.timings = {"total_seconds": time.perf_counter() - t_start}
    return rho, v, report


def _quad_values(field_values: np.ndarray, grid: SpaceTimeGrid) -> np.ndarray:
    N, _, _ = _tables(grid)
    flat = field_values.reshape(grid.n_nodes, -1)
    return np.einsum("qa,eac->eqc", N, flat[grid.elements])


def bb_cost(rho: SpaceTimeField, v: VelocityField) -> float:
    """Kinetic energy ``integral over Q of rho |v|^2`` by trilinear brick quadrature."""
    if rho.grid != v.grid:
        raise ShapeError("velocity and density live on different grids")
    _, _, wJ = _tables(rho.grid)
    rq = _quad_values(rho.values, rho.grid)[..., 0]
    vq = _quad_values(v.values, rho.grid)
    return float(np.sum(wJ[None, :] * rq * np.sum(vq**2, axis=-1)))


def conservation_residual(rho: SpaceTimeField, v: VelocityField) -> tuple[np.ndarray, float]:
    """Per-slice L2(Omega) norms of ``d_t rho + div(v rho)`` and the total over Q.

    Per-slice values use the nodal second-order time derivative and bilinear
    interpolants on the slice; the total is :func:`lsq_residual`.
    """
    if rho.grid != v.grid:
        raise ShapeError("velocity and density live on different grids")
    grid = rho.grid
    sp_grid = grid.spatial
    rule = gauss_rule(2, 2)
    N, dN = shape_functions("quad4", rule.points)
    G = dN / np.array([sp_grid.hx, sp_grid.hy])
    wJ = rule.weights * sp_grid.hx * sp_grid.hy
    conn = sp_grid.elements
    dt = time_derivative(rho).values.reshape(grid.nt, -1)
    r_vals = rho.values.reshape(grid.nt, -1)
    v_vals = v.values.reshape(grid.nt, -1, 2)
    out = np.empty(grid.nt)
    for k in range(grid.nt):
        re = r_vals[k][conn]
        vx = v_vals[k][conn, 0]
        vy = v_vals[k][conn, 1]
        res = (
            dt[k][conn] @ N.T
            + (vx @ N.T) * (re @ G[:, :, 0].T)
            + (vy @ N.T) * (re @ G[:, :, 1].T)
            + (re @ N.T) * (vx @ G[:, :, 0].T + vy @ G[:, :, 1].T)
        )
        out[k] = np.sqrt(np.sum(res**2 * wJ[None, :]))
    return out, lsq_residual(rho, v)
