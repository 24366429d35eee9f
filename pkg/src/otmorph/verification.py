"""Oracle checks on a finished run directory (used by ``otmorph verify``)."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .config import SolverConfig
from .driver import bb_cost, conservation_residual
from .errors import IngestionError
from .fields import ScalarField2D, SpaceTimeField, VelocityField
from .mesh import build_space_time_grid
from .oracle import integrate_flows, representation_density, w2_1d_oracle
from .storage import load_array

REPRESENTATION_TOL = 5e-2
MASS_DRIFT_TOL = 1e-2
RESIDUAL_MATCH_TOL = 1e-9
DUALITY_TOL = 1e-8
W2_TOL = 0.10
N_FLOW_SAMPLES = 128


def load_run(run_dir):
    run_dir = Path(run_dir)
    cfg_path = run_dir / "config.json"
    if not cfg_path.exists():
        raise IngestionError("run directory has no config.json", cfg_path)
    cfg = SolverConfig.from_json(cfg_path)
    try:
        report = json.loads((run_dir / "report.json").read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise IngestionError(f"cannot read report: {exc}", run_dir / "report.json") from exc
    grid = build_space_time_grid(cfg.nx, cfg.ny, cfg.nt)
    arrays = {}
    checksums = {}
    for name in ("rho0", "rho1", "rho", "velocity"):
        arrays[name], _, checksums[name] = load_array(run_dir, name)
    try:
        rho0 = ScalarField2D(grid.spatial, arrays["rho0"])
        rho1 = ScalarField2D(grid.spatial, arrays["rho1"])
        rho = SpaceTimeField(grid, arrays["rho"])
        v = VelocityField(grid, arrays["velocity"])
    except ValueError as exc:
        raise IngestionError(f"stored fields do not match the configured grid: {exc}", run_dir) from exc
    return cfg, report, rho0, rho1, rho, v, checksums


def is_y_constant(field: ScalarField2D, tol: float = 1e-12) -> bool:
    vals = field.values
    return bool(np.max(np.abs(vals - vals[:1, :])) <= tol)


def verify_run(run_dir, seed: int = 0) -> dict:
    """Run every applicable check; returns ``{"passed": bool, "checks": {...}}``."""
    cfg, report, rho0, rho1, rho, v, checksums = load_run(run_dir)
    checks = {}

    checks["checksums"] = {"passed": all(checksums.values()), "fields": checksums}

    ends_ok = bool(
        np.array_equal(rho.values[0], rho0.values) and np.array_equal(rho.values[-1], rho1.values)
    )
    checks["endpoints"] = {"passed": ends_ok}

    try:
        rep = representation_density(rho, v, rho0, rho1, cfg)
        rel = float(np.linalg.norm(rep.values - rho.values) / np.linalg.norm(rho.values))
        checks["representation_formula"] = {
            "passed": rel <= REPRESENTATION_TOL, "relative_l2": rel, "tolerance": REPRESENTATION_TOL,
        }
    except ValueError as exc:
        checks["representation_formula"] = {"passed": False, "error": str(exc)}

    per_slice, total = conservation_residual(rho, v)
    masses = rho.masses()
    drift = float(np.max(np.abs(masses - rho0.integral())) / rho0.integral())
    records = report.get("records") or []
    recorded = records[-1]["lsq_residual"] if records else float("nan")
    match = abs(total - recorded) <= RESIDUAL_MATCH_TOL * max(abs(recorded), 1e-300) or total == recorded
    checks["conservation"] = {
        "passed": bool(match and drift <= MASS_DRIFT_TOL),
        "lsq_residual": total,
        "recorded_lsq_residual": recorded,
        "per_slice_residual": per_slice.tolist(),
        "max_mass_drift": drift,
        "mass_drift_tolerance": MASS_DRIFT_TOL,
    }

    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(N_FLOW_SAMPLES):
        s, t = rng.uniform(0.0, 1.0, 2)
        x = rng.uniform(0.0, 1.0, (1, 2))
        a = integrate_flows(v, 1, s, t, x, cfg)
        b = integrate_flows(v, -1, 1.0 - s, 1.0 - t, x, cfg)
        worst = max(worst, float(np.max(np.abs(a - b))))
    checks["flow_duality"] = {"passed": worst <= DUALITY_TOL, "max_error": worst, "samples": N_FLOW_SAMPLES}

    if is_y_constant(rho0) and is_y_constant(rho1):
        w2 = w2_1d_oracle(rho0.values[0], rho1.values[0], rho0.grid.x)
        cost = bb_cost(rho, v)
        rel = abs(cost - w2) / w2 if w2 > 0 else abs(cost)
        checks["w2_1d"] = {"passed": bool(rel <= W2_TOL), "cost": cost, "w2_squared": w2, "relative_error": rel}

    return {"passed": all(c["passed"] for c in checks.values()), "seed": seed, "checks": checks}
