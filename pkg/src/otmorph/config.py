"""Solver configuration shared by all stages."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, fields
from pathlib import Path

from .errors import ConfigError


@dataclass(frozen=True)
class SolverConfig:
    """Numerical knobs for the whole pipeline.

    ``cg_max_iter`` of ``None`` means ``10 * n`` for a system of size ``n``.
    ``legacy_rhs`` adds the extra ``-d/dt rho^n`` term to the transport load.
    ``relaxation`` blends successive iterates (1.0 = plain fixed point).
    The ``convergence_*`` lists drive the refinement study command.
    """

    beta_min: float = 0.1
    beta_max: float = 1.0
    boundary_tol: float = 0.05
    cg_tol: float = 1e-10
    cg_max_iter: int | None = None
    lsq_eps: float = 0.0
    fp_tol: float = 1e-6
    fp_max_iter: int = 50
    nt: int = 11
    nx: int = 33
    ny: int = 33
    rk4_substeps: int = 16
    legacy_rhs: bool = False
    relaxation: float = 1.0
    convergence_elliptic_n: tuple[int, ...] = (9, 17, 33)
    convergence_transport_n: tuple[int, ...] = (9, 17, 33)

    def __post_init__(self):
        for name in ("boundary_tol", "cg_tol", "fp_tol"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be > 0")
        if not 0.0 < self.beta_min <= 0.5:
            raise ConfigError("beta_min must lie in (0, 0.5]")
        if not self.beta_max > self.beta_min:
            raise ConfigError("beta_max must exceed beta_min")
        if self.lsq_eps < 0:
            raise ConfigError("lsq_eps must be >= 0")
        if int(self.fp_max_iter) < 1:
            raise ConfigError("fp_max_iter must be >= 1")
        if self.cg_max_iter is not None and int(self.cg_max_iter) < 1:
            raise ConfigError("cg_max_iter must be >= 1")
        if int(self.rk4_substeps) < 1:
            raise ConfigError("rk4_substeps must be >= 1")
        if min(self.nt, self.nx, self.ny) < 3:
            raise ConfigError("nt, nx, ny must all be >= 3")
        if not 0.0 < self.relaxation <= 1.0:
            raise ConfigError("relaxation must lie in (0, 1]")
        object.__setattr__(self, "convergence_elliptic_n", tuple(int(n) for n in self.convergence_elliptic_n))
        object.__setattr__(self, "convergence_transport_n", tuple(int(n) for n in self.convergence_transport_n))

    def max_iter_for(self, n: int) -> int:
        return int(self.cg_max_iter) if self.cg_max_iter is not None else 10 * max(int(n), 1)

    def replace(self, **changes) -> "SolverConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        for k, v in d.items():
            if isinstance(v, tuple):
                d[k] = list(v)
        return d

    @classmethod
    def from_dict(cls, data: dict) -> "SolverConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**data)

    @classmethod
    def from_json(cls, path) -> "SolverConfig":
        try:
            data = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError(f"config {path} must hold a JSON object")
        return cls.from_dict(data)
