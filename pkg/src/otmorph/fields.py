"""Nodal field containers, image ingestion, pair preparation and export.

Image row ``r`` of an ``h x w`` picture sits at ``y = r / (h - 1)`` and
column ``c`` at ``x = c / (w - 1)``; exported frames use the same convention
so that export followed by :func:`load_density` is a round trip.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.interpolate import RegularGridInterpolator

from .config import SolverConfig
from .errors import (
    DegenerateInputError,
    ExportError,
    HypothesisViolationError,
    IngestionError,
    ShapeError,
)
from .mesh import Grid2D, SpaceTimeGrid
from .pgm import read_pgm, write_pgm

logger = logging.getLogger(__name__)

__all__ = [
    "ScalarField2D",
    "SpaceTimeField",
    "VelocityField",
    "load_density",
    "prepare_pair",
    "interpolate_lifting",
    "time_derivative",
    "export_frames",
]


def _frozen(values, shape, what) -> np.ndarray:
    arr = np.array(values, dtype=float)
    if arr.shape != tuple(shape):
        if arr.size == int(np.prod(shape)):
            arr = arr.reshape(shape)
        else:
            raise ShapeError(f"{what}: expected shape {tuple(shape)}, got {arr.shape}")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class ScalarField2D:
    grid: Grid2D
    values: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "values", _frozen(self.values, self.grid.shape, "ScalarField2D"))

    @classmethod
    def from_function(cls, grid: Grid2D, fn) -> "ScalarField2D":
        X, Y = np.meshgrid(grid.x, grid.y)
        return cls(grid, np.broadcast_to(fn(X, Y), grid.shape))

    @classmethod
    def constant(cls, grid: Grid2D, value: float) -> "ScalarField2D":
        return cls(grid, np.full(grid.shape, float(value)))

    def integral(self) -> float:
        return self.grid.integrate(self.values)

    def boundary_values(self) -> np.ndarray:
        return self.values[self.grid.boundary_mask]

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.values, dtype=dtype)


@dataclass(frozen=True, eq=False)
class SpaceTimeField:
    grid: SpaceTimeGrid
    values: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "values", _frozen(self.values, self.grid.shape, "SpaceTimeField"))

    def slice(self, k: int) -> ScalarField2D:
        return ScalarField2D(self.grid.spatial, self.values[k])

    def masses(self) -> np.ndarray:
        """Trapezoidal spatial integral of every slice."""
        w = self.grid.spatial.trapezoid_weights
        return np.einsum("kji,ji->k", self.values, w)

    def l2_norm(self) -> float:
        """Discrete L2(Q) norm with trapezoidal weights."""
        return float(np.sqrt(np.sum(self.grid.trapezoid_weights * self.values**2)))

    def reversed(self) -> "SpaceTimeField":
        return SpaceTimeField(self.grid, self.values[::-1])

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.values, dtype=dtype)


@dataclass(frozen=True, eq=False)
class VelocityField:
    """Per-slice nodal velocities, shape ``(nt, ny, nx, 2)`` with components (vx, vy)."""

    grid: SpaceTimeGrid
    values: np.ndarray

    def __post_init__(self):
        object.__setattr__(
            self, "values", _frozen(self.values, self.grid.shape + (2,), "VelocityField")
        )

    @classmethod
    def zeros(cls, grid: SpaceTimeGrid) -> "VelocityField":
        return cls(grid, np.zeros(grid.shape + (2,)))

    @classmethod
    def constant(cls, grid: SpaceTimeGrid, vx: float, vy: float) -> "VelocityField":
        vals = np.empty(grid.shape + (2,))
        vals[..., 0] = vx
        vals[..., 1] = vy
        return cls(grid, vals)

    @classmethod
    def from_function(cls, grid: SpaceTimeGrid, fn) -> "VelocityField":
        """Sample ``fn(t, x, y) -> (vx, vy)`` at every node."""
        T, Y, X = np.meshgrid(grid.times, grid.spatial.y, grid.spatial.x, indexing="ij")
        vx, vy = fn(T, X, Y)
        return cls(grid, np.stack(np.broadcast_arrays(vx, vy), axis=-1))

    def boundary_is_zero(self) -> bool:
        mask = self.grid.spatial.boundary_mask
        return bool(np.all(self.values[:, mask, :] == 0.0))

    def max_norm(self) -> float:
        return float(np.max(np.abs(self.values))) if self.values.size else 0.0

    def reversed(self) -> "VelocityField":
        """Time-reversed field ``-v(1 - t)``."""
        return VelocityField(self.grid, -self.values[::-1])


def load_density(path, grid: Grid2D) -> ScalarField2D:
    """Read a PGM image, map intensities to [0, 1] and resample onto ``grid``."""
    pixels, maxval = read_pgm(path)
    height, width = pixels.shape
    if height < 2 or width < 2:
        raise IngestionError(f"image too small to resample ({width}x{height})", path)
    img = pixels.astype(float) / float(maxval)
    if (height, width) == grid.shape:
        return ScalarField2D(grid, img)
    interp = RegularGridInterpolator(
        (np.linspace(0.0, 1.0, height), np.linspace(0.0, 1.0, width)), img, method="linear"
    )
    Y, X = np.meshgrid(grid.y, grid.x, indexing="ij")
    vals = interp(np.stack([Y.ravel(), X.ravel()], axis=1)).reshape(grid.shape)
    return ScalarField2D(grid, vals)


def prepare_pair(
    rho0_raw: ScalarField2D, rho1_raw: ScalarField2D, cfg: SolverConfig
) -> tuple[ScalarField2D, ScalarField2D]:
    """Make a raw pair admissible: positive floor, common boundary, equal mass.

    1. Both fields are mapped by one affine map from ``[lo, hi]`` onto
       ``[beta_min, beta_max]``, where ``[lo, hi]`` is ``[0, 1]`` widened to
       cover the data.
    2. Boundary values must agree within ``cfg.boundary_tol`` (checked on the
       raw scale); both boundaries are then set to their average.
    3. The interior of the lighter field is scaled up so both total masses
       agree. Scaling up never breaks the floor and leaves the boundary alone.
    """
    grid = rho0_raw.grid
    if rho1_raw.grid != grid:
        raise ShapeError("rho0 and rho1 live on different grids")
    a = np.asarray(rho0_raw.values, dtype=float)
    b = np.asarray(rho1_raw.values, dtype=float)
    if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
        raise DegenerateInputError("input densities contain non-finite values")
    if grid.integrate(a) <= 0.0 or grid.integrate(b) <= 0.0:
        raise DegenerateInputError("input density has zero total mass")

    mask = grid.boundary_mask
    mismatch = float(np.max(np.abs(a[mask] - b[mask])))
    if mismatch > cfg.boundary_tol:
        raise HypothesisViolationError(
            f"H2 violated: endpoint densities differ by {mismatch:.4g} on the boundary "
            f"(boundary_tol={cfg.boundary_tol})"
        )

    lo = min(0.0, a.min(), b.min())
    hi = max(1.0, a.max(), b.max())
    scale = (cfg.beta_max - cfg.beta_min) / (hi - lo)
    a = cfg.beta_min + scale * (a - lo)
    b = cfg.beta_min + scale * (b - lo)
    a = np.maximum(a, cfg.beta_min)
    b = np.maximum(b, cfg.beta_min)

    avg = 0.5 * (a[mask] + b[mask])
    a[mask] = avg
    b[mask] = avg

    w = grid.trapezoid_weights
    m0, m1 = float(np.sum(w * a)), float(np.sum(w * b))
    if m0 != m1:
        light = b if m1 < m0 else a
        target = max(m0, m1)
        bmass = float(np.sum(w[mask] * light[mask]))
        imass = float(np.sum(w[~mask] * light[~mask]))
        light[~mask] *= (target - bmass) / imass
    return ScalarField2D(grid, a), ScalarField2D(grid, b)


def interpolate_lifting(
    rho0: ScalarField2D, rho1: ScalarField2D, grid: SpaceTimeGrid
) -> SpaceTimeField:
    """Linear blend ``(1 - t) rho0 + t rho1`` sampled at every slice."""
    if rho0.grid != grid.spatial or rho1.grid != grid.spatial:
        raise ShapeError("endpoint fields do not match the space-time grid")
    t = grid.times[:, None, None]
    vals = (1.0 - t) * rho0.values[None] + t * rho1.values[None]
    # endpoints copied to stay bitwise exact
    vals[0] = rho0.values
    vals[-1] = rho1.values
    return SpaceTimeField(grid, vals)


def time_derivative(rho: SpaceTimeField) -> SpaceTimeField:
    """Second-order finite differences in time (centered inside, one-sided at the ends)."""
    v = rho.values
    dt = rho.grid.dt
    out = np.empty_like(v)
    out[1:-1] = (v[2:] - v[:-2]) / (2.0 * dt)
    out[0] = (-3.0 * v[0] + 4.0 * v[1] - v[2]) / (2.0 * dt)
    out[-1] = (3.0 * v[-1] - 4.0 * v[-2] + v[-3]) / (2.0 * dt)
    return SpaceTimeField(rho.grid, out)


def export_frames(rho: SpaceTimeField, directory, format: str = "pgm16") -> list[Path]:
    """Write one file per slice, ``frame_0000.<ext>`` onward.

    ``pgm16`` frames share one affine map from the sequence's [min, max] onto
    [0, 65535]. ``csv`` frames have header ``x,y,value`` and rows ordered by
    y then x (row-major).
    """
    directory = Path(directory)
    try:
        directory.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ExportError(f"cannot create {directory}: {exc.strerror or exc}") from exc
    vals = rho.values
    paths = []
    if format == "pgm16":
        lo, hi = float(vals.min()), float(vals.max())
        span = hi - lo
        for k in range(rho.grid.nt):
            scaled = (vals[k] - lo) / span * 65535.0 if span > 0 else np.zeros_like(vals[k])
            path = directory / f"frame_{k:04d}.pgm"
            write_pgm(path, scaled, 65535)
            paths.append(path)
    elif format == "csv":
        X, Y = np.meshgrid(rho.grid.spatial.x, rho.grid.spatial.y)
        for k in range(rho.grid.nt):
            path = directory / f"frame_{k:04d}.csv"
            table = np.stack([X.ravel(), Y.ravel(), vals[k].ravel()], axis=1)
            try:
                np.savetxt(path, table, fmt="%.17g", delimiter=",", header="x,y,value", comments="")
            except OSError as exc:
                raise ExportError(f"cannot write {path}: {exc.strerror or exc}") from exc
            paths.append(path)
    else:
        raise ValueError(f"unknown frame format {format!r}")
    return paths
