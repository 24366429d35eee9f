"""Structured tensor grids on the unit square and the space-time cylinder.

Node indexing is slice-major then row-major: the flat index of node
``(k, j, i)`` (time slice ``k``, row ``j`` along y, column ``i`` along x) is
``k * nx * ny + j * nx + i``. Arrays holding nodal values use the matching
shapes ``(ny, nx)`` for one slice and ``(nt, ny, nx)`` for space-time.

Reference elements are ``[0, 1]^d`` with local nodes in tensor order
``a = ax + 2 * ay (+ 4 * at)``; brick reference coordinates are ``(x, y, t)``.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .errors import InvalidGridError, OutOfRangeError

__all__ = [
    "Grid2D",
    "SpaceTimeGrid",
    "QuadratureRule",
    "build_space_time_grid",
    "gauss_rule",
    "shape_functions",
]


@dataclass(frozen=True)
class Grid2D:
    nx: int
    ny: int

    def __post_init__(self):
        if int(self.nx) < 3 or int(self.ny) < 3:
            raise InvalidGridError(
                f"grid needs at least 3 nodes per axis, got nx={self.nx}, ny={self.ny}"
            )

    @property
    def hx(self) -> float:
        return 1.0 / (self.nx - 1)

    @property
    def hy(self) -> float:
        return 1.0 / (self.ny - 1)

    @property
    def shape(self) -> tuple[int, int]:
        return (self.ny, self.nx)

    @property
    def n_nodes(self) -> int:
        return self.nx * self.ny

    @cached_property
    def x(self) -> np.ndarray:
        return np.linspace(0.0, 1.0, self.nx)

    @cached_property
    def y(self) -> np.ndarray:
        return np.linspace(0.0, 1.0, self.ny)

    @cached_property
    def boundary_mask(self) -> np.ndarray:
        mask = np.zeros(self.shape, dtype=bool)
        mask[0, :] = mask[-1, :] = True
        mask[:, 0] = mask[:, -1] = True
        mask.setflags(write=False)
        return mask

    @cached_property
    def boundary_indices(self) -> np.ndarray:
        idx = np.flatnonzero(self.boundary_mask.ravel())
        idx.setflags(write=False)
        return idx

    @cached_property
    def interior_indices(self) -> np.ndarray:
        idx = np.flatnonzero(~self.boundary_mask.ravel())
        idx.setflags(write=False)
        return idx

    @cached_property
    def elements(self) -> np.ndarray:
        """Connectivity ``(n_elem, 4)`` in local tensor order."""
        j, i = np.meshgrid(np.arange(self.ny - 1), np.arange(self.nx - 1), indexing="ij")
        base = (j * self.nx + i).ravel()
        conn = np.stack([base, base + 1, base + self.nx, base + self.nx + 1], axis=1)
        conn.setflags(write=False)
        return conn

    @cached_property
    def trapezoid_weights(self) -> np.ndarray:
        """Nodal weights of the trapezoidal rule, shape ``(ny, nx)``."""
        wx = np.full(self.nx, self.hx)
        wx[[0, -1]] *= 0.5
        wy = np.full(self.ny, self.hy)
        wy[[0, -1]] *= 0.5
        w = np.outer(wy, wx)
        w.setflags(write=False)
        return w

    def integrate(self, values: np.ndarray) -> float:
        """Trapezoidal integral of nodal values (exact for the bilinear interpolant)."""
        return float(np.sum(self.trapezoid_weights * values))


@dataclass(frozen=True)
class SpaceTimeGrid:
    spatial: Grid2D
    nt: int

    def __post_init__(self):
        if int(self.nt) < 3:
            raise InvalidGridError(f"need at least 3 time slices, got nt={self.nt}")

    @property
    def nx(self) -> int:
        return self.spatial.nx

    @property
    def ny(self) -> int:
        return self.spatial.ny

    @property
    def dt(self) -> float:
        return 1.0 / (self.nt - 1)

    @property
    def shape(self) -> tuple[int, int, int]:
        return (self.nt, self.spatial.ny, self.spatial.nx)

    @property
    def n_nodes(self) -> int:
        return self.nt * self.spatial.n_nodes

    @cached_property
    def times(self) -> np.ndarray:
        return np.linspace(0.0, 1.0, self.nt)

    @cached_property
    def elements(self) -> np.ndarray:
        """Brick connectivity ``(n_elem, 8)``; local order ``ax + 2ay + 4at``."""
        quads = self.spatial.elements
        per_slice = self.spatial.n_nodes
        offsets = np.arange(self.nt - 1) * per_slice
        lower = (quads[None, :, :] + offsets[:, None, None]).reshape(-1, 4)
        conn = np.concatenate([lower, lower + per_slice], axis=1)
        conn.setflags(write=False)
        return conn

    @cached_property
    def trapezoid_weights(self) -> np.ndarray:
        wt = np.full(self.nt, self.dt)
        wt[[0, -1]] *= 0.5
        w = wt[:, None, None] * self.spatial.trapezoid_weights[None]
        w.setflags(write=False)
        return w


def build_space_time_grid(nx: int, ny: int, nt: int) -> SpaceTimeGrid:
    """Uniform grid on ``(0,1) x (0,1)^2`` with the given node counts."""
    for name, n in (("nx", nx), ("ny", ny), ("nt", nt)):
        if int(n) != n:
            raise InvalidGridError(f"{name} must be an integer, got {n!r}")
    return SpaceTimeGrid(Grid2D(int(nx), int(ny)), int(nt))


@dataclass(frozen=True)
class QuadratureRule:
    """Tensor Gauss rule on ``[0,1]^dim``; exact for degree ``2 * n - 1`` per axis."""

    points: np.ndarray
    weights: np.ndarray
    degree: int


def gauss_rule(dim: int, n: int = 2) -> QuadratureRule:
    x, w = np.polynomial.legendre.leggauss(n)
    x = 0.5 * (x + 1.0)
    w = 0.5 * w
    grids = np.meshgrid(*([x] * dim), indexing="ij")
    wgrids = np.meshgrid(*([w] * dim), indexing="ij")
    # first coordinate varies fastest, matching local node order
    pts = np.stack([g.transpose().ravel() for g in grids], axis=1)
    wts = np.prod(np.stack([g.transpose().ravel() for g in wgrids], axis=1), axis=1)
    return QuadratureRule(pts, wts, 2 * n - 1)


_CORNERS = {
    "quad4": np.array([[a & 1, (a >> 1) & 1] for a in range(4)], dtype=float),
    "brick8": np.array([[a & 1, (a >> 1) & 1, (a >> 2) & 1] for a in range(8)], dtype=float),
}


def shape_functions(element_kind: str, ref_point) -> tuple[np.ndarray, np.ndarray]:
    """Values ``(n,)`` and reference gradients ``(n, d)`` of the d-linear basis.

    ``ref_point`` may also be a stack of points ``(m, d)``; the outputs then
    gain a leading axis of length ``m``.
    """
    try:
        corners = _CORNERS[element_kind]
    except KeyError:
        raise ValueError(f"unknown element kind {element_kind!r}") from None
    d = corners.shape[1]
    p = np.asarray(ref_point, dtype=float)
    single = p.ndim == 1
    p = np.atleast_2d(p)
    if p.shape[1] != d:
        raise OutOfRangeError(f"{element_kind} expects {d} reference coordinates")
    if np.any(p < 0.0) or np.any(p > 1.0) or not np.all(np.isfinite(p)):
        raise OutOfRangeError(f"reference point outside [0,1]^{d}: {ref_point}")
    # 1D factors: corner coordinate c -> (1 - x) or x
    f = np.where(corners[None, :, :] == 1.0, p[:, None, :], 1.0 - p[:, None, :])
    df = np.where(corners[None, :, :] == 1.0, 1.0, -1.0) * np.ones_like(f)
    values = np.prod(f, axis=2)
    grads = np.empty_like(f)
    for axis in range(d):
        others = [f[:, :, k] for k in range(d) if k != axis]
        grads[:, :, axis] = df[:, :, axis] * (np.prod(others, axis=0) if others else 1.0)
    if single:
        return values[0], grads[0]
    return values, grads
