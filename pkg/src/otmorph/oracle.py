"""Characteristics-based checks, independent of the finite-element code.

Velocities are sampled by trilinear space-time interpolation of the nodal
field (zero outside the unit square), or supplied as a plain callable
``fn(t, x, y) -> (vx, vy)`` for analytic test fields. Flows are integrated
with classical RK4 on a fixed global step grid of ``rk4_substeps`` steps per
slice interval, so that flows started from different times share steps.

The minus flow ``X_-`` is the flow of the time-reversed field
``-v(1 - s, .)``; with that convention ``X_-(1-s, 1-t, x) = X_+(s, t, x)``
holds for time-dependent fields as well.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable, Union

import numpy as np

from .config import SolverConfig
from .errors import DivisionGuardError, ShapeError
from .fields import ScalarField2D, SpaceTimeField, VelocityField

logger = logging.getLogger(__name__)

__all__ = [
    "FlowTrajectory",
    "VelocitySampler",
    "bilinear_sample",
    "integrate_flow",
    "integrate_flows",
    "trace_flow",
    "representation_density",
    "representation_values",
    "ode_lsq_solution",
    "ode_lsq_values",
    "liouville_check",
    "w2_1d_oracle",
]

VelocityLike = Union[VelocityField, Callable]
DensityLike = Union[ScalarField2D, Callable]

_CLAMP_TOL = 1e-9


def bilinear_sample(values: np.ndarray, pts: np.ndarray) -> np.ndarray:
    """Bilinear interpolation of nodal ``values`` (ny, nx[, c]) on the unit square.

    Points are clipped into the square first.
    """
    ny, nx = values.shape[:2]
    x = np.clip(pts[:, 0], 0.0, 1.0) * (nx - 1)
    y = np.clip(pts[:, 1], 0.0, 1.0) * (ny - 1)
    i = np.minimum(np.floor(x).astype(int), nx - 2)
    j = np.minimum(np.floor(y).astype(int), ny - 2)
    fx = x - i
    fy = y - j
    if values.ndim == 3:
        fx = fx[:, None]
        fy = fy[:, None]
    return (
        (1 - fx) * (1 - fy) * values[j, i]
        + fx * (1 - fy) * values[j, i + 1]
        + (1 - fx) * fy * values[j + 1, i]
        + fx * fy * values[j + 1, i + 1]
    )


class VelocitySampler:
    """Evaluate a velocity at ``(t, points)``; points outside the square get zero."""

    def __init__(self, v: VelocityLike, nt: int | None = None):
        if isinstance(v, VelocityField):
            self.field = v
            self.fn = None
            self.nt = v.grid.nt
            self.hx = v.grid.spatial.hx
        elif callable(v):
            self.field = None
            self.fn = v
            if nt is None:
                raise ValueError("analytic velocities need the slice count nt")
            self.nt = int(nt)
            self.hx = None
        else:
            raise TypeError(f"cannot sample velocity from {type(v).__name__}")

    def __call__(self, t: float, pts: np.ndarray) -> np.ndarray:
        if self.fn is not None:
            vx, vy = self.fn(t, pts[:, 0], pts[:, 1])
            return np.stack(np.broadcast_arrays(vx, vy), axis=1).astype(float)
        grid = self.field.grid
        tau = min(max(t, 0.0), 1.0) / grid.dt
        k = min(int(np.floor(tau)), grid.nt - 2)
        theta = tau - k
        vals = self.field.values
        out = (1.0 - theta) * bilinear_sample(vals[k], pts)
        if theta != 0.0:
            out += theta * bilinear_sample(vals[k + 1], pts)
        inside = np.all((pts >= 0.0) & (pts <= 1.0), axis=1)
        out[~inside] = 0.0
        return out

    def divergence(self, t: float, pts: np.ndarray, h: float | None = None) -> np.ndarray:
        """Central-difference divergence of the sampled velocity."""
        if h is None:
            h = 0.5 * self.hx if self.hx is not None else 1e-5
        ex = np.array([h, 0.0])
        ey = np.array([0.0, h])
        dvx = self(t, pts + ex)[:, 0] - self(t, pts - ex)[:, 0]
        dvy = self(t, pts + ey)[:, 1] - self(t, pts - ey)[:, 1]
        return (dvx + dvy) / (2.0 * h)


def _breakpoints(t: float, s: float, nt: int, substeps: int) -> np.ndarray:
    """Times from ``t`` to ``s`` including every global step-grid point in between."""
    if s == t:
        return np.array([t])
    total = (nt - 1) * substeps
    grid = np.arange(total + 1) / total
    lo, hi = min(t, s), max(t, s)
    eps = 1e-12
    inner = grid[(grid > lo + eps) & (grid < hi - eps)]
    pts = np.concatenate([[lo], inner, [hi]])
    return pts if s > t else pts[::-1]


def _rk4(rhs, times: np.ndarray, y0: np.ndarray, record: bool = False):
    y = y0.copy()
    path = [y.copy()] if record else None
    for a, b in zip(times[:-1], times[1:]):
        h = b - a
        k1 = rhs(a, y)
        k2 = rhs(a + 0.5 * h, y + 0.5 * h * k1)
        k3 = rhs(a + 0.5 * h, y + 0.5 * h * k2)
        k4 = rhs(b, y + h * k3)
        y = y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if record:
            path.append(y.copy())
    return (y, path) if record else y


def _clamp(pts: np.ndarray) -> np.ndarray:
    over = np.max(np.maximum(pts - 1.0, 0.0) + np.maximum(-pts, 0.0)) if pts.size else 0.0
    if over > _CLAMP_TOL:
        logger.warning("flow left the domain by %.3e; clamping", over)
    return np.clip(pts, 0.0, 1.0)


def _direction_sampler(v: VelocityLike, direction: int, cfg: SolverConfig):
    sampler = v if isinstance(v, VelocitySampler) else VelocitySampler(v, cfg.nt)
    if direction not in (1, -1):
        raise ValueError("direction must be +1 or -1")
    if direction == 1:
        return sampler, (lambda s, x: sampler(s, x))
    return sampler, (lambda s, x: -sampler(1.0 - s, x))


def integrate_flows(
    v: VelocityLike, direction: int, s_target: float, t: float, points, cfg: SolverConfig
) -> np.ndarray:
    """``X_(+/-)(s_target, t, x)`` for an array of points ``(n, 2)``."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    if pts.shape[1] != 2:
        raise ShapeError("points must have shape (n, 2)")
    sampler, rhs = _direction_sampler(v, direction, cfg)
    if s_target == t:
        return pts.copy()
    times = _breakpoints(float(t), float(s_target), sampler.nt, cfg.rk4_substeps)
    return _clamp(_rk4(rhs, times, pts))


def integrate_flow(
    v: VelocityLike, direction: int, s_target: float, t: float, x, cfg: SolverConfig
) -> np.ndarray:
    """Position at time ``s_target`` of the characteristic through ``x`` at time ``t``."""
    return integrate_flows(v, direction, s_target, t, np.asarray(x, dtype=float)[None], cfg)[0]


@dataclass(frozen=True)
class FlowTrajectory:
    times: np.ndarray
    positions: np.ndarray
    direction: int


def trace_flow(v: VelocityLike, direction: int, s_target: float, t: float, x, cfg: SolverConfig) -> FlowTrajectory:
    """Like :func:`integrate_flow` but keeps every step-grid position."""
    sampler, rhs = _direction_sampler(v, direction, cfg)
    times = _breakpoints(float(t), float(s_target), sampler.nt, cfg.rk4_substeps)
    _, path = _rk4(rhs, times, np.asarray(x, dtype=float)[None], record=True)
    positions = _clamp(np.concatenate(path, axis=0))
    return FlowTrajectory(times, positions, direction)


def _flow_with_divergence(sampler: VelocitySampler, s: float, t: float, pts: np.ndarray, cfg, h_div=None):
    """Integrate positions and ``int_t^s div v`` jointly with RK4."""
    n = len(pts)
    if s == t:
        return pts.copy(), np.zeros(n)

    def rhs(tau, y):
        xy = y[:, :2]
        out = np.empty_like(y)
        out[:, :2] = sampler(tau, xy)
        out[:, 2] = sampler.divergence(tau, xy, h_div)
        return out

    y0 = np.concatenate([pts, np.zeros((n, 1))], axis=1)
    times = _breakpoints(float(t), float(s), sampler.nt, cfg.rk4_substeps)
    y = _rk4(rhs, times, y0)
    return _clamp(y[:, :2]), y[:, 2]


def _density_sampler(rho: DensityLike):
    if isinstance(rho, ScalarField2D):
        vals = rho.values
        return lambda pts: bilinear_sample(vals, pts)
    if callable(rho):
        return lambda pts: np.asarray(rho(pts[:, 0], pts[:, 1]), dtype=float)
    raise TypeError(f"cannot sample density from {type(rho).__name__}")


def representation_values(rho_prev_at, v: VelocityLike, rho0: DensityLike, rho1: DensityLike, t: float, pts, cfg):
    """Evaluate the two-endpoint representation formula at points ``pts`` and time ``t``.

    ``(1-t) rho0(X(0))^2 / rho_prev + t rho1(X(1))^2 / rho_prev`` with ``X`` the
    plus flow through ``(t, x)`` and ``rho_prev_at`` the previous density at
    the points.
    """
    sampler = v if isinstance(v, VelocitySampler) else VelocitySampler(v, cfg.nt)
    f0 = _density_sampler(rho0)
    f1 = _density_sampler(rho1)
    x0 = integrate_flows(sampler, 1, 0.0, t, pts, cfg)
    x1 = integrate_flows(sampler, 1, 1.0, t, pts, cfg)
    return ((1.0 - t) * f0(x0) ** 2 + t * f1(x1) ** 2) / rho_prev_at


def representation_density(
    rho_prev: SpaceTimeField,
    v: VelocityField,
    rho0: ScalarField2D,
    rho1: ScalarField2D,
    cfg: SolverConfig,
) -> SpaceTimeField:
    """Nodal evaluation of the representation formula on every slice."""
    grid = rho_prev.grid
    if v.grid != grid or rho0.grid != grid.spatial or rho1.grid != grid.spatial:
        raise ShapeError("fields do not share one grid")
    floor = 0.5 * cfg.beta_min
    low = rho_prev.values < floor
    if np.any(low):
        k, j, i = np.argwhere(low)[0]
        raise DivisionGuardError(
            f"previous density {rho_prev.values[k, j, i]:.4g} below {floor:.4g} "
            f"at node (k={k}, j={j}, i={i})"
        )
    sampler = VelocitySampler(v)
    X, Y = np.meshgrid(grid.spatial.x, grid.spatial.y)
    pts = np.stack([X.ravel(), Y.ravel()], axis=1)
    out = np.empty(grid.shape)
    for k, t in enumerate(grid.times):
        vals = representation_values(rho_prev.values[k].ravel(), sampler, rho0, rho1, float(t), pts, cfg)
        out[k] = vals.reshape(grid.spatial.shape)
    return SpaceTimeField(grid, out)


def ode_lsq_values(v: VelocityLike, t: float, pts, rho0: DensityLike, rho1: DensityLike, cfg, h_div=None):
    """Exponentially weighted two-endpoint solution along characteristics.

    ``(1-t) exp(-int_0^t div v) rho0(X(0)) + t exp(int_t^1 div v) rho1(X(1))``
    with the integrals taken along the plus flow through ``(t, x)``.
    """
    sampler = v if isinstance(v, VelocitySampler) else VelocitySampler(v, cfg.nt)
    pts = np.atleast_2d(np.asarray(pts, dtype=float))
    x0, i0 = _flow_with_divergence(sampler, 0.0, t, pts, cfg, h_div)  # i0 = int_t^0 = -int_0^t
    x1, i1 = _flow_with_divergence(sampler, 1.0, t, pts, cfg, h_div)
    f0 = _density_sampler(rho0)
    f1 = _density_sampler(rho1)
    return (1.0 - t) * np.exp(i0) * f0(x0) + t * np.exp(i1) * f1(x1)


def ode_lsq_solution(v: VelocityLike, t: float, x, rho0: DensityLike, rho1: DensityLike, cfg: SolverConfig) -> float:
    return float(ode_lsq_values(v, t, np.asarray(x, dtype=float)[None], rho0, rho1, cfg)[0])


def liouville_check(
    v: VelocityLike,
    samples,
    cfg: SolverConfig,
    s: float = 1.0,
    t: float = 0.0,
    fd_step: float = 1e-5,
    h_div: float | None = None,
) -> float:
    """Max relative gap between ``det D_x X_+(s, t, x)`` and ``exp(int_t^s div v)``.

    The Jacobian comes from central differences of four perturbed flows.
    """
    sampler = v if isinstance(v, VelocitySampler) else VelocitySampler(v, cfg.nt)
    pts = np.atleast_2d(np.asarray(samples, dtype=float))
    _, integral = _flow_with_divergence(sampler, s, t, pts, cfg, h_div)
    ex = np.array([fd_step, 0.0])
    ey = np.array([0.0, fd_step])
    dx = (integrate_flows(sampler, 1, s, t, pts + ex, cfg) - integrate_flows(sampler, 1, s, t, pts - ex, cfg)) / (2 * fd_step)
    dy = (integrate_flows(sampler, 1, s, t, pts + ey, cfg) - integrate_flows(sampler, 1, s, t, pts - ey, cfg)) / (2 * fd_step)
    det = dx[:, 0] * dy[:, 1] - dx[:, 1] * dy[:, 0]
    expected = np.exp(integral)
    return float(np.max(np.abs(det - expected) / expected))


def w2_1d_oracle(f, g, x=None, n_quad: int = 20000) -> float:
    """Squared 2-Wasserstein distance between two 1D densities by CDF inversion.

    ``f`` and ``g`` are positive samples on the common uniform grid ``x``
    (default ``linspace(0, 1, len(f))``). Cumulative masses are accumulated
    with the trapezoidal rule and interpolated linearly; the inverse CDFs
    are compared at ``n_quad`` midpoints of the mass interval.
    """
    f = np.asarray(f, dtype=float)
    g = np.asarray(g, dtype=float)
    if f.shape != g.shape or f.ndim != 1 or len(f) < 2:
        raise ShapeError("f and g must be 1D arrays of equal length >= 2")
    x = np.linspace(0.0, 1.0, len(f)) if x is None else np.asarray(x, dtype=float)
    if x.shape != f.shape:
        raise ShapeError("grid and samples differ in length")
    if np.any(f <= 0) or np.any(g <= 0):
        raise ValueError("densities must be positive")
    if n_quad < 10_000:
        raise ValueError("n_quad must be at least 10^4")
    dx = np.diff(x)
    F = np.concatenate([[0.0], np.cumsum(0.5 * (f[1:] + f[:-1]) * dx)])
    G = np.concatenate([[0.0], np.cumsum(0.5 * (g[1:] + g[:-1]) * dx)])
    mass = 0.5 * (F[-1] + G[-1])
    if abs(F[-1] - G[-1]) > 1e-10 * max(1.0, mass):
        raise ValueError(f"total masses differ: {F[-1]!r} vs {G[-1]!r}")
    m = (np.arange(n_quad) + 0.5) / n_quad * mass
    qf = np.interp(m, F, x)
    qg = np.interp(m, G, x)
    return float(np.mean((qf - qg) ** 2) * mass)
