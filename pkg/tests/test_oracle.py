import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import quad, trapezoid

from otmorph.config import SolverConfig
from otmorph.errors import DivisionGuardError, ShapeError
from otmorph.fields import ScalarField2D, SpaceTimeField, VelocityField
from otmorph.mesh import build_space_time_grid
from otmorph.oracle import (
    VelocitySampler,
    bilinear_sample,
    integrate_flow,
    integrate_flows,
    liouville_check,
    ode_lsq_values,
    representation_density,
    representation_values,
    trace_flow,
    w2_1d_oracle,
)

CFG = SolverConfig(nt=11)
OMEGA = 2 * np.pi


def rotation(t, x, y):
    return -OMEGA * (y - 0.5), OMEGA * (x - 0.5)


def exact_rotation(s, t, p):
    a = OMEGA * (s - t)
    c, sn = np.cos(a), np.sin(a)
    d = p - 0.5
    return 0.5 + np.stack([c * d[:, 0] - sn * d[:, 1], sn * d[:, 0] + c * d[:, 1]], axis=1)


def test_constant_flow():
    v = lambda t, x, y: (0.2 + 0 * x, -0.1 + 0 * y)
    assert np.allclose(integrate_flow(v, 1, 1.0, 0.0, [0.3, 0.5], CFG), [0.5, 0.4])
    assert np.allclose(integrate_flow(v, 1, 0.25, 0.75, [0.3, 0.5], CFG), [0.2, 0.55])
    assert np.allclose(integrate_flow(v, 1, 0.4, 0.4, [0.3, 0.5], CFG), [0.3, 0.5])


def test_rotation_accuracy_and_refinement_ratio():
    pts = np.array([[0.7, 0.5], [0.5, 0.35]])
    err = lambda sub: np.max(
        np.abs(integrate_flows(rotation, 1, 1.0, 0.0, pts, CFG.replace(rk4_substeps=sub)) - exact_rotation(1, 0, pts))
    )
    e4, e8 = err(4), err(8)
    assert e8 < 1e-6
    assert 10 <= e4 / e8 <= 24


def test_trace_flow_records_every_step():
    traj = trace_flow(rotation, 1, 1.0, 0.0, [0.7, 0.5], CFG.replace(rk4_substeps=4))
    assert len(traj.times) == len(traj.positions) == 10 * 4 + 1
    r = np.linalg.norm(traj.positions - 0.5, axis=1)
    assert np.allclose(r, 0.2, atol=1e-5)


@settings(max_examples=30, deadline=None)
@given(st.floats(0, 1), st.floats(0, 1), st.floats(0.3, 0.7), st.floats(0.3, 0.7))
def test_duality_time_dependent_field(s, t, x, y):
    v = lambda tau, X, Y: (0.1 * np.sin(3 * tau) * (1 + 0 * X), 0.05 * tau * np.cos(2 * X))
    plus = integrate_flows(v, 1, s, t, [[x, y]], CFG)
    minus = integrate_flows(v, -1, 1 - s, 1 - t, [[x, y]], CFG)
    assert np.max(np.abs(plus - minus)) <= 1e-12


def test_group_property():
    rng = np.random.default_rng(0)
    v = lambda tau, X, Y: (0.1 * np.sin(3 * tau) + 0.05 * Y, 0.05 * tau * np.cos(2 * X))
    for _ in range(20):
        s, r, t = rng.uniform(0, 1, 3)
        x = rng.uniform(0.3, 0.7, (1, 2))
        direct = integrate_flows(v, 1, s, t, x, CFG)
        chained = integrate_flows(v, 1, s, r, integrate_flows(v, 1, r, t, x, CFG), CFG)
        assert np.max(np.abs(direct - chained)) <= 1e-7


def test_liouville_linear_field():
    v = lambda t, x, y: (0.2 * (x - 0.5), 0.1 * (y - 0.5))
    pts = np.random.default_rng(1).uniform(0.35, 0.65, (10, 2))
    assert liouville_check(v, pts, CFG) <= 1e-6


def test_sampled_field_matches_analytic():
    grid = build_space_time_grid(9, 9, 5)
    fn = lambda T, X, Y: (0.1 * X + 0.2 * T, 0.3 * Y * T)
    v = VelocityField.from_function(grid, fn)
    sampler = VelocitySampler(v)
    pts = np.array([[0.3, 0.4], [0.55, 0.8]])
    # bilinear in space, linear in time: exact for these fields
    assert np.allclose(sampler(0.3, pts), np.stack(fn(0.3, pts[:, 0], pts[:, 1]), axis=1))
    assert np.all(sampler(0.5, np.array([[1.2, 0.5]])) == 0.0)
    assert np.allclose(sampler.divergence(0.3, pts), 0.1 + 0.3 * 0.3)


def test_bilinear_sample_reproduces_bilinear():
    x, y = np.meshgrid(np.linspace(0, 1, 5), np.linspace(0, 1, 4))
    vals = 1 + 2 * x + 3 * y + 4 * x * y
    pts = np.array([[0.13, 0.77], [1.0, 1.0], [0.0, 0.5]])
    expected = 1 + 2 * pts[:, 0] + 3 * pts[:, 1] + 4 * pts[:, 0] * pts[:, 1]
    assert np.allclose(bilinear_sample(vals, pts), expected)


def test_two_formulas_agree_for_divergence_free_transport():
    bump = lambda x, y: 0.2 + np.exp(-((x - 0.4) ** 2 + (y - 0.5) ** 2) / 0.02)
    v = lambda t, x, y: (0.2 + 0 * x, 0 * y)
    exact = lambda t, p: bump(p[:, 0] - 0.2 * t, p[:, 1])
    rho0 = lambda x, y: bump(x, y)
    rho1 = lambda x, y: bump(x - 0.2, y)
    pts = np.array([[0.45, 0.5], [0.5, 0.55], [0.52, 0.45]])
    for t in (0.0, 0.3, 0.8):
        ex = exact(t, pts)
        assert np.allclose(ode_lsq_values(v, t, pts, rho0, rho1, CFG), ex, rtol=1e-10)
        assert np.allclose(representation_values(ex, v, rho0, rho1, t, pts, CFG), ex, rtol=1e-10)


def test_exponential_formula_solves_compressive_transport():
    a = 0.3
    v = lambda t, x, y: (a * (x - 0.5), 0 * y)
    f0 = lambda x, y: 0.5 + 0.3 * np.cos(np.pi * x)

    def exact(t, x, y):
        x0 = 0.5 + (x - 0.5) * np.exp(-a * t)
        return f0(x0, y) * np.exp(-a * t)

    rho1 = lambda x, y: exact(1.0, x, y)
    pts = np.array([[0.4, 0.5], [0.6, 0.2]])
    for t in (0.25, 0.5):
        got = ode_lsq_values(v, t, pts, f0, rho1, CFG, h_div=1e-4)
        assert np.allclose(got, exact(t, pts[:, 0], pts[:, 1]), rtol=1e-8)


def test_representation_density_guard():
    grid = build_space_time_grid(5, 5, 3)
    cfg = SolverConfig(nx=5, ny=5, nt=3)
    rho = np.full(grid.shape, 0.5)
    rho[1, 2, 3] = 0.01
    flat = ScalarField2D.constant(grid.spatial, 0.5)
    with pytest.raises(DivisionGuardError, match=r"k=1, j=2, i=3"):
        representation_density(SpaceTimeField(grid, rho), VelocityField.zeros(grid), flat, flat, cfg)


def test_representation_density_static_case():
    grid = build_space_time_grid(5, 5, 3)
    cfg = SolverConfig(nx=5, ny=5, nt=3)
    f = ScalarField2D.from_function(grid.spatial, lambda X, Y: 0.5 + 0.2 * X)
    rho = SpaceTimeField(grid, np.broadcast_to(f.values, grid.shape).copy())
    rep = representation_density(rho, VelocityField.zeros(grid), f, f, cfg)
    assert np.allclose(rep.values, rho.values)


def w2_fine(f, g, x, n=1_000_000):
    """Independent W2^2: fine linear resampling, Riemann CDFs, quantiles by search."""
    xf = (np.arange(n) + 0.5) / n * (x[-1] - x[0]) + x[0]
    ff = np.interp(xf, x, f)
    gf = np.interp(xf, x, g)
    dx = (x[-1] - x[0]) / n
    F = np.cumsum(ff) * dx
    G = np.cumsum(gf) * dx
    m = (np.arange(n) + 0.5) / n * F[-1]
    qf = xf[np.minimum(np.searchsorted(F, m), n - 1)]
    qg = xf[np.minimum(np.searchsorted(G, m * G[-1] / F[-1]), n - 1)]
    return float(np.mean((qf - qg) ** 2) * F[-1])


def unit_mass_bumps(x, width=0.08):
    f = np.exp(-((x - 0.35) ** 2) / (2 * width**2))
    g = np.exp(-((x - 0.65) ** 2) / (2 * width**2))
    return f / trapezoid(f, x), g / trapezoid(g, x)


def test_w2_against_fine_oracle():
    xf = np.linspace(0, 1, 1_000_001)
    reference = w2_fine(*unit_mass_bumps(xf), xf)
    x = np.linspace(0, 1, 65)
    assert w2_1d_oracle(*unit_mass_bumps(x), x) == pytest.approx(reference, rel=1e-4)


def test_w2_closed_form():
    x = np.linspace(0, 1, 2001)
    f = np.ones_like(x)
    g = 0.5 + x
    exact, _ = quad(lambda m: (m - (-0.5 + np.sqrt(0.25 + 2 * m))) ** 2, 0, 1)
    assert w2_1d_oracle(f, g, x, n_quad=100_000) == pytest.approx(exact, rel=1e-5)


def test_w2_identity_and_symmetry():
    x = np.linspace(0, 1, 33)
    f = 1 + 0.5 * np.sin(2 * np.pi * x)
    g = f[::-1].copy()
    assert w2_1d_oracle(f, f) == 0.0
    assert w2_1d_oracle(f, g) == pytest.approx(w2_1d_oracle(g, f), rel=1e-12)


def test_w2_translation():
    # narrow bumps far from the walls behave like a rigid shift
    x = np.linspace(0, 1, 4001)
    bump = lambda c: 1e-9 + np.exp(-((x - c) ** 2) / (2 * 0.02**2))
    f, g = bump(0.3), bump(0.55)
    mass = trapezoid(f, x)
    assert w2_1d_oracle(f, g, x) == pytest.approx(0.25**2 * mass, rel=1e-4)


def test_w2_shifted_support():
    x = np.linspace(0, 1, 65)
    f, g = unit_mass_bumps(x)
    assert w2_1d_oracle(f, g, x + 0.37) == pytest.approx(w2_1d_oracle(f, g, x), abs=1e-10)


@pytest.mark.parametrize(
    "f,g,kw,err",
    [
        (np.ones(5), np.ones(4), {}, ShapeError),
        (np.ones(5), 2 * np.ones(5), {}, ValueError),
        (np.ones(5), np.ones(5), {"n_quad": 100}, ValueError),
        (np.zeros(5), np.ones(5), {}, ValueError),
    ],
)
def test_w2_rejects_bad_input(f, g, kw, err):
    with pytest.raises(err):
        w2_1d_oracle(f, g, **kw)
