import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from otmorph.config import SolverConfig
from otmorph.errors import DegenerateInputError, HypothesisViolationError, IngestionError
from otmorph.fields import (
    ScalarField2D,
    SpaceTimeField,
    VelocityField,
    export_frames,
    interpolate_lifting,
    load_density,
    prepare_pair,
    time_derivative,
)
from otmorph.mesh import Grid2D, build_space_time_grid
from otmorph.pgm import read_pgm, write_pgm


def test_fields_are_read_only():
    f = ScalarField2D.constant(Grid2D(3, 3), 1.0)
    with pytest.raises(ValueError):
        f.values[0, 0] = 2.0


def test_shape_mismatch_rejected():
    with pytest.raises(ValueError):
        ScalarField2D(Grid2D(3, 3), np.zeros((3, 4)))


def test_lifting_endpoints_exact_and_linear():
    grid = build_space_time_grid(5, 4, 7)
    a = ScalarField2D.from_function(grid.spatial, lambda X, Y: 0.3 + X * Y / 3)
    b = ScalarField2D.from_function(grid.spatial, lambda X, Y: 0.7 - X / 7)
    lift = interpolate_lifting(a, b, grid)
    assert np.array_equal(lift.values[0], a.values)
    assert np.array_equal(lift.values[-1], b.values)
    t = grid.times[3]
    assert np.allclose(lift.values[3], (1 - t) * a.values + t * b.values)


def test_time_derivative_exact_for_quadratics():
    grid = build_space_time_grid(3, 3, 6)
    T = grid.times[:, None, None] * np.ones(grid.shape)
    d = time_derivative(SpaceTimeField(grid, T**2))
    assert np.allclose(d.values, 2 * T, atol=1e-12)


def test_masses_and_norm_of_constant():
    grid = build_space_time_grid(5, 5, 4)
    rho = SpaceTimeField(grid, np.full(grid.shape, 2.0))
    assert np.allclose(rho.masses(), 2.0)
    assert rho.l2_norm() == pytest.approx(2.0)


def test_velocity_reversal():
    grid = build_space_time_grid(3, 3, 3)
    v = VelocityField.from_function(grid, lambda T, X, Y: (T + 0 * X, 0 * Y))
    r = v.reversed()
    assert np.allclose(r.values[..., 0], -(1 - grid.times)[:, None, None])
    assert not v.boundary_is_zero()
    assert VelocityField.zeros(grid).boundary_is_zero()


def _raw(grid, cx):
    return ScalarField2D.from_function(grid, lambda X, Y: 0.8 * np.exp(-((X - cx) ** 2 + (Y - 0.5) ** 2) / 0.02))


def test_prepare_pair_properties():
    cfg = SolverConfig()
    g = Grid2D(17, 17)
    a, b = prepare_pair(_raw(g, 0.4), _raw(g, 0.65), cfg)
    assert a.values.min() >= cfg.beta_min
    assert b.values.min() >= cfg.beta_min
    assert np.array_equal(a.boundary_values(), b.boundary_values())
    assert a.integral() == pytest.approx(b.integral(), rel=1e-13)


def test_prepare_pair_rejects_boundary_mismatch():
    g = Grid2D(9, 9)
    a = ScalarField2D.constant(g, 0.2)
    b = ScalarField2D.constant(g, 0.5)
    with pytest.raises(HypothesisViolationError, match="H2"):
        prepare_pair(a, b, SolverConfig())


@pytest.mark.parametrize("value", [0.0, np.nan])
def test_prepare_pair_rejects_degenerate(value):
    g = Grid2D(5, 5)
    a = ScalarField2D.constant(g, value)
    with pytest.raises(DegenerateInputError):
        prepare_pair(a, ScalarField2D.constant(g, 0.5), SolverConfig())


@settings(max_examples=25, deadline=None)
@given(st.floats(0.2, 0.8), st.floats(0.2, 0.8), st.floats(0.1, 1.0))
def test_prepare_pair_mass_matching(c0, c1, amp):
    g = Grid2D(9, 9)
    a = ScalarField2D.from_function(g, lambda X, Y: amp * np.exp(-((X - c0) ** 2 + (Y - 0.5) ** 2) / 0.02))
    b = ScalarField2D.from_function(g, lambda X, Y: amp * np.exp(-((X - c1) ** 2 + (Y - 0.5) ** 2) / 0.02))
    try:
        p, q = prepare_pair(a, b, SolverConfig())
    except HypothesisViolationError:
        return
    assert p.integral() == pytest.approx(q.integral(), rel=1e-12)


def test_pgm_roundtrip_binary_and_ascii(tmp_path):
    pix = np.arange(12).reshape(3, 4) * 300
    for binary in (True, False):
        path = tmp_path / f"img{binary}.pgm"
        write_pgm(path, pix, maxval=65535, binary=binary)
        out, maxval = read_pgm(path)
        assert maxval == 65535
        assert np.array_equal(out, pix)


def test_pgm_comments_and_8bit(tmp_path):
    path = tmp_path / "c.pgm"
    path.write_bytes(b"P2\n# a comment\n2 2\n255\n0 255\n# mid\n128 1\n")
    out, maxval = read_pgm(path)
    assert maxval == 255
    assert out.tolist() == [[0, 255], [128, 1]]


@pytest.mark.parametrize(
    "payload",
    [b"P5\n4 4\n255\n\x00\x01", b"P3\n2 2\n255\n", b"P2\n2 x\n255\n1 2 3 4", b""],
)
def test_pgm_malformed(tmp_path, payload):
    path = tmp_path / "bad.pgm"
    path.write_bytes(payload)
    with pytest.raises(IngestionError):
        read_pgm(path)


def test_load_density_resamples(tmp_path):
    path = tmp_path / "ramp.pgm"
    pix = np.tile(np.arange(5) * 1000, (3, 1))
    write_pgm(path, pix, maxval=4000)
    f = load_density(path, Grid2D(9, 9))
    assert np.allclose(f.values, f.grid.x[None, :] * np.ones((9, 1)))


def test_export_pgm16_and_csv(tmp_path):
    grid = build_space_time_grid(4, 3, 3)
    vals = np.linspace(0.1, 1.0, grid.n_nodes).reshape(grid.shape)
    rho = SpaceTimeField(grid, vals)
    paths = export_frames(rho, tmp_path / "pgm", "pgm16")
    assert [p.name for p in paths] == ["frame_0000.pgm", "frame_0001.pgm", "frame_0002.pgm"]
    first, _ = read_pgm(paths[0])
    last, _ = read_pgm(paths[-1])
    assert first[0, 0] == 0 and last[-1, -1] == 65535
    paths = export_frames(rho, tmp_path / "csv", "csv")
    lines = paths[1].read_text().splitlines()
    assert lines[0] == "x,y,value"
    assert len(lines) == 1 + 12
    x, y, value = map(float, lines[2].split(","))
    assert (x, y) == (1 / 3, 0.0)
    assert value == vals[1, 0, 1]


def test_export_constant_sequence(tmp_path):
    grid = build_space_time_grid(3, 3, 3)
    rho = SpaceTimeField(grid, np.ones(grid.shape))
    p = export_frames(rho, tmp_path, "pgm16")[0]
    assert np.all(read_pgm(p)[0] == 0)
