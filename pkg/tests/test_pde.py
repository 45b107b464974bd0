import numpy as np
import pytest

from adjointgp import (
    ConfigError,
    Field,
    Grid,
    GridMismatchError,
    inner_product,
    norm,
)
from adjointgp.pde import PdeParams, PdeSystem, cfl_limit, pde_adjoint, pde_forward, sensor_field
from oracles import pde_apply, pde_apply_adjoint, random_smooth_field

BOUNDS = ((0.0, 10.0), (0.0, 10.0))


def _grid(nt, ny, nx, T=10.0):
    return Grid.regular(((0.0, T), BOUNDS[0], BOUNDS[1]), (nt, ny, nx))


def _params(vy=0.4, vx=0.4, kappa=0.01):
    return PdeParams(velocity=(vy, vx), diffusivity=kappa, bounds=BOUNDS, T=10.0)


def _impulse(grid, center=(3.0, 3.0), width=0.8):
    """Forcing concentrated in the first time slab: a Gaussian blob."""
    yy, xx = np.meshgrid(grid.axis_centers(1), grid.axis_centers(2), indexing="ij")
    blob = np.exp(-((yy - center[0]) ** 2 + (xx - center[1]) ** 2) / width)
    vals = np.zeros(grid.shape)
    vals[0] = blob / grid.spacing[0]
    return Field(grid, vals), yy, xx


def test_cfl_limit_formula():
    grid = _grid(40, 16, 16)
    dx = grid.spacing[1]
    # diffusion-only: 0.9 * dx^2 / (4 kappa)
    np.testing.assert_allclose(
        cfl_limit(_params(0.0, 0.0, 0.01), grid),
        0.9 * dx * dx / 0.04, rtol=1e-12)
    # doubling the diffusivity halves the diffusive bound
    np.testing.assert_allclose(
        cfl_limit(_params(0.0, 0.0, 0.02), grid),
        0.45 * dx * dx / 0.04, rtol=1e-12)
    # advection adds dx/|v| candidates
    np.testing.assert_allclose(
        cfl_limit(_params(0.5, 0.25, 1e-4), grid),
        0.9 * dx / 0.5, rtol=1e-12)


def test_cfl_violation_is_rejected_with_guidance():
    params = _params(kappa=2.0)  # diffusive limit far below dt
    grid = _grid(10, 16, 16)
    with pytest.raises(ConfigError, match="largest admissible step"):
        pde_forward(params, Field.zeros(grid), grid)
    # the diagnostics knob lets the unstable march run anyway
    pde_forward(params, Field.zeros(grid), grid, enforce_cfl=False)


def test_diffusion_conserves_mass():
    """Zero-flux walls: with no advection the spatial integral is constant
    once the forcing has stopped."""
    grid = _grid(40, 16, 16)
    forcing, _, _ = _impulse(grid)
    u = pde_forward(_params(0.0, 0.0, 0.01), forcing, grid)
    sums = u.values.sum(axis=(1, 2))
    np.testing.assert_allclose(sums[5:], sums[5], rtol=1e-10)


def test_blob_advects_at_velocity():
    grid = _grid(40, 16, 16)
    forcing, yy, xx = _impulse(grid)
    u = pde_forward(_params(0.4, 0.4, 0.01), forcing, grid)
    k = 20
    t = grid.axis_centers(0)[k]
    w = u.values[k]
    cy = float((yy * w).sum() / w.sum())
    cx = float((xx * w).sum() / w.sum())
    # displacement from the source tracks velocity * t within a few percent
    np.testing.assert_allclose(cy - 3.0, 0.4 * t, rtol=0.07)
    np.testing.assert_allclose(cx - 3.0, 0.4 * t, rtol=0.07)


def test_no_new_extrema_after_impulse():
    grid = _grid(40, 16, 16)
    forcing, _, _ = _impulse(grid)
    u = pde_forward(_params(), forcing, grid)
    assert u.values.min() >= -1e-10
    assert u.values[1:].max() <= forcing.values[0].max()


def test_forward_is_linear():
    grid = _grid(20, 12, 12)
    params = _params()
    f = random_smooth_field(grid, seed=30)
    g = random_smooth_field(grid, seed=31)
    combo = Field(grid, 1.5 * f.values - 0.5 * g.values)
    lhs = pde_forward(params, combo, grid).values
    rhs = (1.5 * pde_forward(params, f, grid).values
           - 0.5 * pde_forward(params, g, grid).values)
    np.testing.assert_allclose(lhs, rhs, rtol=0, atol=1e-12)


def test_two_route_identity_is_exact():
    # flux-form adjoint is the literal transpose of the forward march,
    # boundary handling included
    grid = _grid(20, 12, 12)
    params = _params()
    for seed in range(4):
        f = random_smooth_field(grid, seed=700 + seed)
        h = random_smooth_field(grid, seed=800 + seed)
        lhs = inner_product(pde_forward(params, f, grid), h)
        rhs = inner_product(f, pde_adjoint(params, h, grid))
        np.testing.assert_allclose(lhs, rhs, rtol=1e-12)


def test_bilinear_identity_against_fd_oracle():
    """<Lu, v> = <u, L*v> with both operators applied by finite differences.

    The residual mixes solver truncation with the adjoint's boundary layers,
    so the regime keeps the mesh Peclet number near one (layers resolved)
    and asserts first-order decay of the mean residual under refinement.
    """
    params = PdeParams(velocity=(0.05, 0.05), diffusivity=0.05,
                       bounds=BOUNDS, T=10.0)
    stats = {}
    for cells in (20, 40):
        grid = _grid(cells, cells, cells)
        rels = []
        for k in range(4):
            f = random_smooth_field(grid, seed=3000 + k, band=(0.5, 1.5))
            h = random_smooth_field(grid, seed=4000 + k, band=(0.5, 1.5))
            u = pde_forward(params, f, grid)
            v = pde_adjoint(params, h, grid)
            lhs = inner_product(pde_apply(params, u), v)
            rhs = inner_product(u, pde_apply_adjoint(params, v))
            rels.append(abs(lhs - rhs) / (norm(u) * norm(v)))
        stats[cells] = np.mean(rels)
        assert max(rels) < 1e-2
    assert stats[20] / stats[40] > 1.74  # ~2^0.8


def test_sensor_field_normalization():
    grid = _grid(40, 16, 16)
    w = sensor_field(grid, (2.0, 2.0), (4.0, 4.0), 1.0, 3.0)
    ones = Field.full(grid, 1.0)
    np.testing.assert_allclose(inner_product(w, ones), 1.0, rtol=1e-12)
    # support stays inside the requested box
    tt = grid.axis_centers(0)
    occupied = np.nonzero(w.values.sum(axis=(1, 2)))[0]
    assert tt[occupied].min() >= 1.0 - grid.spacing[0]
    assert tt[occupied].max() <= 3.0 + grid.spacing[0]


def test_grid_validation():
    params = _params()
    with pytest.raises(GridMismatchError):
        pde_forward(params, Field.zeros(Grid.regular(((0.0, 10.0),), (10,))),
                    Grid.regular(((0.0, 10.0),), (10,)))
    wrong_box = Grid.regular(((0.0, 10.0), (0.0, 5.0), (0.0, 10.0)), (20, 12, 12))
    with pytest.raises(GridMismatchError):
        pde_forward(params, Field.zeros(wrong_box), wrong_box)


def test_system_wraps_free_functions():
    grid = _grid(20, 12, 12)
    params = _params()
    system = PdeSystem(params, grid)
    f = random_smooth_field(grid, seed=40)
    assert (system.forward(f).values == pde_forward(params, f, grid).values).all()
    assert (system.adjoint(f).values == pde_adjoint(params, f, grid).values).all()
    assert system.name == "pde"
