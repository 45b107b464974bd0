import numpy as np
import pytest

from adjointgp import (
    DomainError,
    Field,
    Grid,
    GridMismatchError,
    dirac_window,
    field_from_binary,
    field_from_csv,
    field_to_binary,
    field_to_csv,
    inner_product,
    norm,
    window_indicator,
)


def test_grid_regular_layout():
    grid = Grid.regular(((0.0, 1.0), (2.0, 6.0)), (100, 8))
    assert grid.dims == (100, 8)
    np.testing.assert_allclose(grid.spacing, (0.01, 0.5))
    np.testing.assert_allclose(grid.origin, (0.0, 2.0))
    assert grid.num_cells == 800
    np.testing.assert_allclose(grid.cell_volume, 0.005)
    np.testing.assert_allclose(grid.bounds(1), (2.0, 6.0))


def test_grid_centers_first_and_last():
    grid = Grid.regular(((0.0, 1.0),), (4,))
    np.testing.assert_allclose(grid.axis_centers(0), [0.125, 0.375, 0.625, 0.875])


def test_grid_equality_is_structural():
    a = Grid.regular(((0.0, 1.0),), (10,))
    b = Grid.regular(((0.0, 1.0),), (10,))
    c = Grid.regular(((0.0, 1.0),), (20,))
    assert a == b
    assert a != c


def test_grid_rejects_degenerate_axes():
    with pytest.raises(ValueError):
        Grid((1,), (0.1,), (0.0,))
    with pytest.raises(ValueError):
        Grid((4,), (-0.1,), (0.0,))
    with pytest.raises(ValueError):
        Grid.regular(((1.0, 1.0),), (4,))


def test_field_is_immutable():
    grid = Grid.regular(((0.0, 1.0),), (5,))
    f = Field.full(grid, 2.0)
    with pytest.raises(AttributeError):
        f.values = np.zeros(5)
    with pytest.raises(ValueError):
        f.values[0] = 3.0


def test_field_rejects_nonfinite_and_bad_shape():
    grid = Grid.regular(((0.0, 1.0),), (5,))
    with pytest.raises(ValueError):
        Field(grid, [1.0, np.nan, 0.0, 0.0, 0.0])
    with pytest.raises(ValueError):
        Field(grid, np.zeros(4))
    # non-finite values are fine on cells the mask excludes
    f = Field(grid, [1.0, np.inf, 2.0, 3.0, 4.0],
              mask=[True, False, True, True, True])
    assert f.values_flat[1] == 0.0


def test_inner_product_of_normalized_window_is_one():
    grid = Grid.regular(((0.0, 1.0),), (100,))
    w = window_indicator(grid, [0.25], [0.35])
    ones = Field.full(grid, 1.0)
    np.testing.assert_allclose(inner_product(w, ones), 1.0, rtol=1e-12)


def test_window_covers_expected_cells():
    """[0.25, 0.35) on a 100-cell unit grid is 10 cells at height 10."""
    grid = Grid.regular(((0.0, 1.0),), (100,))
    w = window_indicator(grid, [0.25], [0.35])
    covered = np.nonzero(w.values_flat)[0]
    np.testing.assert_array_equal(covered, np.arange(25, 35))
    np.testing.assert_allclose(w.values_flat[covered], 10.0, rtol=1e-12)


def test_window_snaps_to_cell_centers():
    grid = Grid.regular(((0.0, 1.0),), (10,))
    # covers only the cell centered at 0.35
    w = window_indicator(grid, [0.32], [0.41])
    assert np.count_nonzero(w.values_flat) == 1
    with pytest.raises(DomainError):
        window_indicator(grid, [0.36], [0.39])
    with pytest.raises(ValueError):
        window_indicator(grid, [0.5], [0.4])


def test_inner_product_quadrature_anchors():
    grid = Grid.regular(((0.0, 1.0),), (200,))
    t = Field(grid, grid.axis_centers(0))
    ones = Field.full(grid, 1.0)
    # midpoint rule is exact for linear integrands
    np.testing.assert_allclose(inner_product(t, ones), 0.5, rtol=1e-12)
    t2 = Field(grid, grid.axis_centers(0) ** 2)
    np.testing.assert_allclose(inner_product(t2, ones), 1.0 / 3.0, rtol=1e-3)


def test_inner_product_matches_naive_loop():
    rng = np.random.default_rng(7)
    grid = Grid.regular(((0.0, 2.0), (1.0, 3.0), (0.0, 1.0)), (4, 5, 3))
    a = Field(grid, rng.standard_normal(grid.shape))
    b = Field(grid, rng.standard_normal(grid.shape))
    acc = 0.0
    for i in range(4):
        for j in range(5):
            for k in range(3):
                acc += a.values[i, j, k] * b.values[i, j, k]
    acc *= grid.cell_volume
    np.testing.assert_allclose(inner_product(a, b), acc, rtol=1e-12)


def test_inner_product_rejects_grid_mismatch():
    a = Field.full(Grid.regular(((0.0, 1.0),), (10,)), 1.0)
    b = Field.full(Grid.regular(((0.0, 1.0),), (20,)), 1.0)
    with pytest.raises(GridMismatchError):
        inner_product(a, b)


def test_masked_inner_product_skips_undefined_cells():
    grid = Grid.regular(((0.0, 1.0),), (4,))
    a = Field(grid, [1.0, 2.0, 3.0, 4.0], mask=[True, True, False, True])
    b = Field(grid, [1.0, 1.0, 1.0, 1.0])
    np.testing.assert_allclose(inner_product(a, b), (1 + 2 + 4) * 0.25, rtol=1e-12)


def test_norm_matches_manual():
    grid = Grid.regular(((0.0, 1.0),), (4,))
    f = Field(grid, [3.0, 0.0, 0.0, 4.0])
    np.testing.assert_allclose(norm(f), np.sqrt(25.0 * 0.25), rtol=1e-12)


def test_dirac_window_selects_single_cell():
    grid = Grid.regular(((0.0, 1.0),), (10,))
    w = dirac_window(grid, [0.23])
    covered = np.nonzero(w.values_flat)[0]
    np.testing.assert_array_equal(covered, [2])
    np.testing.assert_allclose(w.values_flat[2], 10.0, rtol=1e-12)


def test_dirac_window_closed_upper_edge():
    # the domain's top boundary belongs to the last cell
    grid = Grid.regular(((0.0, 1.0),), (10,))
    w = dirac_window(grid, [1.0])
    assert np.nonzero(w.values_flat)[0].tolist() == [9]
    with pytest.raises(DomainError):
        dirac_window(grid, [1.0000001])
    with pytest.raises(DomainError):
        dirac_window(grid, [-0.1])


def test_csv_round_trip(tmp_path):
    rng = np.random.default_rng(11)
    grid = Grid.regular(((0.0, 1.0), (0.0, 2.0)), (6, 4))
    f = Field(grid, rng.standard_normal(grid.shape))
    path = tmp_path / "field.csv"
    field_to_csv(f, path)
    g = field_from_csv(grid, path)
    np.testing.assert_allclose(g.values, f.values, rtol=0, atol=0)
    assert g.mask is None


def test_csv_round_trip_with_mask(tmp_path):
    grid = Grid.regular(((0.0, 1.0),), (5,))
    mask = [True, False, True, True, False]
    f = Field(grid, [1.0, 9.0, 3.0, 4.0, 9.0], mask=mask)
    path = tmp_path / "field.csv"
    field_to_csv(f, path)
    g = field_from_csv(grid, path)
    np.testing.assert_array_equal(g.mask_flat, mask)
    np.testing.assert_allclose(g.values_flat, [1.0, 0.0, 3.0, 4.0, 0.0])


def test_binary_round_trip_bit_exact(tmp_path):
    rng = np.random.default_rng(13)
    grid = Grid.regular(((0.0, 10.0), (0.0, 5.0), (-1.0, 1.0)), (5, 4, 3))
    f = Field(grid, rng.standard_normal(grid.shape))
    path = tmp_path / "field.fld"
    field_to_binary(f, path)
    g = field_from_binary(path)
    assert g.grid == f.grid
    assert (g.values == f.values).all()


def test_binary_round_trip_with_mask(tmp_path):
    grid = Grid.regular(((0.0, 1.0),), (6,))
    f = Field(grid, np.arange(6.0), mask=[True, True, False, True, False, True])
    path = tmp_path / "field.fld"
    field_to_binary(f, path)
    g = field_from_binary(path)
    np.testing.assert_array_equal(g.mask_flat, f.mask_flat)
    assert (g.values_flat == f.values_flat).all()


def test_binary_rejects_foreign_file(tmp_path):
    path = tmp_path / "junk.fld"
    path.write_bytes(b"NOTAFLD0" + b"\x00" * 64)
    with pytest.raises(ValueError, match="magic"):
        field_from_binary(path)
