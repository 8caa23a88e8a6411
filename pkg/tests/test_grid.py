import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from alexflow.grid import (
    GridError,
    ScalarField,
    fd5_matrix,
    heat_smooth_array,
    integrate,
    inverse_laplacian_array,
    laplacian,
    make_grid,
    restrict,
)
from helpers import random_smooth_w


def test_cell_area_and_total_area():
    assert make_grid(64, 64, 1.0, 1.0).cell_area == 1 / 4096
    assert make_grid(8, 8, 2.0, 2.0).area == 4.0
    g = make_grid(8, 8, 2.0, 2.0)
    assert integrate(ScalarField.constant(g, 1.0)) == pytest.approx(4.0, rel=1e-15)


@pytest.mark.parametrize("args", [(4, 64, 1, 1), (64, 7, 1, 1), (16, 16, 0, 1), (16, 16, 1, -2.0), (16.5, 16, 1, 1)])
def test_rejects_bad_grids(args):
    with pytest.raises(GridError):
        make_grid(*args)


def test_field_validation():
    g = make_grid(8, 8)
    with pytest.raises(GridError):
        ScalarField(g, np.zeros((8, 9)))
    with pytest.raises(GridError):
        ScalarField(g, np.full((8, 8), np.nan))
    f = ScalarField(g, np.zeros((8, 8)))
    with pytest.raises(ValueError):
        f.values[0, 0] = 1.0


def test_laplacian_of_constant_is_zero():
    g = make_grid(32, 32)
    for method in ("fd5", "spectral"):
        assert np.abs(laplacian(ScalarField.constant(g, 5.0), method).values).max() == 0.0


@pytest.mark.parametrize("L", [1.0, 2.5])
def test_laplacian_eigenfunction(L):
    errs = []
    for n in (32, 64):
        g = make_grid(n, n, L, L)
        f = ScalarField.from_function(g, lambda x, y: np.sin(2 * np.pi * x / L))
        exact = -(2 * np.pi / L) ** 2 * f.values
        errs.append(np.abs(laplacian(f).values - exact).max())
        spec_err = np.abs(laplacian(f, "spectral").values - exact).max()
        assert spec_err < 1e-9 * (2 * np.pi / L) ** 2
    assert errs[0] / errs[1] == pytest.approx(4.0, rel=0.02)


def test_laplacian_second_order_on_smooth_fields():
    """Error against the spectral Laplacian (exact on band-limited input) drops ~4x per halving."""
    errs = []
    for n in (32, 64, 128, 256):
        g = make_grid(n, n)
        f = np.log(random_smooth_w(g, np.random.default_rng(7)).values)
        exact = laplacian(ScalarField(g, f), "spectral").values
        errs.append(np.abs(laplacian(ScalarField(g, f)).values - exact).max())
    orders = [math.log2(a / b) for a, b in zip(errs, errs[1:])]
    assert min(orders) > 1.9


@given(st.integers(0, 2**32 - 1))
def test_divergence_theorem_and_linearity(seed):
    rng = np.random.default_rng(seed)
    g = make_grid(16, 24, 1.0, 1.5)
    f1 = ScalarField(g, rng.normal(size=g.shape))
    f2 = ScalarField(g, rng.normal(size=g.shape))
    for method in ("fd5", "spectral"):
        lap1 = laplacian(f1, method)
        scale = integrate(lap1.with_values(np.abs(lap1.values)))
        assert abs(integrate(lap1)) <= 1e-12 * scale
        a, b = rng.normal(size=2)
        combo = laplacian(f1.with_values(a * f1.values + b * f2.values), method).values
        sep = a * lap1.values + b * laplacian(f2, method).values
        assert np.abs(combo - sep).max() <= 1e-10 * (np.abs(sep).max() + 1)


def test_integrate_sine_vanishes():
    g = make_grid(64, 32, 2.0, 1.0)
    f = ScalarField.from_function(g, lambda x, y: np.sin(2 * np.pi * x / 2.0))
    assert abs(integrate(f)) < 1e-14


def test_fd5_matrix_matches_stencil():
    rng = np.random.default_rng(0)
    g = make_grid(12, 10, 1.0, 2.0)
    v = rng.normal(size=g.shape)
    lap = laplacian(ScalarField(g, v)).values
    mat = (fd5_matrix(g) @ v.ravel()).reshape(g.shape)
    assert np.allclose(mat - mat.mean(), lap, atol=1e-10)


def test_inverse_laplacian_and_heat_smoothing():
    rng = np.random.default_rng(1)
    g = make_grid(32, 32)
    v = rng.normal(size=g.shape)
    u = inverse_laplacian_array(v, g)
    back = laplacian(ScalarField(g, u), "spectral").values
    assert np.allclose(back, v - v.mean(), atol=1e-10)
    sm = heat_smooth_array(v, g, 1e-3)
    assert sm.mean() == pytest.approx(v.mean(), abs=1e-14)
    assert sm.std() < v.std()


def test_json_roundtrip_and_restrict():
    g = make_grid(32, 16, 1.0, 0.5)
    f = ScalarField.from_function(g, lambda x, y: x + 10 * y)
    back = ScalarField.from_json(json.loads(f.dumps()))
    assert back.grid == g and np.array_equal(back.values, f.values)
    coarse = restrict(f, 2)
    assert coarse.grid.shape == (16, 8)
    assert integrate(coarse) == pytest.approx(integrate(f), rel=1e-14)
    with pytest.raises(GridError):
        restrict(f, 3)
