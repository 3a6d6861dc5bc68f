from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sinvt.lsd import (
    DensityCurve,
    default_grid,
    density,
    lsd_functional,
    numeric_support,
)
from sinvt.measures import ModelParams, SpectralMeasure, TestFunction
from sinvt.oracles import inverse_mp_density, inverse_mp_edges

X = TestFunction.polynomial([0.0, 1.0])
X2 = TestFunction.polynomial([0.0, 0.0, 1.0])


@pytest.mark.parametrize("y", [0.1, 0.5, 0.9])
def test_identity_density_matches_change_of_variables(y):
    params = ModelParams(y, SpectralMeasure((1.0,), (1.0,)))
    curve = density(params)
    ref = inverse_mp_density(curve.grid, y)
    assert np.max(np.abs(curve.values - ref)) < 1e-6 * max(1.0, ref.max())
    assert curve.mass() == pytest.approx(1.0, abs=1e-4)
    assert curve.zero_mass == 0.0


@pytest.mark.parametrize("y", [0.1, 0.5, 0.9])
def test_identity_support_endpoints(y):
    (lo, hi), = numeric_support(ModelParams(y, SpectralMeasure((1.0,), (1.0,))))
    a, b = inverse_mp_edges(y)
    assert lo == pytest.approx(a, abs=1e-2)
    assert hi == pytest.approx(b, abs=1e-2)


def test_scaled_identity_density():
    params = ModelParams(0.3, SpectralMeasure((2.5,), (1.0,)))
    curve = density(params, np.linspace(0.9, 9.0, 200))
    assert np.allclose(curve.values, inverse_mp_density(curve.grid, 0.3, 2.5), atol=1e-7)


def test_zero_atom_mass_is_split_off():
    params = ModelParams(0.25, SpectralMeasure((0.0, 1.0), (0.3, 0.7)))
    curve = density(params)
    assert curve.zero_mass == pytest.approx(0.3)
    assert curve.mass() == pytest.approx(1.0, abs=1e-4)
    assert curve.cdf_at(-1.0) == 0.0
    assert curve.cdf_at(1e-12) == pytest.approx(0.3)


def test_separated_population_has_two_support_intervals():
    params = ModelParams(0.05, SpectralMeasure((1.0, 10.0), (0.5, 0.5)))
    intervals = numeric_support(params)
    assert len(intervals) == 2
    assert intervals[0][1] < 2.0 < 5.0 < intervals[1][0]


def test_spread_population_mass():
    params = ModelParams(0.9, SpectralMeasure((0.01, 1.0, 100.0), (0.2, 0.5, 0.3)))
    assert density(params).mass() == pytest.approx(1.0, abs=1e-4)


def test_density_input_validation():
    params = ModelParams(0.3, SpectralMeasure((1.0,), (1.0,)))
    with pytest.raises(ValueError):
        density(params, [1.0, 0.5])
    with pytest.raises(ValueError):
        density(params, [0.0, 1.0])
    with pytest.raises(ValueError):
        density(params, [1.0, 2.0], eps_schedule=[1e-7, 1e-5])


def test_default_grid_is_positive_and_sorted():
    grid = default_grid(ModelParams(0.25, SpectralMeasure((0.0, 1.0), (0.3, 0.7))))
    assert grid[0] > 0.0
    assert np.all(np.diff(grid) > 0.0)


def test_csv_format():
    curve = DensityCurve(np.array([1.0, 2.0]), np.array([0.5, 0.25]), 0.0, np.array([1e-7, 2e-7]))
    text = curve.to_csv("# header")
    assert text == "# header\nx,density,epsilon_used\n1,0.5,9.9999999999999995e-08\n2,0.25,1.9999999999999999e-07\n"
    assert "\r" not in text


def test_density_is_deterministic():
    params = ModelParams(0.4, SpectralMeasure((1.0, 3.0), (0.5, 0.5)))
    a, b = density(params), density(params)
    assert a.to_csv() == b.to_csv()


_atoms = st.lists(st.tuples(st.floats(0.05, 20.0), st.floats(0.05, 1.0)), min_size=1, max_size=6,
                  unique_by=lambda a: round(a[0], 3))


@given(atoms=_atoms, y=st.floats(0.05, 0.9))
@settings(max_examples=25, deadline=None)
def test_first_moment_identity(atoms, y):
    total = sum(w for _, w in atoms)
    measure = SpectralMeasure.from_atoms((t, w / total) for t, w in atoms)
    params = ModelParams(y, measure)
    assert lsd_functional(X, params) == pytest.approx(measure.moment(1) / (1 - y), rel=1e-9)


@pytest.mark.parametrize("y", [0.1, 0.5, 0.8])
def test_identity_second_moment_and_log(y):
    params = ModelParams(y, SpectralMeasure((1.0,), (1.0,)))
    assert lsd_functional(X2, params) == pytest.approx(1 / (1 - y) ** 3, rel=1e-9)
    # int log dF = -int log dMP = (1 - y) log(1 - y) / y + 1
    expected = (1 - y) * math.log(1 - y) / y + 1
    assert lsd_functional(TestFunction.log(), params) == pytest.approx(expected, rel=1e-9)
