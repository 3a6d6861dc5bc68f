from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sinvt.contour import contour_data, default_contour
from sinvt.measures import ModelParams, SpectralMeasure
from sinvt.oracles import inverse_mp_stieltjes, silverstein_companion
from sinvt.stieltjes import (
    SolverConfig,
    SolverError,
    SupportError,
    companion_A_prime,
    fixed_point_residual,
    inverted_companion,
    solve_along_contour,
    solve_nodes,
    solve_s,
)

THREE = SpectralMeasure((0.5, 1.0, 3.0), (0.2, 0.5, 0.3))
IDENTITY = SpectralMeasure((1.0,), (1.0,))


def _upper(re, im):
    return complex(re, im)


@given(
    re=st.floats(-10.0, 40.0),
    im=st.floats(1e-3, 20.0),
    y=st.sampled_from([0.1, 0.5, 0.9]),
)
@settings(max_examples=80, deadline=None)
def test_solution_satisfies_equation_and_herglotz(re, im, y):
    params = ModelParams(y, THREE)
    sol = solve_s(_upper(re, im), params)
    assert sol.residual < 1e-12
    r = fixed_point_residual(sol.z, sol.s, y, THREE.t, THREE.w)
    assert abs(r) < 1e-12
    assert sol.s.imag > 0


@given(re=st.floats(-3.0, 8.0), im=st.floats(0.01, 3.0), y=st.floats(0.05, 0.9))
@settings(max_examples=60, deadline=None)
def test_identity_population_matches_closed_form(re, im, y):
    z = complex(re, im)
    sol = solve_s(z, ModelParams(y, IDENTITY))
    assert abs(sol.s - complex(inverse_mp_stieltjes(z, y))) < 1e-10 * max(1.0, abs(sol.s))


@pytest.mark.parametrize("z", [1 + 1j, 0.2 + 0.01j, 30 - 2j, -1 + 0.5j, 5e-3 + 1e-4j])
def test_companion_matches_polynomial_oracle(z):
    params = ModelParams(0.4, THREE)
    sol = solve_s(z, params)
    ref = silverstein_companion(1.0 / z, params.y, THREE)
    assert abs(inverted_companion(z, sol) - ref) < 1e-12 * max(1.0, abs(ref))


def test_conjugate_symmetry():
    params = ModelParams(0.5, THREE)
    a = solve_s(2.0 + 0.3j, params)
    b = solve_s(2.0 - 0.3j, params)
    assert b.s == pytest.approx(a.s.conjugate(), rel=1e-13)


def test_real_axis_outside_support():
    params = ModelParams(0.3, THREE)
    left = solve_s(-2.0, params)
    right = solve_s(100.0, params)
    assert left.s.imag == 0.0 and right.s.imag == 0.0
    # s is increasing on the real line off the support
    assert left.s.real > 0 and right.s.real < 0


def test_large_z_asymptote():
    sol = solve_s(1e6j, ModelParams(0.5, THREE))
    assert sol.z * sol.s == pytest.approx(-1.0, abs=1e-5)


def test_real_point_inside_bracket_raises():
    with pytest.raises(SupportError):
        solve_s(1.0, ModelParams(0.4, THREE))
    with pytest.raises(SupportError):
        solve_s(0.0, ModelParams(0.4, THREE))


def test_a_prime_matches_central_difference():
    params = ModelParams(0.6, THREE)
    for z in (0.3 + 0.2j, 2.0 + 1.0j, 10.0 + 0.5j):
        sol = solve_s(z, params)
        h = 1e-6 * abs(z)
        fd = (solve_s(z + h, params).A - solve_s(z - h, params).A) / (2 * h)
        assert abs(companion_A_prime(sol, params) - fd) < 1e-6 * abs(fd)


def test_solver_reports_nonconvergence():
    cfg = SolverConfig(max_iterations=1, tolerance=1e-300)
    with pytest.raises(SolverError) as info:
        solve_s(1.0 + 0.01j, ModelParams(0.9, THREE), cfg)
    assert info.value.z == 1.0 + 0.01j


def test_warm_start_gives_same_answer():
    params = ModelParams(0.5, THREE)
    a = solve_s(1.5 + 0.2j, params)
    b = solve_s(1.5 + 0.21j, params, warm_start=a.s)
    c = solve_s(1.5 + 0.21j, params)
    assert b.s == pytest.approx(c.s, rel=1e-13)


def test_node_chain_matches_vectorized_contour():
    params = ModelParams(0.7, THREE)
    contour = default_contour(params).with_nodes(64)
    A, res, _ = solve_nodes(contour.points(), params)
    d = contour_data(contour, params)
    assert np.max(np.abs(A - d.A) / np.abs(d.A)) < 1e-12
    assert np.max(res) < 1e-12
    sols = solve_along_contour(contour, params)
    assert len(sols) == 64
    assert all(abs(s.A - a) < 1e-12 * abs(a) for s, a in zip(sols, A))


def test_node_failure_carries_index():
    params = ModelParams(0.4, THREE)
    with pytest.raises(SupportError, match="node 1"):
        solve_nodes([5.0 + 1j, 1.0 + 0j], params)


def test_regularization_shifts_population():
    params = ModelParams(0.3, SpectralMeasure((0.0, 1.0), (0.5, 0.5)))
    cfg = SolverConfig(epsilon_regularization=1e-3)
    sol = solve_s(2.0 + 1.0j, params, cfg)
    assert sol.epsilon == 1e-3
    shifted = SpectralMeasure((1e-3, 1.0 + 1e-3), (0.5, 0.5))
    assert abs(fixed_point_residual(sol.z, sol.s, 0.3, shifted.t, shifted.w)) < 1e-12


def test_config_validation():
    with pytest.raises(ValueError):
        SolverConfig(tolerance=0.0)
    with pytest.raises(ValueError):
        SolverConfig(damping=1.5)
    with pytest.raises(ValueError):
        SolverConfig(max_iterations=0)
