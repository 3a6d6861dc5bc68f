from __future__ import annotations

import math

import numpy as np
import pytest
from scipy import integrate

from sinvt.measures import ModelParams, MomentModel, SpectralMeasure, TestFunction
from sinvt.oracles import (
    inverse_mp_density,
    inverse_mp_edges,
    inverse_mp_stieltjes,
    mp_companion,
    mp_density,
    mp_edges,
    reference_clt,
    silverstein_companion,
)

X = TestFunction.polynomial([0.0, 1.0])
X2 = TestFunction.polynomial([0.0, 0.0, 1.0])


@pytest.mark.parametrize("y", [0.1, 0.5, 0.9])
def test_mp_density_is_a_probability(y):
    a, b = mp_edges(y)
    mass, _ = integrate.quad(mp_density, a, b, args=(y,), limit=200)
    mean, _ = integrate.quad(lambda x: x * mp_density(x, y), a, b, limit=200)
    assert mass == pytest.approx(1.0, abs=1e-8)
    assert mean == pytest.approx(1.0, abs=1e-8)


@pytest.mark.parametrize("y", [0.1, 0.5, 0.9])
def test_inverse_mp_moments(y):
    a, b = inverse_mp_edges(y)
    mass, _ = integrate.quad(inverse_mp_density, a, b, args=(y,), limit=200)
    mean, _ = integrate.quad(lambda x: x * inverse_mp_density(x, y), a, b, limit=200)
    assert mass == pytest.approx(1.0, abs=1e-8)
    assert mean == pytest.approx(1.0 / (1.0 - y), rel=1e-8)


def test_inverse_mp_scaling():
    x = np.linspace(0.5, 3.0, 7)
    assert np.allclose(inverse_mp_density(x, 0.3, 2.0), inverse_mp_density(x / 2.0, 0.3) / 2.0)
    z = 1.0 + 0.5j
    assert inverse_mp_stieltjes(z, 0.3, 2.0) == pytest.approx(inverse_mp_stieltjes(z / 2.0, 0.3) / 2.0)


def test_mp_companion_decays_like_minus_one_over_w():
    w = 1e6 * (1 + 1j)
    assert w * mp_companion(w, 0.4) == pytest.approx(-1.0, rel=1e-5)
    assert mp_companion(2.0 + 0.1j, 0.4).imag > 0


@pytest.mark.parametrize("w", [0.5 + 0.3j, 2.0 + 0.01j, -1.0 - 0.2j, 7.0 + 3.0j])
def test_silverstein_roots_match_mp_closed_form(w):
    m = silverstein_companion(w, 0.35, SpectralMeasure((1.0,), (1.0,)))
    assert abs(m - complex(mp_companion(w, 0.35))) < 1e-12


def test_silverstein_rejects_real_argument_and_singular_t():
    with pytest.raises(ValueError):
        silverstein_companion(1.0, 0.3, SpectralMeasure((1.0,), (1.0,)))
    with pytest.raises(ValueError):
        silverstein_companion(1.0j, 0.3, SpectralMeasure((0.0, 1.0), (0.5, 0.5)))


@pytest.mark.parametrize("y", [0.1, 0.25, 0.5])
def test_reference_clt_matches_inverse_wishart(y):
    # limits of E tr S^{-1} - p/(1-y) and Var tr S^{-1} for real Wishart S:
    # y/(1-y)^2 and 2y/(1-y)^4
    ref = reference_clt([X], ModelParams(y, SpectralMeasure((1.0,), (1.0,))), nodes=512)
    assert ref.mean[0] == pytest.approx(y / (1 - y) ** 2, rel=1e-10)
    assert 2 * ref.covariance[0, 0] == pytest.approx(2 * y / (1 - y) ** 4, rel=1e-10)


def test_reference_clt_two_atom_values():
    # frozen from the inverted-picture oracle; H = (delta_1 + delta_2)/2, y = 1/3
    params = ModelParams(1 / 3, SpectralMeasure((1.0, 2.0), (0.5, 0.5)), MomentModel("real"))
    ref = reference_clt([X, X2], params, nodes=512)
    assert ref.mean == pytest.approx([1.125, 13.5], rel=1e-10)
    assert 2 * ref.covariance == pytest.approx(
        np.array([[8.15625, 79.734375], [79.734375, 854.3759765625]]), rel=1e-9
    )


def test_reference_clt_rejects_singular_population():
    with pytest.raises(ValueError):
        reference_clt([X], ModelParams(0.3, SpectralMeasure((0.0, 1.0), (0.5, 0.5))))


def test_reference_clt_beta_terms_vanish_for_constant():
    params = ModelParams(0.4, SpectralMeasure((1.0, 3.0), (0.5, 0.5)))
    ref = reference_clt([TestFunction.constant(1.0), X], params, nodes=256)
    assert abs(ref.mean[0]) < 1e-12 and abs(ref.mean_beta[0]) < 1e-12
    assert np.all(np.abs(ref.covariance_beta[0]) < 1e-12)
    assert math.isfinite(ref.mean_beta[1])
