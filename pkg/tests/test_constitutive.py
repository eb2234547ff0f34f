"""Closed-form checks of the material laws and their derivatives."""

import numpy as np
import numpy.testing as npt
import pytest

from pfl import (
    ConfigurationError,
    MaterialParams,
    damage_mobility,
    damage_potential,
    damage_potential_deriv,
    degradation,
    elasticity_matrix,
    fatigue_potential,
    fatigue_potential_deriv,
    fatigue_source,
)

RTOL = 1e-12


# ---------------------------------------------------------------- elasticity

def test_elasticity_matrix_values():
    C = elasticity_matrix(160.0e9, 0.3)
    npt.assert_allclose(C[0, 0], 160.0e9 / 0.91, rtol=RTOL)
    npt.assert_allclose(C[1, 1], 160.0e9 / 0.91, rtol=RTOL)
    npt.assert_allclose(C[0, 1], 0.3 * 160.0e9 / 0.91, rtol=RTOL)
    npt.assert_allclose(C[2, 2], 160.0e9 * 0.7 / 1.82, rtol=RTOL)
    # frozen decimal expansions of the same expressions
    npt.assert_allclose(C[0, 0], 1.7582417582417582e11, rtol=RTOL)
    npt.assert_allclose(C[0, 1], 5.2747252747252747e10, rtol=RTOL)
    npt.assert_allclose(C[2, 2], 6.1538461538461538e10, rtol=RTOL)


def test_elasticity_matrix_decoupled_limit():
    C = elasticity_matrix(7.0e9, 0.0)
    npt.assert_allclose(C, np.diag([7.0e9, 7.0e9, 3.5e9]), rtol=RTOL)


def test_elasticity_matrix_symmetry(rng):
    for _ in range(25):
        E = 10.0 ** rng.uniform(6, 12)
        nu = rng.uniform(0.0, 0.499)
        C = elasticity_matrix(E, nu)
        npt.assert_allclose(C, C.T, rtol=RTOL)


def test_elasticity_matrix_rejects_incompressible():
    with pytest.raises(ConfigurationError):
        elasticity_matrix(1.0e9, 0.5)
    with pytest.raises(ConfigurationError):
        elasticity_matrix(1.0e9, 0.62)


# ---------------------------------------------------------------- degradation

def test_degradation_values():
    npt.assert_allclose(degradation(0.0), 1.0, rtol=RTOL)
    npt.assert_allclose(degradation(1.0), 0.0, atol=1e-300)
    npt.assert_allclose(degradation(0.5), 0.25, rtol=RTOL)
    npt.assert_allclose(degradation(np.array([0.0, 0.25, 1.5])),
                        [1.0, 0.5625, 0.25], rtol=RTOL)


# ---------------------------------------------------------------- potentials

def test_damage_potential_branches():
    delta = 1e-3
    npt.assert_allclose(damage_potential(0.5, delta), 0.125, rtol=RTOL)
    npt.assert_allclose(damage_potential(1.5, delta), 0.5005, rtol=RTOL)
    npt.assert_allclose(damage_potential(-0.2, delta), 0.2e-3, rtol=RTOL)
    npt.assert_allclose(damage_potential_deriv(0.5, delta), 0.5, rtol=RTOL)
    npt.assert_allclose(damage_potential_deriv(1.5, delta), delta, rtol=RTOL)
    npt.assert_allclose(damage_potential_deriv(-0.2, delta), -delta, rtol=RTOL)


def test_damage_potential_is_continuous_at_joints():
    delta = 1e-3
    eps = 1e-9
    for joint in (0.0, 1.0):
        lo = damage_potential(joint - eps, delta)
        hi = damage_potential(joint + eps, delta)
        assert abs(hi - lo) < 1e-8


def test_fatigue_potential_branches():
    npt.assert_allclose(fatigue_potential(0.5), -0.5, rtol=RTOL)
    npt.assert_allclose(fatigue_potential(2.0), -1.0, rtol=RTOL)
    npt.assert_allclose(fatigue_potential(-1.0), 0.0, atol=0.0)
    npt.assert_allclose(fatigue_potential_deriv(0.5), -1.0, rtol=RTOL)
    npt.assert_allclose(fatigue_potential_deriv(1.2), 0.0, atol=0.0)
    npt.assert_allclose(fatigue_potential_deriv(-0.1), 0.0, atol=0.0)


def test_potentials_vectorize():
    phi = np.linspace(-0.5, 1.5, 41)
    H = damage_potential(phi, 1e-3)
    Hf = fatigue_potential(phi)
    assert H.shape == phi.shape and Hf.shape == phi.shape
    assert np.all(H >= 0.0)
    assert np.all((Hf <= 0.0) & (Hf >= -1.0))


# ---------------------------------------------------------------- mobility

def test_damage_mobility_values(material):
    npt.assert_allclose(damage_mobility(0.0, material),
                        2e-6 / 1.001, rtol=RTOL)
    npt.assert_allclose(damage_mobility(0.0, material),
                        1.998001998001998e-6, rtol=RTOL)
    npt.assert_allclose(damage_mobility(1.0, material), 2.0e-3, rtol=RTOL)


def test_damage_mobility_monotone(material, rng):
    lo = damage_mobility(0.1, material)
    hi = damage_mobility(0.9, material)
    assert hi > lo
    phi = np.sort(rng.uniform(0.0, 1.0, 50))
    vals = damage_mobility(phi, material)
    assert np.all(np.diff(vals) >= 0.0)


def test_damage_mobility_clamps_out_of_range(material):
    # formula is evaluated on phi clamped to [0, 1]
    npt.assert_allclose(damage_mobility(-0.3, material),
                        damage_mobility(0.0, material), rtol=RTOL)
    npt.assert_allclose(damage_mobility(1.2, material),
                        damage_mobility(1.0, material), rtol=RTOL)


# ---------------------------------------------------------------- fatigue source

def test_fatigue_source_zero_rate(material):
    eps = np.array([[1e-3, 0.0], [0.0, -3e-4]])
    zero = np.zeros((2, 2))
    npt.assert_allclose(fatigue_source(eps, zero, 0.2, material), 0.0, atol=0.0)


def test_fatigue_source_fractured_material(material):
    eps = np.array([[1e-3, 0.0], [0.0, 0.0]])
    deps = np.array([[1e-2, 0.0], [0.0, 0.0]])
    npt.assert_allclose(fatigue_source(eps, deps, 1.0, material), 0.0, atol=0.0)


def test_fatigue_source_uniaxial_hand_value(material):
    """Uniaxial E = diag(e, 0), D = diag(d, 0) against the expanded form.

    sigma_11 = C11 e, contraction = (C11 e + b d) d; prefactor a (1-phi).
    """
    e, d, phi = 2e-4, 3e-3, 0.25
    eps = np.diag([e, 0.0])
    deps = np.diag([d, 0.0])
    C11 = 160.0e9 / 0.91
    expected = 5e-7 * (1.0 - phi) * abs((C11 * e + 1e8 * d) * d)
    npt.assert_allclose(fatigue_source(eps, deps, phi, material), expected, rtol=RTOL)


def test_fatigue_source_nonnegative(material, rng):
    eps = rng.normal(scale=1e-3, size=(40, 2, 2))
    eps = 0.5 * (eps + np.swapaxes(eps, -1, -2))
    deps = rng.normal(scale=1e-2, size=(40, 2, 2))
    deps = 0.5 * (deps + np.swapaxes(deps, -1, -2))
    phi = rng.uniform(-0.2, 1.3, 40)
    vals = fatigue_source(eps, deps, phi, material)
    assert np.all(vals >= 0.0)


# ---------------------------------------------------------------- params

def test_material_params_validation():
    with pytest.raises(ConfigurationError):
        MaterialParams(E=-1.0, nu=0.3, rho=7800.0, damping=0.0, fatigue_rate=0.0,
                       layer_width=3e-4, gc=2700.0, damage_rate=2e-6)
    with pytest.raises(ConfigurationError):
        MaterialParams(E=1e9, nu=0.6, rho=7800.0, damping=0.0, fatigue_rate=0.0,
                       layer_width=3e-4, gc=2700.0, damage_rate=2e-6)


def test_material_params_allows_frozen_damage():
    mat = MaterialParams(E=1e9, nu=0.3, rho=7800.0, damping=0.0, fatigue_rate=0.0,
                         layer_width=3e-4, gc=2700.0, damage_rate=0.0)
    assert damage_mobility(0.5, mat) == 0.0
