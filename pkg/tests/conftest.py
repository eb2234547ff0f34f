"""Shared fixtures: small meshes and materials the unit suites reuse."""

import numpy as np
import pytest

from pfl import MaterialParams, SpecimenParams, build_specimen


@pytest.fixture(scope="session")
def material():
    """Case-1 style material with unit-friendly derived values."""
    return MaterialParams(
        E=160.0e9,
        nu=0.3,
        rho=7800.0,
        damping=1.0e8,
        fatigue_rate=5.0e-7,
        layer_width=3.0e-4,
        gc=2700.0,
        damage_rate=2.0e-6,
        rate_exponent=1.0,
        delta=1.0e-3,
        thickness=5.0e-3,
    )


@pytest.fixture(scope="session")
def strip_specimen():
    """Degenerate dog-bone: a plain 40 x 8 mm rectangle strip."""
    return SpecimenParams(
        gauge_length=0.02,
        gauge_width=0.008,
        grip_width=0.008,
        fillet_radius=0.0,
        total_length=0.04,
    )


@pytest.fixture(scope="session")
def strip_mesh(strip_specimen):
    return build_specimen(strip_specimen, 2.0e-3)


@pytest.fixture(scope="session")
def coarse_specimen():
    return SpecimenParams()


@pytest.fixture(scope="session")
def coarse_mesh(coarse_specimen):
    """Default specimen at a deliberately coarse resolution."""
    return build_specimen(coarse_specimen, 2.5e-3)


@pytest.fixture()
def rng():
    return np.random.default_rng(42)
