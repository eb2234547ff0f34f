"""Constitutive laws for an isothermal phase-field fatigue fracture model.

The material is linear elastic in plane stress, degraded by a scalar damage
field ``phi`` through the factor ``(1 - phi)^2``.  Damage evolution is driven
by stored elastic energy and resisted by a piecewise-quadratic transition
potential whose linear penalty branches (slope ``delta``) discourage ``phi``
from leaving ``[0, 1]``.  A fatigue variable ``F`` accumulates irreversibly
from mechanical dissipation and lowers the effective fracture toughness by
coupling to a second transition potential.

All scalar functions broadcast over numpy arrays.  NaN inputs propagate to
NaN outputs; no silent sanitizing is performed.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError

__all__ = [
    "MaterialParams",
    "elasticity_matrix",
    "degradation",
    "damage_potential",
    "damage_potential_deriv",
    "fatigue_potential",
    "fatigue_potential_deriv",
    "damage_mobility",
    "fatigue_source",
]


# =====================================================================
# Parameters
# =====================================================================

@dataclass(frozen=True)
class MaterialParams:
    """Material, damage and fatigue parameters.

    Parameters
    ----------
    E : float
        Young's modulus (Pa).
    nu : float
        Poisson's ratio; must satisfy 0 <= nu < 0.5 (plane stress).
    rho : float
        Mass density (kg/m^3).
    damping : float
        Viscous (Kelvin-Voigt) damping modulus ``b`` (N s/m^2).
    fatigue_rate : float
        Scale ``a`` of fatigue accumulation per unit dissipated power (m^2).
    layer_width : float
        Diffuse crack width parameter ``gamma`` (m).
    gc : float
        Critical energy release rate (N/m).
    damage_rate : float
        Damage mobility scale ``c`` (m/(N s)).
    rate_exponent : float, optional
        Exponent steepening the mobility as damage grows.  Default 1.
    delta : float, optional
        Slope of the penalty branches of the transition potentials and
        regularization of the mobility denominator.  Default 1e-3.
    thickness : float, optional
        Out-of-plane thickness (m) used when integrating over the domain.
    """

    E: float
    nu: float
    rho: float
    damping: float
    fatigue_rate: float
    layer_width: float
    gc: float
    damage_rate: float
    rate_exponent: float = 1.0
    delta: float = 1.0e-3
    thickness: float = 5.0e-3

    def __post_init__(self):
        self.validate()

    def validate(self):
        """Raise :class:`ConfigurationError` if any parameter is ill posed."""
        positive = {
            "E": self.E,
            "rho": self.rho,
            "layer_width": self.layer_width,
            "gc": self.gc,
            "rate_exponent": self.rate_exponent,
            "delta": self.delta,
            "thickness": self.thickness,
        }
        for name, value in positive.items():
            if not np.isfinite(value) or value <= 0.0:
                raise ConfigurationError(f"{name} must be positive, got {value!r}")
        # damage_rate = 0 is allowed: it freezes damage evolution, which
        # gives the purely elastic reference response.
        nonnegative = (
            ("damping", self.damping),
            ("fatigue_rate", self.fatigue_rate),
            ("damage_rate", self.damage_rate),
        )
        for name, value in nonnegative:
            if not np.isfinite(value) or value < 0.0:
                raise ConfigurationError(f"{name} must be non-negative, got {value!r}")
        if not (0.0 <= self.nu < 0.5):
            raise ConfigurationError(f"nu must lie in [0, 0.5), got {self.nu!r}")


# =====================================================================
# Elasticity
# =====================================================================

def elasticity_matrix(E, nu):
    """Plane-stress elasticity matrix in Voigt form.

    Rows and columns are ordered ``(11, 22, 12)`` with engineering shear
    strain, so ``sigma = C @ [eps11, eps22, 2*eps12]``.

    Parameters
    ----------
    E : float
        Young's modulus (Pa).
    nu : float
        Poisson's ratio.

    Returns
    -------
    ndarray, shape (3, 3)
    """
    if nu >= 0.5 or nu <= -1.0:
        raise ConfigurationError(f"nu must lie in (-1, 0.5), got {nu!r}")
    f = E / (1.0 - nu * nu)
    return np.array(
        [
            [f, f * nu, 0.0],
            [f * nu, f, 0.0],
            [0.0, 0.0, f * (1.0 - nu) / 2.0],
        ]
    )


def degradation(phi):
    """Stiffness degradation factor ``(1 - phi)^2``."""
    phi = np.asarray(phi, dtype=float)
    return (1.0 - phi) ** 2


# =====================================================================
# Transition potentials
# =====================================================================
# Both potentials are C^1 on the whole real line: quadratic / linear inside
# [0, 1] and linear penalty branches outside.  The derivative conventions at
# the breakpoints follow the closed interval (phi = 0 and phi = 1 use the
# interior branch).

def damage_potential(phi, delta=1.0e-3):
    """Transition potential resisting damage growth.

    ``phi**2 / 2`` on ``[0, 1]``; continues with slope ``+delta`` above 1
    and slope ``-delta`` below 0.
    """
    phi = np.asarray(phi, dtype=float)
    return np.where(
        phi < 0.0,
        -delta * phi,
        np.where(phi > 1.0, 0.5 + delta * (phi - 1.0), 0.5 * phi * phi),
    )


def damage_potential_deriv(phi, delta=1.0e-3):
    """Derivative of :func:`damage_potential`."""
    phi = np.asarray(phi, dtype=float)
    return np.where(phi < 0.0, -delta, np.where(phi > 1.0, delta, phi))


def fatigue_potential(phi):
    """Transition potential coupling fatigue to damage.

    ``-phi`` on ``[0, 1]``, constant ``-1`` above 1 and ``0`` below 0, so
    accumulated fatigue lowers the energy of the broken state.
    """
    phi = np.asarray(phi, dtype=float)
    return np.where(phi < 0.0, 0.0, np.where(phi > 1.0, -1.0, -phi))


def fatigue_potential_deriv(phi):
    """Derivative of :func:`fatigue_potential` (``-1`` on ``[0, 1]``, else 0)."""
    phi = np.asarray(phi, dtype=float)
    return np.where((phi >= 0.0) & (phi <= 1.0), -1.0, 0.0)


# =====================================================================
# Kinetics
# =====================================================================

def damage_mobility(phi, params):
    """Inverse relaxation time ``1 / lambda`` of the damage field.

    ``c / (1 + delta - phi)**rate_exponent`` with ``phi`` clamped to
    ``[0, 1]`` before evaluation, so the mobility grows monotonically from
    roughly ``c`` in pristine material to ``c / delta**rate_exponent`` at
    full damage and never blows up for overshooting ``phi``.

    Parameters
    ----------
    phi : float or ndarray
        Damage value(s).
    params : MaterialParams

    Returns
    -------
    float or ndarray
    """
    phi = np.clip(np.asarray(phi, dtype=float), 0.0, 1.0)
    return params.damage_rate / (1.0 + params.delta - phi) ** params.rate_exponent


def fatigue_source(strain, strain_rate, phi, params):
    """Rate scale of fatigue accumulation from mechanical dissipation.

    Computes ``a * max(1 - phi, 0) * |(C : strain + b * strain_rate) : strain_rate|``,
    the magnitude of stress power flowing through the (degradable) material.
    The clamp on ``1 - phi`` keeps the rate non-negative for any ``phi``, so
    accumulated fatigue can never decrease.

    Parameters
    ----------
    strain : ndarray, shape (..., 2, 2)
        Symmetric small-strain tensor(s).
    strain_rate : ndarray, shape (..., 2, 2)
        Symmetric strain rate tensor(s).
    phi : float or ndarray
        Damage value(s), broadcastable against the leading dimensions.
    params : MaterialParams

    Returns
    -------
    float or ndarray
        Non-negative source magnitude(s) (units of ``a`` times power density).
    """
    eps = np.asarray(strain, dtype=float)
    deps = np.asarray(strain_rate, dtype=float)
    C = elasticity_matrix(params.E, params.nu)
    # Voigt with engineering shear; symmetrize so mildly asymmetric input
    # behaves like its symmetric part.
    ev = np.stack(
        [eps[..., 0, 0], eps[..., 1, 1], eps[..., 0, 1] + eps[..., 1, 0]], axis=-1
    )
    sv = ev @ C.T
    sigma = np.stack(
        [
            np.stack([sv[..., 0], sv[..., 2]], axis=-1),
            np.stack([sv[..., 2], sv[..., 1]], axis=-1),
        ],
        axis=-2,
    )
    total = sigma + params.damping * deps
    power = np.sum(total * deps, axis=(-2, -1))
    phi = np.asarray(phi, dtype=float)
    return params.fatigue_rate * np.maximum(1.0 - phi, 0.0) * np.abs(power)
