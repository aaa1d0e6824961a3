"""Pointwise boundary flux laws and vapor attenuation of the laser.

All flux functions accept scalars or numpy arrays of temperature.
Sign convention: positive values leave the source.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .constants import AVOGADRO, BOLTZMANN, SPEED_OF_LIGHT, STEFAN_BOLTZMANN
from .materials import (
    Material,
    Transition,
    vapor_pressure_array,
    vapor_pressure_derivative_array,
)


@dataclass(frozen=True)
class LaserSpec:
    power: float  # W
    wavelength: float = 1.03e-6  # m
    gaussian_radius: float = 750e-6  # m, intensity falls to 1/e at this radius
    spot_center: tuple = (0.0, 0.0)  # m, on the top face
    attenuation_enabled: bool = True

    def __post_init__(self):
        if not self.power >= 0:
            raise ValueError(f"laser power must be >= 0, got {self.power}")
        if not self.gaussian_radius > 0:
            raise ValueError("gaussian_radius must be positive")
        if not self.wavelength > 0:
            raise ValueError("wavelength must be positive")


@dataclass(frozen=True)
class ChamberSpec:
    ambient_temperature: float = 300.0  # K
    beam_path_length: float = 0.5  # m, source to laser entrance port

    def __post_init__(self):
        if not self.ambient_temperature > 0:
            raise ValueError("ambient_temperature must be positive")


def laser_flux(x, y, laser: LaserSpec, reflectivity: float, tau: float = 0.0):
    """Absorbed Gaussian irradiance in W/m^2 at top-face point (x, y).

    The profile is exp(-r^2/w^2) normalised so that the absorbed power over
    the whole plane is (1 - R) P exp(-tau).
    """
    if tau < 0:
        raise ValueError("optical depth must be >= 0")
    w = laser.gaussian_radius
    x0, y0 = laser.spot_center
    r2 = (np.asarray(x) - x0) ** 2 + (np.asarray(y) - y0) ** 2
    peak = (1.0 - reflectivity) * laser.power / (math.pi * w * w)
    return peak * np.exp(-r2 / (w * w)) * math.exp(-tau)


def radiative_flux(T, T_amb: float, emissivity: float):
    """Net grey-body radiation to a black ambient, W/m^2."""
    T = np.asarray(T, dtype=float)
    return emissivity * STEFAN_BOLTZMANN * (T**4 - T_amb**4)


def radiative_flux_derivative(T, emissivity: float):
    T = np.asarray(T, dtype=float)
    return 4.0 * emissivity * STEFAN_BOLTZMANN * T**3


def _check_positive(T):
    T = np.asarray(T, dtype=float)
    if np.any(T <= 0):
        raise ValueError("temperature must be positive")
    return T


def evaporative_mass_flux(mat: Material, T, pressure=None):
    """Hertz-Knudsen mass flux p * sqrt(m / (2 pi k_b T)) in kg/m^2 s.

    ``pressure`` overrides the material's vapor-pressure correlation.
    """
    T = _check_positive(T)
    p = vapor_pressure_array(mat, T) if pressure is None else np.asarray(pressure, dtype=float)
    return p * np.sqrt(mat.atomic_mass / (2.0 * math.pi * BOLTZMANN * T))


def evaporation_enthalpy(mat: Material, T):
    """Energy carried per kilogram evaporated: latent heat plus 3/2 k_b T per atom."""
    return mat.enthalpy_of_vaporization / mat.molar_mass + 1.5 * AVOGADRO * BOLTZMANN * T / mat.molar_mass


def evaporative_heat_flux(mat: Material, T, pressure=None):
    """Heat carried away by evaporation, W/m^2."""
    return evaporation_enthalpy(mat, T) * evaporative_mass_flux(mat, T, pressure)


def evaporative_heat_flux_derivative(mat: Material, T):
    """d/dT of :func:`evaporative_heat_flux` with the material's correlation."""
    T = _check_positive(T)
    p = vapor_pressure_array(mat, T)
    dp = vapor_pressure_derivative_array(mat, T)
    h = evaporation_enthalpy(mat, T)
    dh = 1.5 * AVOGADRO * BOLTZMANN / mat.molar_mass
    g = np.sqrt(mat.atomic_mass / (2.0 * math.pi * BOLTZMANN * T))
    # J = p g, dg/dT = -g / (2T)
    J = p * g
    dJ = dp * g - 0.5 * J / T
    return dh * J + h * dJ


# ------------------------------------------------------------ attenuation


def detuning(laser_wavelength: float, resonant_wavelength: float) -> float:
    """Laser-transition frequency offset c (1/lambda - 1/lambda0) in Hz."""
    return SPEED_OF_LIGHT * (1.0 / laser_wavelength - 1.0 / resonant_wavelength)


def absorption_cross_section(laser_wavelength: float, transition: Transition) -> float:
    """Lorentzian-suppressed resonant absorption cross-section in m^2."""
    lam0, gamma = transition.wavelength, transition.gamma
    if not (laser_wavelength > 0 and lam0 > 0 and gamma > 0):
        raise ValueError("wavelengths and gamma must be positive")
    sigma0 = 3.0 * lam0**2 / (2.0 * math.pi)
    d = detuning(laser_wavelength, lam0)
    return sigma0 * gamma**2 / (gamma**2 + 4.0 * d * d)


def nearest_transition(mat: Material, wavelength: float) -> Transition | None:
    if not mat.transitions:
        return None
    return min(mat.transitions, key=lambda t: abs(1.0 / t.wavelength - 1.0 / wavelength))


def optical_depth(mat: Material, T_surface: float, laser: LaserSpec, chamber: ChamberSpec,
                  source_radius: float = 1.5e-3) -> float:
    """Optical depth of the vapor column between the spot and the entrance port.

    The vapor leaves a source of radius ``source_radius`` (a) with number
    density p/(k_b T) and thins out as (a/r)^2; the beam crosses it from
    the spot radius w to the port distance r0, so the path integral is
    a^2 (1/w - 1/r0).
    """
    if not T_surface > 0:
        raise ValueError("temperature must be positive")
    if not source_radius > 0:
        raise ValueError("source_radius must be positive")
    tr = nearest_transition(mat, laser.wavelength)
    if tr is None or not laser.attenuation_enabled:
        return 0.0
    w, r0 = laser.gaussian_radius, chamber.beam_path_length
    if not r0 > w:
        raise ValueError("beam_path_length must exceed the gaussian radius")
    p = float(vapor_pressure_array(mat, float(T_surface)))
    d = detuning(laser.wavelength, tr.wavelength)
    prefactor = 3.0 * tr.wavelength**2 / (2.0 * math.sqrt(2.0) * math.pi * BOLTZMANN * T_surface)
    line = tr.gamma**2 / (tr.gamma**2 + 4.0 * d * d)
    return prefactor * line * p * source_radius**2 * (1.0 / w - 1.0 / r0)
