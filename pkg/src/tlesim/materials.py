"""Elemental material records and the vapor-pressure correlation."""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from types import MappingProxyType
from typing import Mapping

from .constants import AVOGADRO, STANDARD_ATMOSPHERE

LN10 = math.log(10.0)
_REFERENCE = {"Pa": 1.0, "atm": STANDARD_ATMOSPHERE}


class MaterialError(ValueError):
    """Invalid material record or database file."""


@dataclass(frozen=True)
class VaporPressureCorrelation:
    """log10(p/ref) = A + B/T + C*log10(T) + D*1e-3*T, ref in ``{"Pa", "atm"}``.

    ``A = -inf`` describes a non-volatile material (p == 0).
    """

    A: float
    B: float = 0.0
    C: float = 0.0
    D: float = 0.0
    reference: str = "Pa"

    def exponent(self, T):
        return self.A + self.B / T + self.C * math.log10(T) + self.D * 1e-3 * T


@dataclass(frozen=True)
class Transition:
    wavelength: float  # m
    gamma: float  # spontaneous-emission rate, 1/s


@dataclass(frozen=True)
class Material:
    name: str
    molar_mass: float  # kg/mol
    density: float  # kg/m^3
    specific_heat: float  # J/kg K
    thermal_conductivity: float  # W/m K
    emissivity: float
    reflectivity: tuple  # ((wavelength m, value), ...)
    enthalpy_of_vaporization: float  # J/mol
    melting_point: float  # K
    vapor_pressure_coefficients: VaporPressureCorrelation
    transitions: tuple = ()
    source: str = ""

    @property
    def atomic_mass(self) -> float:
        return self.molar_mass / AVOGADRO

    def reflectivity_at(self, wavelength: float) -> float:
        for wl, value in self.reflectivity:
            if abs(wl - wavelength) <= 1e-6 * wavelength:
                return value
        known = ", ".join(f"{wl * 1e9:g} nm" for wl, _ in self.reflectivity) or "none"
        raise MaterialError(
            f"{self.name}: no reflectivity at {wavelength * 1e9:g} nm (known: {known})"
        )

    def with_reflectivity(self, wavelength: float, value: float) -> "Material":
        others = tuple((wl, v) for wl, v in self.reflectivity if abs(wl - wavelength) > 1e-6 * wavelength)
        return dataclasses.replace(self, reflectivity=((wavelength, value),) + others)

    def replace(self, **changes) -> "Material":
        return dataclasses.replace(self, **changes)

    def without_vapor(self) -> "Material":
        """Copy with zero vapor pressure (no evaporation, no attenuation)."""
        vp = dataclasses.replace(self.vapor_pressure_coefficients, A=-math.inf)
        return dataclasses.replace(self, vapor_pressure_coefficients=vp)

    def validate(self) -> "Material":
        positive = ("molar_mass", "density", "specific_heat", "thermal_conductivity",
                    "enthalpy_of_vaporization", "melting_point")
        for name in positive:
            value = getattr(self, name)
            if not (isinstance(value, (int, float)) and math.isfinite(value) and value > 0):
                raise MaterialError(f"{self.name}: {name} must be a positive number, got {value!r}")
        if not 0.0 <= self.emissivity <= 1.0:
            raise MaterialError(f"{self.name}: emissivity {self.emissivity} outside [0, 1]")
        for wl, value in self.reflectivity:
            if not wl > 0:
                raise MaterialError(f"{self.name}: reflectivity wavelength must be positive")
            if not 0.0 <= value <= 1.0:
                raise MaterialError(f"{self.name}: reflectivity {value} outside [0, 1]")
        for tr in self.transitions:
            if not (tr.wavelength > 0 and tr.gamma > 0):
                raise MaterialError(f"{self.name}: transitions need positive wavelength and gamma")
        vp = self.vapor_pressure_coefficients
        if vp.reference not in _REFERENCE:
            raise MaterialError(f"{self.name}: pressure_reference must be 'Pa' or 'atm'")
        for T in (300.0, 0.5 * self.melting_point, self.melting_point, 2.0 * self.melting_point):
            p = vapor_pressure(self, T)
            if not (p > 0 and math.isfinite(p)):
                raise MaterialError(f"{self.name}: vapor_pressure_coefficients give p({T:g} K) = {p}")
        return self


def vapor_pressure(mat: Material, T: float) -> float:
    """Equilibrium vapor pressure in Pa."""
    if not T > 0:
        raise ValueError(f"temperature must be positive, got {T}")
    vp = mat.vapor_pressure_coefficients
    return 10.0 ** vp.exponent(T) * _REFERENCE[vp.reference]


def vapor_pressure_derivative(mat: Material, T: float) -> float:
    """Analytic dp/dT in Pa/K."""
    p = vapor_pressure(mat, T)
    vp = mat.vapor_pressure_coefficients
    return p * LN10 * (-vp.B / T**2 + vp.C / (T * LN10) + vp.D * 1e-3)


# Array versions used by the assembly loops; same formulas, no checks.

def vapor_pressure_array(mat: Material, T):
    import numpy as np

    vp = mat.vapor_pressure_coefficients
    return 10.0 ** (vp.A + vp.B / T + vp.C * np.log10(T) + vp.D * 1e-3 * T) * _REFERENCE[vp.reference]


def vapor_pressure_derivative_array(mat: Material, T):
    vp = mat.vapor_pressure_coefficients
    p = vapor_pressure_array(mat, T)
    return p * LN10 * (-vp.B / T**2 + vp.C / (T * LN10) + vp.D * 1e-3)


# ----------------------------------------------------------------- database


def material_from_dict(rec: dict) -> Material:
    name = rec.get("name")
    if not isinstance(name, str) or not name:
        raise MaterialError("material record without a name")
    try:
        coeffs = rec["vapor_pressure_coefficients"]
        vp = VaporPressureCorrelation(
            A=float(coeffs["A"]),
            B=float(coeffs.get("B", 0.0)),
            C=float(coeffs.get("C", 0.0)),
            D=float(coeffs.get("D", 0.0)),
            reference=rec.get("pressure_reference", "Pa"),
        )
        mat = Material(
            name=name,
            molar_mass=float(rec["molar_mass"]),
            density=float(rec["density"]),
            specific_heat=float(rec["specific_heat"]),
            thermal_conductivity=float(rec["thermal_conductivity"]),
            emissivity=float(rec["emissivity"]),
            reflectivity=tuple(
                (float(r["wavelength"]), float(r["value"])) for r in rec.get("reflectivity", [])
            ),
            enthalpy_of_vaporization=float(rec["enthalpy_of_vaporization"]),
            melting_point=float(rec["melting_point"]),
            vapor_pressure_coefficients=vp,
            transitions=tuple(
                Transition(float(t["wavelength"]), float(t["gamma"])) for t in rec.get("transitions", [])
            ),
            source=str(rec.get("source", "")),
        )
    except KeyError as exc:
        raise MaterialError(f"{name}: missing field {exc.args[0]!r}") from None
    except (TypeError, ValueError) as exc:
        raise MaterialError(f"{name}: {exc}") from None
    if "atomic_mass" in rec:
        m = float(rec["atomic_mass"])
        if abs(m * AVOGADRO - mat.molar_mass) > 1e-12 * mat.molar_mass:
            raise MaterialError(f"{name}: atomic_mass inconsistent with molar_mass / N_A")
    return mat.validate()


def material_to_dict(mat: Material) -> dict:
    vp = mat.vapor_pressure_coefficients
    return {
        "name": mat.name,
        "molar_mass": mat.molar_mass,
        "atomic_mass": mat.atomic_mass,
        "density": mat.density,
        "specific_heat": mat.specific_heat,
        "thermal_conductivity": mat.thermal_conductivity,
        "emissivity": mat.emissivity,
        "reflectivity": [{"wavelength": wl, "value": v} for wl, v in mat.reflectivity],
        "enthalpy_of_vaporization": mat.enthalpy_of_vaporization,
        "melting_point": mat.melting_point,
        "vapor_pressure_coefficients": {"A": vp.A, "B": vp.B, "C": vp.C, "D": vp.D},
        "pressure_reference": vp.reference,
        "transitions": [{"wavelength": t.wavelength, "gamma": t.gamma} for t in mat.transitions],
        "source": mat.source,
    }


class MaterialRegistry(Mapping):
    """Read-only name -> Material lookup."""

    def __init__(self, materials=()):
        data = {}
        for mat in materials:
            if mat.name in data:
                raise MaterialError(f"duplicate element name {mat.name!r}")
            data[mat.name] = mat
        self._data = MappingProxyType(data)

    def __getitem__(self, name):
        try:
            return self._data[name]
        except KeyError:
            raise KeyError(f"unknown material {name!r}; available: {sorted(self._data)}") from None

    def __iter__(self):
        return iter(self._data)

    def __len__(self):
        return len(self._data)


def load_material_database(path) -> MaterialRegistry:
    """Parse and validate a material JSON file.

    The file holds either a list of records or ``{"materials": [...]}``.
    An empty file gives an empty registry.
    """
    text = Path(path).read_text()
    if not text.strip():
        return MaterialRegistry()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise MaterialError(f"{path}: parse error at line {exc.lineno}, column {exc.colno}: {exc.msg}") from None
    records = doc.get("materials", []) if isinstance(doc, dict) else doc
    if not isinstance(records, list):
        raise MaterialError(f"{path}: expected a list of material records")
    return MaterialRegistry(material_from_dict(rec) for rec in records)


def default_database_path() -> Path:
    return Path(str(resources.files("tlesim") / "data" / "materials.json"))


_DEFAULT = None


def default_registry() -> MaterialRegistry:
    """The shipped Ta, Pt, Mo, Ti, Cu database (loaded once)."""
    global _DEFAULT
    if _DEFAULT is None:
        _DEFAULT = load_material_database(default_database_path())
    return _DEFAULT
