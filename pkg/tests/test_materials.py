import json
import math

import pytest

from tlesim.constants import AVOGADRO
from tlesim.materials import (
    Material,
    MaterialError,
    MaterialRegistry,
    VaporPressureCorrelation,
    load_material_database,
    material_from_dict,
    material_to_dict,
    vapor_pressure,
    vapor_pressure_derivative,
)

# Temperatures (K) at which p = 1, 10, 100 Pa, 1, 10, 100 kPa, from the CRC
# "Vapor pressure of the metallic elements" table. The shipped correlations
# were fitted to the 10 Pa, 1 kPa and 100 kPa entries only; the remaining
# three per element are held out.
CRC = {
    "Ta": (3297, 3597, 3957, 4395, 4939, 5634),
    "Pt": (2330, 2550, 2815, 3143, 3556, 4094),
    "Mo": (2742, 2994, 3312, 3707, 4212, 4879),
    "Ti": (1982, 2171, 2403, 2692, 3064, 3558),
    "Cu": (1509, 1661, 1850, 2089, 2404, 2834),
}
PRESSURES = (1.0, 10.0, 100.0, 1e3, 1e4, 1e5)


def synthetic(A=10.0, B=-40000.0, C=0.0, D=0.0, **kw):
    base = dict(name="X", molar_mass=0.1, density=1e4, specific_heat=100.0, thermal_conductivity=50.0,
                emissivity=0.3, reflectivity=((1.03e-6, 0.7),), enthalpy_of_vaporization=6e5,
                melting_point=3000.0, vapor_pressure_coefficients=VaporPressureCorrelation(A, B, C, D))
    base.update(kw)
    return Material(**base)


def test_ta_record(ta):
    assert ta.density == 16600.0
    assert ta.specific_heat == 140.0
    assert ta.thermal_conductivity == 57.5
    assert ta.emissivity == 0.21
    assert ta.reflectivity_at(1.03e-6) == 0.75
    assert ta.melting_point == 3293.0


def test_registry_holds_all_elements(registry):
    assert set(registry) == {"Ta", "Pt", "Mo", "Ti", "Cu"}


@pytest.mark.parametrize("name", sorted(CRC))
def test_atomic_mass_consistent(registry, name):
    mat = registry[name]
    assert mat.atomic_mass * AVOGADRO == pytest.approx(mat.molar_mass, rel=1e-14)


@pytest.mark.parametrize("name", sorted(CRC))
@pytest.mark.parametrize("k", range(6))
def test_vapor_pressure_against_table(registry, name, k):
    # Fitted points reproduce to rounding; held-out points within 20 %.
    p = vapor_pressure(registry[name], CRC[name][k])
    tol = 0.02 if k in (1, 3, 5) else 0.20
    assert p == pytest.approx(PRESSURES[k], rel=tol)


def test_vapor_pressure_hand_value():
    assert vapor_pressure(synthetic(), 4000.0) == pytest.approx(1.0, rel=1e-12)


def test_vapor_pressure_atm_reference():
    atm = synthetic().replace(vapor_pressure_coefficients=VaporPressureCorrelation(0.0, 0.0, 0.0, 0.0, "atm"))
    assert vapor_pressure(atm, 1000.0) == pytest.approx(101325.0)


def test_vapor_pressure_derivative_hand_value():
    # d/dT 10^(A+B/T) = p ln10 (-B/T^2) = ln10 * 40000 / 4000^2
    assert vapor_pressure_derivative(synthetic(), 4000.0) == pytest.approx(5.7565e-3, rel=1e-4)


@pytest.mark.parametrize("name", sorted(CRC))
@pytest.mark.parametrize("T", [1500.0, 2500.0, 3500.0])
def test_vapor_pressure_derivative_finite_difference(registry, name, T):
    mat = registry[name]
    h = 1e-3
    fd = (vapor_pressure(mat, T + h) - vapor_pressure(mat, T - h)) / (2 * h)
    assert vapor_pressure_derivative(mat, T) == pytest.approx(fd, rel=1e-6)


@pytest.mark.parametrize("T", [0.0, -5.0])
def test_vapor_pressure_rejects_nonpositive_T(ta, T):
    with pytest.raises(ValueError):
        vapor_pressure(ta, T)


@pytest.mark.parametrize("name", sorted(CRC))
def test_vapor_pressure_increasing(registry, name):
    mat = registry[name]
    ps = [vapor_pressure(mat, T) for T in range(1000, 6001, 250)]
    assert all(b > a for a, b in zip(ps, ps[1:]))


def test_emissivity_out_of_range_names_field(ta):
    rec = material_to_dict(ta)
    rec["emissivity"] = 1.3
    with pytest.raises(MaterialError, match="emissivity"):
        material_from_dict(rec)


def test_missing_field_is_named(ta):
    rec = material_to_dict(ta)
    del rec["density"]
    with pytest.raises(MaterialError, match="density"):
        material_from_dict(rec)


def test_inconsistent_atomic_mass_rejected(ta):
    rec = material_to_dict(ta)
    rec["atomic_mass"] *= 1.01
    with pytest.raises(MaterialError, match="atomic_mass"):
        material_from_dict(rec)


def test_round_trip(registry):
    for mat in registry.values():
        assert material_from_dict(material_to_dict(mat)) == mat


def test_empty_file_gives_empty_registry(tmp_path):
    (tmp_path / "m.json").write_text("")
    assert len(load_material_database(tmp_path / "m.json")) == 0


def test_parse_error_reports_position(tmp_path):
    (tmp_path / "m.json").write_text('[\n  {"name": "Ta",\n')
    with pytest.raises(MaterialError, match="line 3"):
        load_material_database(tmp_path / "m.json")


def test_database_accepts_list_and_object(tmp_path, ta):
    rec = material_to_dict(ta)
    (tmp_path / "a.json").write_text(json.dumps([rec]))
    (tmp_path / "b.json").write_text(json.dumps({"materials": [rec]}))
    assert load_material_database(tmp_path / "a.json")["Ta"] == ta
    assert load_material_database(tmp_path / "b.json")["Ta"] == ta


def test_duplicate_names_rejected(ta):
    with pytest.raises(MaterialError, match="duplicate"):
        MaterialRegistry([ta, ta])


def test_unknown_name_lists_available(registry):
    with pytest.raises(KeyError, match="available"):
        registry["Na"]


def test_missing_reflectivity_wavelength(ta):
    with pytest.raises(MaterialError, match="515 nm"):
        ta.reflectivity_at(515e-9)


def test_with_reflectivity_replaces_entry(ta):
    assert ta.with_reflectivity(1.03e-6, 0.8).reflectivity_at(1.03e-6) == 0.8
    assert len(ta.with_reflectivity(1.03e-6, 0.8).reflectivity) == len(ta.reflectivity)


def test_without_vapor(ta):
    assert vapor_pressure(ta.without_vapor(), 3000.0) == 0.0
    assert math.isfinite(vapor_pressure_derivative(ta.without_vapor(), 3000.0))
