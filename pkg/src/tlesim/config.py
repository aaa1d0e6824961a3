"""Run descriptions (CaseConfig) and their JSON form.

JSON files use laboratory units spelled out in the key names; everything
is converted to SI here and nowhere else.
"""

from __future__ import annotations

import dataclasses
import functools
import json
from dataclasses import dataclass, field
from pathlib import Path

from .fem import HeatProblem, SolverControls
from .materials import (
    Material,
    MaterialError,
    default_database_path,
    load_material_database,
    material_from_dict,
)
from .mesh import Mesh, generate_cylinder_mesh, load_gmsh_mesh
from .physics import ChamberSpec, LaserSpec


class ConfigError(ValueError):
    """Invalid or incomplete run configuration."""


@dataclass(frozen=True)
class MeshSpec:
    """Either a generated cylinder or a Gmsh file (``path``)."""

    diameter: float | None = None  # m
    length: float | None = None  # m
    refinement: int | None = None
    path: str | None = None

    def __post_init__(self):
        generated = self.diameter is not None
        if generated == (self.path is not None):
            raise ConfigError("mesh: give exactly one of 'generate' or 'load'")
        if generated and (self.length is None or self.refinement is None):
            raise ConfigError("mesh.generate needs diameter_mm, length_mm and refinement")

    def build(self) -> Mesh:
        return _cached_mesh(self)


@functools.lru_cache(maxsize=8)
def _cached_mesh(spec: MeshSpec) -> Mesh:
    if spec.path is not None:
        return load_gmsh_mesh(spec.path, spec.length)
    return generate_cylinder_mesh(spec.diameter, spec.length, spec.refinement)


# material fields that a config (or a sweep) may override, JSON key -> attribute
MATERIAL_OVERRIDES = {
    "emissivity": "emissivity",
    "thermal_conductivity_W_mK": "thermal_conductivity",
    "density_kg_m3": "density",
    "specific_heat_J_kgK": "specific_heat",
}

_SOLVER_KEYS = {
    "dt_initial_s": "dt_initial",
    "dt_max_s": "dt_max",
    "dt_growth": "dt_growth",
    "newton_tol": "newton_tol",
    "newton_max_iter": "newton_max_iter",
    "steady_rate_tol_K_s": "steady_rate_tol",
    "steady_balance_tol": "steady_balance_tol",
    "max_time_s": "max_time",
}


@dataclass(frozen=True)
class CaseConfig:
    material: Material
    mesh_spec: MeshSpec
    laser: LaserSpec
    chamber: ChamberSpec = field(default_factory=ChamberSpec)
    controls: SolverControls = field(default_factory=SolverControls)
    output_dir: str = "."
    database: str | None = None

    @property
    def reflectivity(self) -> float:
        return self.material.reflectivity_at(self.laser.wavelength)

    def mesh(self) -> Mesh:
        return self.mesh_spec.build()

    def problem(self) -> HeatProblem:
        return HeatProblem(self.mesh(), self.material, self.laser, self.chamber)

    def vary(self, parameter: str, value: float) -> "CaseConfig":
        """Copy with one physical parameter changed.

        ``parameter`` is one of kappa, rho, c, omega, epsilon, R, power.
        """
        mat, laser = self.material, self.laser
        if parameter in ("kappa", "thermal_conductivity"):
            mat = mat.replace(thermal_conductivity=value)
        elif parameter in ("rho", "density"):
            mat = mat.replace(density=value)
        elif parameter in ("c", "specific_heat"):
            mat = mat.replace(specific_heat=value)
        elif parameter in ("epsilon", "emissivity"):
            mat = mat.replace(emissivity=value)
        elif parameter in ("R", "reflectivity"):
            mat = mat.with_reflectivity(laser.wavelength, value)
        elif parameter in ("omega", "gaussian_radius"):
            laser = dataclasses.replace(laser, gaussian_radius=value)
        elif parameter == "power":
            laser = dataclasses.replace(laser, power=value)
        else:
            raise ConfigError(f"unknown parameter {parameter!r}")
        return dataclasses.replace(self, material=mat.validate(), laser=laser)

    def with_pair(self, epsilon: float, reflectivity: float) -> "CaseConfig":
        return self.vary("epsilon", epsilon).vary("R", reflectivity)

    # ----------------------------------------------------------------- JSON

    @classmethod
    def from_dict(cls, doc: dict, base_dir: Path | str = ".") -> "CaseConfig":
        base_dir = Path(base_dir)
        try:
            mdoc = doc["material"]
            laser_doc = doc["laser"]
            mesh_doc = doc["mesh"]
        except KeyError as exc:
            raise ConfigError(f"missing section {exc.args[0]!r}") from None
        if isinstance(mdoc, str):
            mdoc = {"name": mdoc}
        db = mdoc.get("database")
        db_path = (base_dir / db) if db else default_database_path()
        try:
            registry = load_material_database(db_path)
        except OSError as exc:
            raise ConfigError(f"material.database: cannot read {db_path}: {exc.strerror}") from None
        name = mdoc.get("name")
        if "resolved" in mdoc:
            # a fully resolved record, as written to run manifests
            try:
                mat = material_from_dict(mdoc["resolved"])
            except MaterialError as exc:
                raise ConfigError(f"material.resolved: {exc}") from None
        elif name not in registry:
            raise ConfigError(f"material.name: {name!r} not in {db_path} (have {sorted(registry)})")
        else:
            mat = registry[name]

        try:
            laser = LaserSpec(
                power=float(laser_doc["power_W"]),
                wavelength=float(laser_doc.get("wavelength_nm", 1030.0)) * 1e-9,
                gaussian_radius=float(laser_doc.get("omega_um", 750.0)) * 1e-6,
                spot_center=tuple(float(v) * 1e-3 for v in laser_doc.get("spot_center_mm", (0.0, 0.0))),
                attenuation_enabled=bool(laser_doc.get("attenuation", True)),
            )
        except KeyError as exc:
            raise ConfigError(f"laser.{exc.args[0]} is required") from None
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"laser: {exc}") from None

        overrides = mdoc.get("overrides", {})
        changes = {}
        for key, value in overrides.items():
            if key == "reflectivity":
                continue
            if key not in MATERIAL_OVERRIDES:
                raise ConfigError(f"material.overrides: unknown key {key!r}")
            changes[MATERIAL_OVERRIDES[key]] = float(value)
        mat = mat.replace(**changes)
        if "reflectivity" in overrides:
            mat = mat.with_reflectivity(laser.wavelength, float(overrides["reflectivity"]))
        try:
            mat.validate()
        except MaterialError as exc:
            raise ConfigError(f"material.overrides: {exc}") from None

        if "generate" in mesh_doc and "load" in mesh_doc:
            raise ConfigError("mesh: give exactly one of 'generate' or 'load'")
        if "generate" in mesh_doc:
            g = mesh_doc["generate"]
            try:
                mesh_spec = MeshSpec(
                    diameter=float(g["diameter_mm"]) * 1e-3,
                    length=float(g["length_mm"]) * 1e-3,
                    refinement=int(g["refinement"]),
                )
            except KeyError as exc:
                raise ConfigError(f"mesh.generate.{exc.args[0]} is required") from None
        elif "load" in mesh_doc:
            ld = mesh_doc["load"]
            length = ld.get("length_mm")
            mesh_spec = MeshSpec(path=str(base_dir / ld["path"]),
                                 length=None if length is None else float(length) * 1e-3)
        else:
            raise ConfigError("mesh: give exactly one of 'generate' or 'load'")

        ch = doc.get("chamber", {})
        try:
            chamber = ChamberSpec(
                ambient_temperature=float(ch.get("ambient_K", 300.0)),
                beam_path_length=float(ch.get("beam_path_mm", 500.0)) * 1e-3,
            )
        except ValueError as exc:
            raise ConfigError(f"chamber: {exc}") from None
        if not chamber.beam_path_length > laser.gaussian_radius:
            raise ConfigError("chamber.beam_path_mm must exceed the laser radius")

        sdoc = doc.get("solver", {})
        unknown = set(sdoc) - set(_SOLVER_KEYS)
        if unknown:
            raise ConfigError(f"solver: unknown keys {sorted(unknown)}")
        try:
            controls = SolverControls(**{_SOLVER_KEYS[k]: v for k, v in sdoc.items()})
        except ValueError as exc:
            raise ConfigError(f"solver: {exc}") from None

        out = doc.get("output_dir", ".")
        return cls(mat, mesh_spec, laser, chamber, controls, str(base_dir / out), str(db_path))

    @classmethod
    def from_file(cls, path) -> "CaseConfig":
        path = Path(path)
        try:
            doc = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: line {exc.lineno}: {exc.msg}") from None
        return cls.from_dict(doc, path.parent)

    def to_dict(self) -> dict:
        """Fully resolved configuration in the JSON layout (no hidden defaults)."""
        from .materials import material_to_dict

        m = self.mesh_spec
        mesh_doc = (
            {"generate": {"diameter_mm": m.diameter * 1e3, "length_mm": m.length * 1e3, "refinement": m.refinement}}
            if m.path is None
            else {"load": {"path": m.path, "length_mm": None if m.length is None else m.length * 1e3}}
        )
        c = self.controls
        return {
            "material": {
                "name": self.material.name,
                "database": self.database,
                "resolved": material_to_dict(self.material),
            },
            "mesh": mesh_doc,
            "laser": {
                "power_W": self.laser.power,
                "wavelength_nm": self.laser.wavelength * 1e9,
                "omega_um": self.laser.gaussian_radius * 1e6,
                "spot_center_mm": [v * 1e3 for v in self.laser.spot_center],
                "attenuation": self.laser.attenuation_enabled,
            },
            "chamber": {
                "ambient_K": self.chamber.ambient_temperature,
                "beam_path_mm": self.chamber.beam_path_length * 1e3,
            },
            "solver": {k: getattr(c, v) for k, v in _SOLVER_KEYS.items()},
            "output_dir": self.output_dir,
        }


def ta_reference_case(refinement: int = 14, **solver) -> CaseConfig:
    """3 mm x 8 mm Ta source at 280 W, 750 um spot, epsilon 0.21, R 0.75."""
    from .materials import default_registry

    return CaseConfig(
        material=default_registry()["Ta"],
        mesh_spec=MeshSpec(diameter=3e-3, length=8e-3, refinement=refinement),
        laser=LaserSpec(power=280.0, wavelength=1.03e-6, gaussian_radius=750e-6),
        chamber=ChamberSpec(300.0, 0.5),
        controls=SolverControls(**solver),
        database=str(default_database_path()),
    )
