"""Finite-element simulation of laser-heated evaporation sources.

Solves transient heat conduction in a cylindrical source with a Gaussian
surface heat load and radiative plus evaporative boundary losses, predicts
mass evaporation rates, and calibrates effective emissivity/reflectivity
pairs from the observed melting power.
"""

__version__ = "0.1.0"

from .config import CaseConfig, MeshSpec, ta_reference_case
from .fem import (
    HeatProblem,
    NonConvergence,
    SolverControls,
    SteadyResult,
    TemperatureField,
    advance_transient,
    assemble_system,
    run_to_steady,
    solve_nonlinear,
    solve_steady,
)
from .materials import Material, default_registry, load_material_database, vapor_pressure
from .mesh import Mesh, Region, generate_cylinder_mesh, load_gmsh_mesh, mesh_quality_report
from .physics import ChamberSpec, LaserSpec, optical_depth

__all__ = [
    "CaseConfig", "ChamberSpec", "HeatProblem", "LaserSpec", "Material", "Mesh", "MeshSpec",
    "NonConvergence", "Region", "SolverControls", "SteadyResult", "TemperatureField",
    "advance_transient", "assemble_system", "default_registry", "generate_cylinder_mesh",
    "load_gmsh_mesh", "load_material_database", "mesh_quality_report", "optical_depth",
    "run_to_steady", "solve_nonlinear", "solve_steady", "ta_reference_case", "vapor_pressure",
]
