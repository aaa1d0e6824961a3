"""Observables derived from temperature fields, and field/table export."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import physics
from .materials import Material
from .mesh import Mesh, Region

KG_S_TO_MG_MIN = 6e7
QCM_SCALE_MG_PER_ANGSTROM = 0.033
QCM_SCALE_UNCERTAINTY = 0.006

_TRI3_BARY = np.array([[2 / 3, 1 / 6, 1 / 6], [1 / 6, 2 / 3, 1 / 6], [1 / 6, 1 / 6, 2 / 3]])


@dataclass(frozen=True)
class RatePoint:
    power: float  # W
    mass_rate: float  # kg/s
    peak_T: float  # K
    melted: bool

    @property
    def mass_rate_mg_min(self) -> float:
        return self.mass_rate * KG_S_TO_MG_MIN


def peak_temperature(field):
    """Maximum nodal temperature and the coordinates of that vertex.

    Ties go to the lowest vertex index.
    """
    i = int(np.argmax(field.values))
    return float(field.values[i]), field.mesh.vertices[i].copy()


def total_mass_evaporation_rate(field, mesh: Mesh, mat: Material) -> float:
    """Hertz-Knudsen flux integrated over the whole boundary, kg/s."""
    Tq = field.values[mesh.facets] @ _TRI3_BARY.T
    J = physics.evaporative_mass_flux(mat, Tq)
    return float((J.mean(axis=1) * mesh.facet_areas()).sum())


def melt_pool(field, mesh: Mesh, T_melt: float):
    """Boundary facets whose three vertices all reach ``T_melt``; returns (indices, area)."""
    hot = np.all(field.values[mesh.facets] >= T_melt, axis=1)
    idx = np.flatnonzero(hot)
    return idx, float(mesh.facet_areas()[idx].sum())


def rate_point(power: float, field, mesh: Mesh, mat: Material) -> RatePoint:
    peak, _ = peak_temperature(field)
    return RatePoint(power, total_mass_evaporation_rate(field, mesh, mat), peak, peak >= mat.melting_point)


def _check_factors(scale_factor, density_ratio):
    if not (scale_factor > 0 and density_ratio > 0):
        raise ValueError("scale factor and density ratio must be positive")


def rate_to_growth(mass_rate: float, scale_factor: float = QCM_SCALE_MG_PER_ANGSTROM,
                   density_ratio: float = 1.0) -> float:
    """Film growth rate in Angstrom/s for a source mass-loss rate in kg/s.

    ``scale_factor`` is the evaporated mass per Angstrom of film (mg/A) for
    the reference element; ``density_ratio`` rescales it to another element.
    """
    _check_factors(scale_factor, density_ratio)
    return mass_rate * 1e6 / (scale_factor * density_ratio)


def growth_to_rate(growth: float, scale_factor: float = QCM_SCALE_MG_PER_ANGSTROM,
                   density_ratio: float = 1.0) -> float:
    """Inverse of :func:`rate_to_growth`: kg/s from Angstrom/s."""
    _check_factors(scale_factor, density_ratio)
    return growth * scale_factor * density_ratio * 1e-6


def growth_to_rate_with_error(growth: float, growth_error: float = 0.0,
                              scale_factor: float = QCM_SCALE_MG_PER_ANGSTROM,
                              scale_uncertainty: float = QCM_SCALE_UNCERTAINTY,
                              density_ratio: float = 1.0):
    """Mass rate and its 1-sigma error, combining growth and scale-factor errors in quadrature."""
    rate = growth_to_rate(growth, scale_factor, density_ratio)
    rel = np.hypot(growth_error / growth if growth else 0.0, scale_uncertainty / scale_factor)
    return rate, abs(rate) * float(rel)


# ------------------------------------------------------------------ export


def export_vtk(field, mesh: Mesh, path) -> None:
    """Legacy ASCII VTK unstructured grid with point scalars ``temperature``."""
    lines = [
        "# vtk DataFile Version 3.0",
        "temperature field",
        "ASCII",
        "DATASET UNSTRUCTURED_GRID",
        f"POINTS {mesh.n_vertices} double",
    ]
    lines += [f"{x!r} {y!r} {z!r}" for x, y, z in mesh.vertices.tolist()]
    m = mesh.n_tetrahedra
    lines.append(f"CELLS {m} {5 * m}")
    lines += [f"4 {a} {b} {c} {d}" for a, b, c, d in mesh.tetrahedra.tolist()]
    lines.append(f"CELL_TYPES {m}")
    lines += ["10"] * m
    lines += [f"POINT_DATA {mesh.n_vertices}", "SCALARS temperature double 1", "LOOKUP_TABLE default"]
    lines += [repr(v) for v in field.values.tolist()]
    Path(path).write_text("\n".join(lines) + "\n")


def read_vtk(path):
    """Minimal reader for files written by :func:`export_vtk`.

    Returns ``(points, cells, scalars)``.
    """
    tokens = Path(path).read_text().split()
    out = {}
    i = 0
    while i < len(tokens):
        tok = tokens[i]
        if tok == "POINTS":
            n = int(tokens[i + 1])
            out["points"] = np.array(tokens[i + 3 : i + 3 + 3 * n], float).reshape(n, 3)
            i += 3 + 3 * n
        elif tok == "CELLS":
            n, size = int(tokens[i + 1]), int(tokens[i + 2])
            raw = np.array(tokens[i + 3 : i + 3 + size], int).reshape(n, -1)
            out["cells"] = raw[:, 1:]
            i += 3 + size
        elif tok == "CELL_TYPES":
            n = int(tokens[i + 1])
            out["cell_types"] = np.array(tokens[i + 2 : i + 2 + n], int)
            i += 2 + n
        elif tok == "LOOKUP_TABLE":
            n = len(out["points"])
            out["scalars"] = np.array(tokens[i + 2 : i + 2 + n], float)
            i += 2 + n
        else:
            i += 1
    return out["points"], out["cells"], out["scalars"]


RATE_COLUMNS = ("power_W", "mass_rate_kg_s", "mass_rate_mg_min", "peak_T_K", "melted")


def write_rate_table(points, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(RATE_COLUMNS)
        for p in points:
            w.writerow([repr(p.power), repr(p.mass_rate), repr(p.mass_rate_mg_min), repr(p.peak_T), int(p.melted)])
