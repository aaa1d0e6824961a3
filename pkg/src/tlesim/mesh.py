"""Tetrahedral meshes of cylindrical sources.

The built-in mesher triangulates the end disk with concentric hexagonal
rings, extrudes it along z and cuts every prism into three tetrahedra.
Gmsh ASCII 2.2 files can be read and written for interoperability.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import IntEnum
from pathlib import Path

import numpy as np


class MeshError(ValueError):
    """Raised for malformed meshes or mesh files."""


class Region(IntEnum):
    """Boundary facet tags. Values double as Gmsh physical tags."""

    TOP_SURFACE = 1
    SURFACE = 2


PLANE_TOL = 1e-9


@dataclass(frozen=True, eq=False)
class Mesh:
    """Immutable P1 tetrahedral mesh with tagged boundary triangles.

    ``vertices`` is (n, 3) in metres, ``tetrahedra`` (m, 4) and
    ``facets`` (k, 3) are 0-based vertex indices, ``facet_tags`` holds a
    :class:`Region` value per facet. Facets are oriented outward.
    """

    vertices: np.ndarray
    tetrahedra: np.ndarray
    facets: np.ndarray
    facet_tags: np.ndarray
    length: float = float("nan")
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        for name in ("vertices", "tetrahedra", "facets", "facet_tags"):
            arr = getattr(self, name)
            arr.setflags(write=False)

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_tetrahedra(self) -> int:
        return len(self.tetrahedra)

    def tet_volumes(self) -> np.ndarray:
        """Signed volumes of all tetrahedra."""
        if "vol" not in self._cache:
            self._cache["vol"] = signed_volumes(self.vertices, self.tetrahedra)
        return self._cache["vol"]

    def facet_areas(self) -> np.ndarray:
        if "area" not in self._cache:
            p = self.vertices[self.facets]
            n = np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0])
            self._cache["area"] = 0.5 * np.linalg.norm(n, axis=1)
        return self._cache["area"]

    def facets_with(self, region: Region) -> np.ndarray:
        return self.facets[self.facet_tags == region]

    def validate(self) -> None:
        """Check every structural invariant; raise :class:`MeshError` otherwise."""
        if self.n_vertices < 4 or self.n_tetrahedra < 1:
            raise MeshError("degenerate mesh: fewer than 4 vertices or no tetrahedra")
        if self.tetrahedra.min() < 0 or self.tetrahedra.max() >= self.n_vertices:
            raise MeshError("tetrahedron references a missing vertex")
        if np.any(self.tet_volumes() <= 0):
            raise MeshError("tetrahedron with non-positive signed volume")
        owner_faces = _boundary_faces(self.tetrahedra)
        given = {tuple(sorted(f)) for f in self.facets.tolist()}
        if len(given) != len(self.facets):
            raise MeshError("duplicate boundary facet")
        if given != {tuple(sorted(f)) for f in owner_faces[0].tolist()}:
            raise MeshError("non-watertight boundary")
        # closed surface: every facet edge shared by exactly two facets
        edges = np.sort(
            np.concatenate([self.facets[:, [0, 1]], self.facets[:, [1, 2]], self.facets[:, [2, 0]]]),
            axis=1,
        )
        _, counts = np.unique(edges, axis=0, return_counts=True)
        if np.any(counts != 2):
            raise MeshError("non-watertight boundary")
        _check_outward(self.vertices, self.facets, owner_faces)
        if not np.isin(self.facet_tags, [Region.TOP_SURFACE, Region.SURFACE]).all():
            raise MeshError("facet tag outside {1, 2}")
        if math.isfinite(self.length):
            on_top = np.all(np.abs(self.vertices[self.facets][:, :, 2] - self.length) <= PLANE_TOL, axis=1)
            if np.any(on_top != (self.facet_tags == Region.TOP_SURFACE)):
                raise MeshError("TopSurface tags do not match the plane z = length")


def signed_volumes(vertices: np.ndarray, tets: np.ndarray) -> np.ndarray:
    p = vertices[tets]
    a = p[:, 1] - p[:, 0]
    b = p[:, 2] - p[:, 0]
    c = p[:, 3] - p[:, 0]
    return np.einsum("ij,ij->i", a, np.cross(b, c)) / 6.0


def _boundary_faces(tets: np.ndarray):
    """Faces owned by exactly one tetrahedron.

    Returns ``(faces, owner, opposite)`` where ``opposite`` is the vertex of
    the owning tetrahedron not on the face.
    """
    local = np.array([[1, 2, 3], [0, 3, 2], [0, 1, 3], [0, 2, 1]])
    faces = tets[:, local].reshape(-1, 3)
    opposite = tets[:, [0, 1, 2, 3]].reshape(-1)
    owner = np.repeat(np.arange(len(tets)), 4)
    keys = np.sort(faces, axis=1)
    _, inverse, counts = np.unique(keys, axis=0, return_inverse=True, return_counts=True)
    inverse = inverse.reshape(-1)
    if np.any(counts > 2):
        raise MeshError("non-manifold mesh: face shared by more than two tetrahedra")
    single = counts[inverse] == 1
    return faces[single], owner[single], opposite[single]


def _orient_outward(vertices, faces, opposite):
    p = vertices[faces]
    normal = np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0])
    inward = np.einsum("ij,ij->i", normal, vertices[opposite] - p[:, 0]) > 0
    faces = faces.copy()
    faces[inward] = faces[inward][:, [0, 2, 1]]
    return faces


def _check_outward(vertices, facets, owner_faces):
    faces, _, opposite = owner_faces
    lookup = {tuple(sorted(f)): o for f, o in zip(faces.tolist(), opposite.tolist())}
    opp = np.array([lookup[tuple(sorted(f))] for f in facets.tolist()])
    p = vertices[facets]
    normal = np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0])
    if np.any(np.einsum("ij,ij->i", normal, vertices[opp] - p[:, 0]) >= 0):
        raise MeshError("boundary facet normal does not point outward")


def _tag_facets(vertices, facets, length):
    z = vertices[facets][:, :, 2]
    top = np.all(np.abs(z - length) <= PLANE_TOL, axis=1)
    return np.where(top, Region.TOP_SURFACE, Region.SURFACE).astype(np.int64)


def _disk(radius: float, rings: int):
    """Concentric hexagonal rings: ring k holds 6k points, 6r^2 triangles total."""
    pts = [(0.0, 0.0)]
    start = [0]
    for k in range(1, rings + 1):
        start.append(len(pts))
        rk = radius * k / rings
        for j in range(6 * k):
            t = 2.0 * math.pi * j / (6 * k)
            pts.append((rk * math.cos(t), rk * math.sin(t)))

    def ring(k, j):
        if k == 0:
            return 0
        return start[k] + j % (6 * k)

    tris = []
    for k in range(1, rings + 1):
        for s in range(6):
            outer = [ring(k, s * k + j) for j in range(k + 1)]
            inner = [ring(k - 1, s * (k - 1) + j) for j in range(k)]
            for j in range(k):
                tris.append((outer[j], outer[j + 1], inner[j]))
            for j in range(k - 1):
                tris.append((inner[j], outer[j + 1], inner[j + 1]))
    return np.array(pts), np.array(tris, dtype=np.int64)


def generate_cylinder_mesh(diameter: float, length: float, refinement: int) -> Mesh:
    """Structured tetrahedral mesh of a cylinder along z, base at z = 0.

    ``refinement`` sets the number of radial rings; the axis is cut into
    ``2 * refinement`` layers, giving ``36 * refinement**3`` tetrahedra.
    """
    if not diameter > 0 or not length > 0:
        raise MeshError("cylinder dimensions must be positive")
    if int(refinement) != refinement or refinement < 1:
        raise MeshError("refinement must be an integer >= 1")
    refinement = int(refinement)
    xy, tris = _disk(diameter / 2.0, refinement)
    layers = 2 * refinement
    nd = len(xy)
    z = np.linspace(0.0, length, layers + 1)
    z[-1] = length
    vertices = np.column_stack([np.tile(xy, (layers + 1, 1)), np.repeat(z, nd)])

    # Sorting each triangle by vertex index makes every quad face pick the
    # diagonal from its lower-index bottom vertex, so neighbours conform.
    t = np.sort(tris, axis=1)
    a, b, c = t[:, 0], t[:, 1], t[:, 2]
    tets = []
    for layer in range(layers):
        lo, hi = layer * nd, (layer + 1) * nd
        tets.append(np.column_stack([a + lo, b + lo, c + lo, c + hi]))
        tets.append(np.column_stack([a + lo, b + lo, b + hi, c + hi]))
        tets.append(np.column_stack([a + lo, a + hi, b + hi, c + hi]))
    tets = np.concatenate(tets)
    vol = signed_volumes(vertices, tets)
    flip = vol < 0
    tets[flip] = tets[flip][:, [0, 2, 1, 3]]
    return _finish(vertices, tets, length)


def _finish(vertices, tets, length) -> Mesh:
    faces, _, opposite = _boundary_faces(tets)
    facets = _orient_outward(vertices, faces, opposite)
    tags = _tag_facets(vertices, facets, length)
    mesh = Mesh(vertices, tets, facets, tags, float(length))
    mesh.validate()
    return mesh


# --------------------------------------------------------------------- gmsh


def write_gmsh_mesh(mesh: Mesh, path) -> None:
    """Write the Gmsh ASCII 2.2 subset understood by :func:`load_gmsh_mesh`."""
    lines = ["$MeshFormat", "2.2 0 8", "$EndMeshFormat", "$Nodes", str(mesh.n_vertices)]
    lines += [f"{i + 1} {x!r} {y!r} {z!r}" for i, (x, y, z) in enumerate(mesh.vertices.tolist())]
    lines += ["$EndNodes", "$Elements", str(len(mesh.facets) + mesh.n_tetrahedra)]
    n = 0
    for f, tag in zip(mesh.facets.tolist(), mesh.facet_tags.tolist()):
        n += 1
        lines.append(f"{n} 2 2 {tag} {tag} {f[0] + 1} {f[1] + 1} {f[2] + 1}")
    for t in mesh.tetrahedra.tolist():
        n += 1
        lines.append(f"{n} 4 2 3 3 {t[0] + 1} {t[1] + 1} {t[2] + 1} {t[3] + 1}")
    lines.append("$EndElements")
    Path(path).write_text("\n".join(lines) + "\n")


def _section(lines, name):
    try:
        i = lines.index(f"${name}")
        j = lines.index(f"$End{name}", i)
    except ValueError:
        raise MeshError(f"missing section ${name}") from None
    return lines[i + 1 : j]


def load_gmsh_mesh(path, length: float | None = None) -> Mesh:
    """Read a Gmsh ASCII 2.2 mesh of 4-node tetrahedra and tagged triangles.

    Physical tag 1 marks the top surface, 2 the remaining surface. Facet
    orientation in the file is ignored and recomputed outward.
    """
    text = Path(path).read_text()
    lines = [ln.strip() for ln in text.splitlines() if ln.strip()]
    fmt = _section(lines, "MeshFormat")
    if not fmt or fmt[0].split()[:3] != ["2.2", "0", "8"]:
        raise MeshError(f"unsupported version string: {fmt[0] if fmt else ''!r}")
    node_lines = _section(lines, "Nodes")
    elem_lines = _section(lines, "Elements")
    try:
        n_nodes = int(node_lines[0])
        ids, coords = [], []
        for ln in node_lines[1 : 1 + n_nodes]:
            parts = ln.split()
            ids.append(int(parts[0]))
            coords.append([float(v) for v in parts[1:4]])
        if len(ids) != n_nodes:
            raise MeshError("node count does not match $Nodes header")
        index = {nid: i for i, nid in enumerate(ids)}
        n_elem = int(elem_lines[0])
        tets, tris, tags = [], [], []
        for ln in elem_lines[1 : 1 + n_elem]:
            parts = [int(v) for v in ln.split()]
            etype, ntags = parts[1], parts[2]
            conn = [index[v] for v in parts[3 + ntags :]]
            if etype == 4:
                tets.append(conn[:4])
            elif etype == 2:
                tag = parts[3] if ntags > 0 else 0
                if tag not in (1, 2):
                    raise MeshError(f"facet tag {tag} outside {{1, 2}}")
                tris.append(conn[:3])
                tags.append(tag)
            else:
                raise MeshError(f"unsupported element type {etype}")
    except (IndexError, KeyError, ValueError) as exc:
        if isinstance(exc, MeshError):
            raise
        raise MeshError(f"malformed gmsh file {path}: {exc}") from exc
    if not tets:
        raise MeshError("no tetrahedra in file")
    vertices = np.array(coords, dtype=float)
    tets = np.array(tets, dtype=np.int64)
    vol = signed_volumes(vertices, tets)
    flip = vol < 0
    tets[flip] = tets[flip][:, [0, 2, 1, 3]]
    tris = np.array(tris, dtype=np.int64).reshape(-1, 3)
    faces, _, opposite = _boundary_faces(tets)
    key = {tuple(sorted(f)): i for i, f in enumerate(faces.tolist())}
    if len(tris) != len(faces) or any(tuple(sorted(f)) not in key for f in tris.tolist()):
        raise MeshError("non-watertight boundary")
    order = np.array([key[tuple(sorted(f))] for f in tris.tolist()])
    facets = _orient_outward(vertices, faces[order], opposite[order])
    if length is None:
        top = vertices[np.unique(tris[np.array(tags) == 1])] if 1 in tags else vertices
        length = float(top[:, 2].max())
    mesh = Mesh(vertices, tets, facets, np.array(tags, dtype=np.int64), float(length))
    mesh.validate()
    return mesh


# ------------------------------------------------------------------ quality


@dataclass
class QualityReport:
    element_count: int
    node_count: int
    min_volume: float
    max_volume: float
    min_dihedral_angle: float  # radians
    total_volume: float
    surface_area: dict

    def as_dict(self) -> dict:
        return {
            "element_count": self.element_count,
            "node_count": self.node_count,
            "min_volume_m3": self.min_volume,
            "max_volume_m3": self.max_volume,
            "min_dihedral_angle_deg": math.degrees(self.min_dihedral_angle),
            "total_volume_m3": self.total_volume,
            "surface_area_m2": dict(self.surface_area),
        }


def dihedral_angles(vertices: np.ndarray, tets: np.ndarray) -> np.ndarray:
    """All six interior dihedral angles per tetrahedron, shape (m, 6)."""
    p = vertices[tets]
    # outward-ish face normals, face i opposite vertex i
    faces = [(1, 2, 3), (0, 3, 2), (0, 1, 3), (0, 2, 1)]
    normals = []
    for i, (a, b, c) in enumerate(faces):
        n = np.cross(p[:, b] - p[:, a], p[:, c] - p[:, a])
        # point away from the opposite vertex
        s = np.sign(np.einsum("ij,ij->i", n, p[:, a] - p[:, i]))[:, None]
        normals.append(s * n / np.linalg.norm(n, axis=1)[:, None])
    out = []
    for i in range(4):
        for j in range(i + 1, 4):
            cosang = -np.einsum("ij,ij->i", normals[i], normals[j])
            out.append(np.arccos(np.clip(cosang, -1.0, 1.0)))
    return np.column_stack(out)


def mesh_quality_report(mesh: Mesh) -> QualityReport:
    vol = mesh.tet_volumes()
    area = mesh.facet_areas()
    return QualityReport(
        element_count=mesh.n_tetrahedra,
        node_count=mesh.n_vertices,
        min_volume=float(vol.min()),
        max_volume=float(vol.max()),
        min_dihedral_angle=float(dihedral_angles(mesh.vertices, mesh.tetrahedra).min()),
        total_volume=float(vol.sum()),
        surface_area={r.name: float(area[mesh.facet_tags == r].sum()) for r in Region},
    )
