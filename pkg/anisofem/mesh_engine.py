# Copyright (c) anisofem contributors under Apache License 2.0 (see LICENSE.txt).
# Anisotropic interpolation error estimates on simplices
#
# Simplicial meshes: container, conformity check, anisotropic family generators, and the
# line-oriented "anisomesh" text format.

import itertools
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
from scipy.spatial import cKDTree

from .config import DEFAULT_CONFIG
from .errors import DegenerateSimplexError, MeshFormatError, NonconformingMeshError, ParameterError
from .simplex_geometry import Simplex

logger = logging.getLogger(__name__)


#####################################
# Mesh container
#####################################

@dataclass(frozen=True, eq=False)
class Mesh:
    vertices: np.ndarray  # (n, dim)
    cells: np.ndarray     # (m, dim + 1), 0-based
    conforming: Optional[bool] = None

    def __post_init__(self):
        vertices = np.array(self.vertices, dtype=float)
        if vertices.ndim != 2 or vertices.shape[1] not in (2, 3):
            raise ParameterError(f"Vertices must be an (n, dim) array with dim in (2, 3), got {vertices.shape}")
        cells = np.array(self.cells, dtype=np.int64).reshape(-1, vertices.shape[1] + 1)
        if len(cells) and (cells.min() < 0 or cells.max() >= len(vertices)):
            raise IndexError("cell vertex index out of range")
        vertices.setflags(write=False)
        cells.setflags(write=False)
        object.__setattr__(self, "vertices", vertices)
        object.__setattr__(self, "cells", cells)

        if len(cells):
            points = vertices[cells]
            dim = vertices.shape[1]
            volumes = np.abs(np.linalg.det(points[:, 1:] - points[:, :1])) / math.factorial(dim)
            diameters = self.cell_diameters()
            bad = np.nonzero(volumes < DEFAULT_CONFIG["degeneracy_tol"] * diameters**dim)[0]
            if len(bad):
                raise DegenerateSimplexError(f"degenerate simplex in cell {int(bad[0])}")

    @property
    def dim(self):
        return self.vertices.shape[1]

    @property
    def n_cells(self):
        return len(self.cells)

    def cell_diameters(self):
        points = self.vertices[self.cells]
        pairs = itertools.combinations(range(self.dim + 1), 2)
        return np.max([np.linalg.norm(points[:, i] - points[:, j], axis=1) for i, j in pairs], axis=0)

    @property
    def h(self):
        return float(self.cell_diameters().max()) if self.n_cells else 0.0

    def cell(self, i):
        return Simplex(self.vertices[self.cells[i]])

    def simplices(self):
        for i in range(self.n_cells):
            yield self.cell(i)

    def affine_maps(self, cells=None):
        """Per-cell (A, b) with x = A xhat + b mapping the reference simplex onto the cell."""
        points = self.vertices[self.cells if cells is None else self.cells[cells]]
        return np.transpose(points[:, 1:] - points[:, :1], (0, 2, 1)), points[:, 0]

    def __eq__(self, other):
        if not isinstance(other, Mesh):
            return NotImplemented
        return (self.vertices.shape == other.vertices.shape and self.cells.shape == other.cells.shape
                and np.array_equal(self.vertices, other.vertices) and np.array_equal(self.cells, other.cells))

    __hash__ = None


#####################################
# Conformity
#####################################

@dataclass(frozen=True)
class ConformityReport:
    passed: bool
    offending: list = field(default_factory=list)       # (facet, facet) pairs
    hanging_nodes: list = field(default_factory=list)   # vertex indices
    overshared: list = field(default_factory=list)      # facets shared by more than two cells


def facet_map(mesh):
    """Sorted facet tuples, their incident cell count, and for each (cell, local facet) its facet id."""
    local = [tuple(j for j in range(mesh.dim + 1) if j != i) for i in range(mesh.dim + 1)]
    all_facets = np.sort(mesh.cells[:, local].reshape(-1, mesh.dim), axis=1)
    unique, inverse, counts = np.unique(all_facets, axis=0, return_inverse=True, return_counts=True)
    return unique, counts, np.asarray(inverse).reshape(mesh.n_cells, mesh.dim + 1)


def boundary_facets(mesh):
    unique, counts, _ = facet_map(mesh)
    return unique[counts == 1]


def _on_facet(point, facet_points, tol):
    base = facet_points[0]
    edges = (facet_points[1:] - base).T
    coords, *_ = np.linalg.lstsq(edges, point - base, rcond=None)
    if np.linalg.norm(edges @ coords - (point - base)) > tol:
        return False
    return coords.min() >= -1e-9 and coords.sum() <= 1.0 + 1e-9


def conformity_check(mesh):
    """Detect facets shared by more than two cells and vertices hanging inside boundary facets."""
    if mesh.n_cells and (mesh.cells.min() < 0 or mesh.cells.max() >= len(mesh.vertices)):
        raise IndexError("cell vertex index out of range")
    if mesh.n_cells == 0:
        return ConformityReport(True)

    unique, counts, _ = facet_map(mesh)
    overshared = [tuple(int(v) for v in f) for f in unique[counts > 2]]
    boundary = unique[counts == 1]

    tree = cKDTree(mesh.vertices)
    points = mesh.vertices[boundary]
    centers = points.mean(axis=1)
    radii = np.linalg.norm(points - centers[:, None, :], axis=2).max(axis=1)
    candidates = tree.query_ball_point(centers, radii * (1.0 + 1e-9))

    tol = 1e-10 * mesh.h
    facets_of_vertex = {}
    for f in boundary:
        for v in f:
            facets_of_vertex.setdefault(int(v), []).append(tuple(int(u) for u in f))

    offending, hanging = [], []
    for facet, facet_points, near in zip(boundary, points, candidates):
        facet = tuple(int(v) for v in facet)
        for v in near:
            if v in facet or not _on_facet(mesh.vertices[v], facet_points, tol):
                continue
            hanging.append(int(v))
            for other in facets_of_vertex.get(int(v), []):
                if all(u in facet or _on_facet(mesh.vertices[u], facet_points, tol) for u in other):
                    offending.append((facet, other))

    passed = not overshared and not hanging
    return ConformityReport(passed, offending, sorted(set(hanging)), overshared)


#####################################
# Families
#####################################

FAMILY_DEFAULTS = {
    "remark-tetra": {"eps": 1.5, "s0": 0.0625, "levels": 5},
    "aniso-strip-2d": {"h0": 1.0, "levels": 5, "gamma": 2.0},
    "aniso-box-3d": {"h0": 1.0, "levels": 3, "gamma2": 1.0, "gamma3": 2.0},
    "uniform-ref": {"dim": 2, "seed": "triangle", "levels": 3},
}


@dataclass(frozen=True)
class FamilySpec:
    kind: str
    params: tuple = ()  # sorted (key, value) pairs

    def __post_init__(self):
        if self.kind not in FAMILY_DEFAULTS:
            raise ParameterError(f"Unknown family {self.kind!r}; choose from {sorted(FAMILY_DEFAULTS)}")
        unknown = {k for k, _ in self.params} - set(FAMILY_DEFAULTS[self.kind]) - {"s"}
        if unknown:
            raise ParameterError(f"Unknown parameters for {self.kind}: {sorted(unknown)}")

    @classmethod
    def parse(cls, text):
        """'kind' or 'kind:key=value,key=value'; the remark-tetra s-list is slash separated."""
        kind, _, rest = text.partition(":")
        params = {}
        for item in filter(None, (part.strip() for part in rest.split(","))):
            key, sep, value = item.partition("=")
            if not sep:
                raise ParameterError(f"Invalid family parameter {item!r}")
            params[key.strip()] = value.strip()
        return cls(kind.strip(), tuple(sorted(params.items())))

    def get(self, key):
        raw = dict(self.params).get(key, FAMILY_DEFAULTS[self.kind].get(key))
        if key in ("levels", "dim"):
            return int(raw)
        if key in ("seed",):
            return str(raw)
        if key == "s":
            return None if raw is None else [float(v) for v in str(raw).split("/")]
        return float(raw)

    def schedule(self):
        """The per-level parameter (s for remark-tetra, h otherwise), monotone decreasing."""
        if self.kind == "remark-tetra":
            values = self.get("s") or [self.get("s0") * 2.0**-n for n in range(self.get("levels"))]
        elif self.kind == "uniform-ref":
            values = [2.0**-n for n in range(1, self.get("levels") + 1)]
        else:
            values = [self.get("h0") * 2.0**-n for n in range(self.get("levels"))]
        if not values:
            raise ParameterError("Empty family schedule")
        if any(b >= a for a, b in zip(values, values[1:])):
            raise ParameterError("Family schedule must be strictly decreasing")
        return values

    def __str__(self):
        return self.kind + (":" + ",".join(f"{k}={v}" for k, v in self.params) if self.params else "")


def remark_tetra(s, eps):
    if not (0.0 < s < 1.0) or not (1.0 < eps < 2.0):
        raise ParameterError("remark-tetra needs 0 < s < 1 and 1 < eps < 2")
    vertices = [[0.0, 0.0, 0.0], [s, 0.0, 0.0], [s / 2.0, s**eps, 0.0], [0.0, 0.0, s]]
    return Mesh(vertices, [[0, 1, 2, 3]])


def _grid_count(length, spacing):
    count = length / spacing
    if abs(count - round(count)) > 1e-9 * count or round(count) < 1:
        raise ParameterError(f"Spacing {spacing} does not divide the unit interval")
    return int(round(count))


def _grid_vertices(counts):
    axes = [np.linspace(0.0, 1.0, n + 1) for n in counts]
    grids = np.meshgrid(*axes, indexing="ij")
    return np.column_stack([g.ravel() for g in grids])


def strip_mesh(h, gamma):
    """Unit square, x-spacing h, y-spacing h^gamma, each rectangle cut along the same diagonal."""
    if gamma < 1.0 or not (0.0 < h <= 1.0):
        raise ParameterError("aniso-strip-2d needs 0 < h <= 1 and gamma >= 1")
    nx, ny = _grid_count(1.0, h), _grid_count(1.0, h**gamma)
    vertices = _grid_vertices((nx, ny))
    i, j = np.meshgrid(np.arange(nx), np.arange(ny), indexing="ij")
    i, j = i.ravel(), j.ravel()
    index = lambda a, b: a * (ny + 1) + b
    a, b, c, d = index(i, j), index(i + 1, j), index(i + 1, j + 1), index(i, j + 1)
    cells = np.empty((2 * len(a), 3), dtype=np.int64)
    cells[0::2] = np.column_stack([a, b, c])
    cells[1::2] = np.column_stack([a, c, d])
    return Mesh(vertices, cells)


def kuhn_box_mesh(hx, hy, hz):
    """Unit cube cut into boxes, each split into the six Kuhn tetrahedra around its main diagonal."""
    nx, ny, nz = _grid_count(1.0, hx), _grid_count(1.0, hy), _grid_count(1.0, hz)
    vertices = _grid_vertices((nx, ny, nz))
    strides = np.array([(ny + 1) * (nz + 1), nz + 1, 1])
    origins = np.stack(np.meshgrid(np.arange(nx), np.arange(ny), np.arange(nz), indexing="ij"), axis=-1).reshape(-1, 3)
    base = origins @ strides
    cells = []
    for perm in itertools.permutations(range(3)):
        path = [np.zeros(3, dtype=np.int64)]
        for axis in perm:
            step = path[-1].copy()
            step[axis] += 1
            path.append(step)
        cells.append(np.column_stack([base + p @ strides for p in path]))
    cells = np.stack(cells, axis=1).reshape(-1, 4)
    return Mesh(vertices, cells)


def uniform_refine(mesh):
    """Red refinement of a triangle mesh: four congruent children per cell."""
    if mesh.dim != 2:
        raise ParameterError("uniform_refine supports triangle meshes; refine 3D Kuhn meshes by regeneration")
    cells = mesh.cells
    local_edges = [(0, 1), (1, 2), (2, 0)]
    edges = np.sort(np.stack([cells[:, list(e)] for e in local_edges], axis=1).reshape(-1, 2), axis=1)
    unique, inverse = np.unique(edges, axis=0, return_inverse=True)
    midpoints = mesh.vertices[unique].mean(axis=1)
    mid = len(mesh.vertices) + np.asarray(inverse).reshape(-1, 3)
    a, b, c = cells[:, 0], cells[:, 1], cells[:, 2]
    mab, mbc, mca = mid[:, 0], mid[:, 1], mid[:, 2]
    children = np.stack([
        np.column_stack([a, mab, mca]),
        np.column_stack([mab, b, mbc]),
        np.column_stack([mca, mbc, c]),
        np.column_stack([mab, mbc, mca]),
    ], axis=1).reshape(-1, 3)
    return Mesh(np.vstack([mesh.vertices, midpoints]), children)


SEED_MESHES = {
    "triangle": ([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]], [[0, 1, 2]]),
    "square": ([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]], [[0, 1, 2], [0, 2, 3]]),
}


def generate_family(spec):
    """Meshes of a family, one per level, coarsest first; every mesh is checked for conformity."""
    if isinstance(spec, str):
        spec = FamilySpec.parse(spec)

    schedule = spec.schedule()
    if spec.kind == "remark-tetra":
        meshes = [remark_tetra(s, spec.get("eps")) for s in schedule]
    elif spec.kind == "aniso-strip-2d":
        meshes = [strip_mesh(h, spec.get("gamma")) for h in schedule]
    elif spec.kind == "aniso-box-3d":
        g2, g3 = spec.get("gamma2"), spec.get("gamma3")
        if g2 < 1.0 or g3 < 1.0:
            raise ParameterError("aniso-box-3d needs gamma2, gamma3 >= 1")
        meshes = [kuhn_box_mesh(h, h**g2, h**g3) for h in schedule]
    elif spec.get("dim") == 3 or spec.get("seed") == "cube":
        meshes = [kuhn_box_mesh(h, h, h) for h in schedule]
    else:
        if spec.get("seed") not in SEED_MESHES:
            raise ParameterError(f"Unknown seed mesh {spec.get('seed')!r}; choose from {sorted(SEED_MESHES)} or cube")
        mesh = Mesh(*SEED_MESHES[spec.get("seed")])
        meshes = []
        for _ in schedule:
            mesh = uniform_refine(mesh)
            meshes.append(mesh)

    for level, mesh in enumerate(meshes):
        report = conformity_check(mesh)
        if not report.passed:
            raise NonconformingMeshError(f"Generated {spec.kind} level {level} is nonconforming", report.offending)
    return meshes


#####################################
# anisomesh text format
#####################################

def format_mesh(mesh):
    lines = [f"anisomesh {mesh.dim}", f"vertices {len(mesh.vertices)}"]
    lines += [" ".join(format(float(x), ".17g") for x in row) for row in mesh.vertices]
    lines.append(f"cells {mesh.n_cells}")
    lines += [" ".join(str(int(i)) for i in row) for row in mesh.cells]
    return "\n".join(lines) + "\n"


def write_mesh(mesh, path):
    Path(path).write_text(format_mesh(mesh), encoding="utf-8")


def parse_mesh(text, check_conformity=True):
    lines = [(n, line.strip()) for n, line in enumerate(text.splitlines(), start=1)]
    lines = [(n, line) for n, line in lines if line and not line.startswith("#")]
    cursor = iter(lines)

    def expect(keyword):
        try:
            n, line = next(cursor)
        except StopIteration:
            raise MeshFormatError(f"Unexpected end of file, expected {keyword!r}")
        parts = line.split()
        if len(parts) != 2 or parts[0] != keyword:
            raise MeshFormatError(f"Line {n}: expected '{keyword} <int>', got {line!r}")
        try:
            return int(parts[1])
        except ValueError:
            raise MeshFormatError(f"Line {n}: invalid integer {parts[1]!r}")

    def rows(count, width, convert, what):
        out = []
        for _ in range(count):
            try:
                n, line = next(cursor)
            except StopIteration:
                raise MeshFormatError(f"Unexpected end of file while reading {what}")
            parts = line.split()
            if len(parts) != width:
                raise MeshFormatError(f"Line {n}: expected {width} entries in {what}, got {len(parts)}")
            try:
                out.append([convert(p) for p in parts])
            except ValueError:
                raise MeshFormatError(f"Line {n}: invalid {what} entry in {line!r}")
        return out

    dim = expect("anisomesh")
    if dim not in (2, 3):
        raise MeshFormatError(f"Unsupported dimension {dim}")
    vertices = rows(expect("vertices"), dim, float, "vertices")
    cells = rows(expect("cells"), dim + 1, int, "cells")
    leftover = next(cursor, None)
    if leftover is not None:
        raise MeshFormatError(f"Line {leftover[0]}: unexpected trailing content")

    seen = set()
    for row in cells:
        key = tuple(sorted(row))
        if key in seen:
            raise MeshFormatError("duplicate cell")
        seen.add(key)
        if min(row) < 0 or max(row) >= len(vertices):
            raise MeshFormatError(f"Cell {row} references a missing vertex")

    mesh = Mesh(np.array(vertices, dtype=float).reshape(-1, dim), np.array(cells, dtype=np.int64).reshape(-1, dim + 1))
    if not check_conformity:
        return mesh
    report = conformity_check(mesh)
    if not report.passed:
        logger.warning(f"Nonconforming mesh: {len(report.hanging_nodes)} hanging nodes, {len(report.overshared)} overshared facets")
    return Mesh(mesh.vertices, mesh.cells, conforming=report.passed)


def read_mesh(path, check_conformity=True):
    return parse_mesh(Path(path).read_text(encoding="utf-8"), check_conformity)
