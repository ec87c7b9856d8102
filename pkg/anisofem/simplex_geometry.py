# Copyright (c) anisofem contributors under Apache License 2.0 (see LICENSE.txt).
# Anisotropic interpolation error estimates on simplices
#
# Simplices, affine maps, and the standard position of a triangle or tetrahedron:
# x1 at the origin, edge x1x2 on the first axis, x3 in the upper half of the x1x2-plane,
# x4 (3D) above that plane. The map from the reference element factors as A = A_shear @ diag(alpha).

import itertools
import logging
import math
from dataclasses import dataclass
from enum import Enum
from typing import NamedTuple

import numpy as np
from scipy.linalg import solve_triangular

from .config import DEFAULT_CONFIG
from .errors import DegenerateSimplexError, ParameterError, SingularMapError

logger = logging.getLogger(__name__)


class SimplexType(str, Enum):
    TYPE_I = "TypeI"
    TYPE_II = "TypeII"


class Edge(NamedTuple):
    length: float
    pair: tuple


def _readonly(values):
    array = np.array(values, dtype=float)
    array.setflags(write=False)
    return array


#####################################
# Simplex
#####################################

@dataclass(frozen=True, eq=False)
class Simplex:
    """A nondegenerate triangle (dim=2) or tetrahedron (dim=3)."""
    vertices: np.ndarray

    def __post_init__(self):
        vertices = _readonly(self.vertices)
        if vertices.ndim != 2 or vertices.shape[1] not in (2, 3) or vertices.shape[0] != vertices.shape[1] + 1:
            raise ParameterError(f"Expected dim+1 vertices in R^dim with dim in (2, 3), got shape {vertices.shape}")
        if not np.all(np.isfinite(vertices)):
            raise ParameterError("Vertex coordinates must be finite")
        object.__setattr__(self, "vertices", vertices)

        dim = vertices.shape[1]
        h = _max_distance(vertices)
        volume = abs(np.linalg.det(vertices[1:] - vertices[0])) / math.factorial(dim)
        if h == 0.0 or volume < DEFAULT_CONFIG["degeneracy_tol"] * h**dim:
            raise DegenerateSimplexError("degenerate simplex")

    @property
    def dim(self):
        return self.vertices.shape[1]

    @property
    def signed_volume(self):
        return np.linalg.det(self.vertices[1:] - self.vertices[0]) / math.factorial(self.dim)

    def __repr__(self):
        return f"Simplex({self.vertices.tolist()})"


def _max_distance(vertices):
    return max(np.linalg.norm(a - b) for a, b in itertools.combinations(vertices, 2))


def edge_lengths(s):
    edges = [
        Edge(float(np.linalg.norm(s.vertices[i] - s.vertices[j])), (i, j))
        for i, j in itertools.combinations(range(s.dim + 1), 2)
    ]
    return sorted(edges)


def measure(s):
    return abs(s.signed_volume)


def diameter(s):
    return float(_max_distance(s.vertices))


def facets(s):
    """Facets as (vertex indices, vertex coordinates), the i-th facet opposite vertex i."""
    out = []
    for i in range(s.dim + 1):
        idx = tuple(j for j in range(s.dim + 1) if j != i)
        out.append((idx, s.vertices[list(idx)]))
    return out


def facet_normal(facet_vertices, opposite):
    """Outward unit normal of a facet, oriented away from the opposite vertex."""
    facet_vertices = np.asarray(facet_vertices, dtype=float)
    base = facet_vertices[0]
    if facet_vertices.shape[1] == 2:
        edge = facet_vertices[1] - base
        normal = np.array([edge[1], -edge[0]])
    else:
        normal = np.cross(facet_vertices[1] - base, facet_vertices[2] - base)
    norm = np.linalg.norm(normal)
    if norm == 0.0:
        raise DegenerateSimplexError("degenerate facet")
    normal = normal / norm
    if np.dot(normal, np.asarray(opposite) - base) > 0:
        normal = -normal
    return normal


def outward_normals(s):
    return [facet_normal(verts, s.vertices[i]) for i, (_, verts) in enumerate(facets(s))]


def reference_simplex(dim, simplex_type=SimplexType.TYPE_I):
    simplex_type = SimplexType(simplex_type)
    vertices = np.vstack([np.zeros(dim), np.eye(dim)])
    if dim == 3 and simplex_type == SimplexType.TYPE_II:
        vertices[2] = [1.0, 1.0, 0.0]
    return Simplex(vertices)


def random_simplex(rng, dim, max_aspect=1e6):
    """Random simplex, randomly rotated, stretched by log-uniform axis factors in [1/max_aspect, 1]."""
    while True:
        base = rng.standard_normal((dim + 1, dim))
        scales = 10.0 ** rng.uniform(-math.log10(max_aspect), 0.0, size=dim)
        rotation, _ = np.linalg.qr(rng.standard_normal((dim, dim)))
        vertices = (base * scales) @ rotation.T + rng.uniform(-1.0, 1.0, size=dim)
        try:
            return Simplex(vertices)
        except DegenerateSimplexError:
            continue


#####################################
# Affine maps and rigid motions
#####################################

@dataclass(frozen=True, eq=False)
class AffineMap:
    matrix: np.ndarray
    offset: np.ndarray

    def __post_init__(self):
        matrix = _readonly(self.matrix)
        offset = _readonly(self.offset)
        if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1] or offset.shape != (matrix.shape[0],):
            raise ParameterError(f"Incompatible affine map shapes {matrix.shape} and {offset.shape}")
        scale = np.abs(matrix).max()
        det = np.linalg.det(matrix)
        if not np.isfinite(det) or scale == 0.0 or abs(det) <= 1e-14 * scale ** matrix.shape[0]:
            raise SingularMapError("singular affine map")
        object.__setattr__(self, "matrix", matrix)
        object.__setattr__(self, "offset", offset)

    @property
    def dim(self):
        return self.matrix.shape[0]

    @property
    def det(self):
        return float(np.linalg.det(self.matrix))

    def __call__(self, points):
        return np.asarray(points, dtype=float) @ self.matrix.T + self.offset

    def inverse(self):
        inv = np.linalg.inv(self.matrix)
        return AffineMap(inv, -inv @ self.offset)


def apply_affine(affine, point):
    return affine(point)


def invert_affine(affine):
    return affine.inverse()


def compose_affine(outer, inner):
    """outer after inner."""
    return AffineMap(outer.matrix @ inner.matrix, outer.matrix @ inner.offset + outer.offset)


def affine_from_reference(s):
    """Map sending 0 to vertex 0 and e_i to vertex i."""
    return AffineMap((s.vertices[1:] - s.vertices[0]).T, s.vertices[0])


@dataclass(frozen=True, eq=False)
class RigidMotion:
    rotation: np.ndarray  # orthogonal; det = -1 when mirrored
    translation: np.ndarray
    mirror: bool = False

    def __post_init__(self):
        object.__setattr__(self, "rotation", _readonly(self.rotation))
        object.__setattr__(self, "translation", _readonly(self.translation))

    def __call__(self, points):
        return np.asarray(points, dtype=float) @ self.rotation.T + self.translation

    def as_affine(self):
        return AffineMap(self.rotation, self.translation)

    def inverse(self):
        return RigidMotion(self.rotation.T, -self.rotation.T @ self.translation, self.mirror)

    @classmethod
    def identity(cls, dim):
        return cls(np.eye(dim), np.zeros(dim), False)


#####################################
# Standard position
#####################################

@dataclass(frozen=True, eq=False)
class StandardPosition:
    simplex: Simplex              # canonical pose, vertices ordered x1, ..., x_{d+1}
    alphas: tuple
    shear: tuple                  # (s, t) or (s1, t1, s21, s22, t2)
    simplex_type: SimplexType
    motion: RigidMotion           # input simplex -> canonical pose
    labels: tuple                 # input vertex index of x1, ..., x_{d+1}

    @property
    def dim(self):
        return self.simplex.dim

    @property
    def shear_matrix(self):
        return shear_matrix(self.dim, self.shear, self.simplex_type)


def shear_matrix(dim, shear, simplex_type=SimplexType.TYPE_I):
    if dim == 2:
        s, t = shear
        return np.array([[1.0, s], [0.0, t]])
    s1, t1, s21, s22, t2 = shear
    sign = -1.0 if SimplexType(simplex_type) == SimplexType.TYPE_II else 1.0
    return np.array([[1.0, sign * s1, s21], [0.0, t1, s22], [0.0, 0.0, t2]])


def check_parameters(dim, alphas, shear, simplex_type=SimplexType.TYPE_I, slack=None):
    """Constraints on the canonical parameters; returns the list of violated constraints."""
    slack = DEFAULT_CONFIG["slack"] if slack is None else slack
    violated = []
    if len(alphas) != dim or min(alphas) <= 0.0:
        violated.append("alphas must be positive, one per dimension")
    if dim == 2:
        s, t = shear
        if abs(s * s + t * t - 1.0) > slack:
            violated.append("s^2 + t^2 = 1")
        if t <= 0.0:
            violated.append("t > 0")
        return violated

    s1, t1, s21, s22, t2 = shear
    a1, a2, a3 = alphas
    if abs(s1 * s1 + t1 * t1 - 1.0) > slack:
        violated.append("s1^2 + t1^2 = 1")
    if s1 < -slack:
        violated.append("s1 >= 0")
    if t1 <= 0.0:
        violated.append("t1 > 0")
    if abs(s21 * s21 + s22 * s22 + t2 * t2 - 1.0) > slack:
        violated.append("s21^2 + s22^2 + t2^2 = 1")
    if t2 <= 0.0:
        violated.append("t2 > 0")
    if a2 * s1 > a1 / 2 + slack * a1:
        violated.append("alpha2 s1 <= alpha1 / 2")
    if a3 * s21 > a1 / 2 + slack * a1:
        violated.append("alpha3 s21 <= alpha1 / 2")
    return violated


def _frame(points):
    """Rigid motion taking labeled points to the canonical pose."""
    dim = points.shape[1]
    x1 = points[0]
    e1 = points[1] - x1
    e1 = e1 / np.linalg.norm(e1)
    if dim == 2:
        e2 = np.array([-e1[1], e1[0]])
        mirror = bool(np.dot(points[2] - x1, e2) < 0)
        if mirror:
            e2 = -e2
        rotation = np.vstack([e1, e2])
    else:
        w = points[2] - x1
        w = w - np.dot(w, e1) * e1
        e2 = w / np.linalg.norm(w)
        e3 = np.cross(e1, e2)
        mirror = bool(np.dot(points[3] - x1, e3) < 0)
        if mirror:
            e3 = -e3
        rotation = np.vstack([e1, e2, e3])
    return RigidMotion(rotation, -rotation @ x1, mirror)


def _tied(edges, target, tol):
    return [e for e in edges if abs(e.length - target) <= tol * target]


def _labels_2d(s, tol):
    edges = edge_lengths(s)
    i, j = min(e.pair for e in _tied(edges, edges[-1].length, tol))
    k = 3 - i - j
    v = s.vertices
    a, b = np.linalg.norm(v[i] - v[k]), np.linalg.norm(v[j] - v[k])
    if abs(a - b) <= tol * max(a, b):
        x2, x3 = min(i, j), max(i, j)
    elif a > b:
        x2, x3 = i, j
    else:
        x2, x3 = j, i
    return (k, x2, x3), SimplexType.TYPE_I


def _half_space_type(v, p, c, r, tol):
    """Type I when r lies on p's side of the midpoint plane of pc (the plane counts as p's side)."""
    direction = v[c] - v[p]
    midpoint = (v[c] + v[p]) / 2
    side = np.dot(v[r] - midpoint, direction)
    if side <= tol * np.dot(direction, direction):
        return SimplexType.TYPE_I
    return SimplexType.TYPE_II


def _labels_3d(s, tol):
    edges = edge_lengths(s)
    p0, q0 = min(e.pair for e in _tied(edges, edges[0].length, tol))
    adjacent = [e for e in edges if e.pair != (p0, q0) and set(e.pair) & {p0, q0}]
    longest = max(e.length for e in adjacent)

    candidates = []
    for edge in _tied(adjacent, longest, tol):
        p = edge.pair[0] if edge.pair[0] in (p0, q0) else edge.pair[1]
        c = edge.pair[1] if p == edge.pair[0] else edge.pair[0]
        q = q0 if p == p0 else p0
        r = 6 - p - c - q
        simplex_type = _half_space_type(s.vertices, p, c, r, tol)
        labels = (p, c, q, r) if simplex_type == SimplexType.TYPE_I else (c, p, q, r)
        candidates.append((simplex_type != SimplexType.TYPE_I, edge.pair, labels, simplex_type))

    _, _, labels, simplex_type = min(candidates)
    return labels, simplex_type


def _parameters(canonical, simplex_type):
    dim = canonical.shape[1]
    a1 = canonical[1, 0]
    if dim == 2:
        a2 = float(np.hypot(*canonical[2]))
        return (a1, a2), (canonical[2, 0] / a2, canonical[2, 1] / a2)

    x3, x4 = canonical[2], canonical[3]
    dx = x3[0] if simplex_type == SimplexType.TYPE_I else a1 - x3[0]
    a2 = float(np.hypot(dx, x3[1]))
    a3 = float(np.linalg.norm(x4))
    return (a1, a2, a3), (dx / a2, x3[1] / a2, x4[0] / a3, x4[1] / a3, x4[2] / a3)


def _canonical_points(points):
    """Exact structural zeros of the canonical pose."""
    points = np.array(points, dtype=float)
    dim = points.shape[1]
    points[0] = 0.0
    points[1, 1:] = 0.0
    if dim == 3:
        points[2, 2] = 0.0
    return points


def to_standard_position(s):
    tol = DEFAULT_CONFIG["tie_tol"]
    if s.dim == 2:
        labels, simplex_type = _labels_2d(s, tol)
    else:
        labels, simplex_type = _labels_3d(s, tol)

    labeled = s.vertices[list(labels)]
    motion = _frame(labeled)
    canonical = _canonical_points(motion(labeled))
    alphas, shear = _parameters(canonical, simplex_type)

    violated = check_parameters(s.dim, alphas, shear, simplex_type)
    if violated:
        raise ParameterError(f"Standard position constraints violated: {', '.join(violated)}")
    return StandardPosition(Simplex(canonical), tuple(float(a) for a in alphas), tuple(float(p) for p in shear),
                            simplex_type, motion, tuple(int(i) for i in labels))


def standard_position_from_pose(s, simplex_type=None):
    """Read the canonical parameters off a simplex given in canonical pose, without relabeling."""
    v = s.vertices
    h = diameter(s)
    tol = 1e-12 * h
    if np.linalg.norm(v[0]) > tol or np.linalg.norm(v[1, 1:]) > tol or v[1, 0] <= 0.0:
        raise ParameterError("x1 must be the origin and x2 must lie on the positive first axis")
    if s.dim == 3 and (abs(v[2, 2]) > tol or v[3, 2] <= 0.0):
        raise ParameterError("x3 must lie in the x1x2-plane and x4 above it")
    if v[2, 1] <= 0.0:
        raise ParameterError("x3 must lie in the upper half plane")

    if simplex_type is None:
        on_x1_side = s.dim == 2 or v[2, 0] <= v[1, 0] / 2 + tol
        simplex_type = SimplexType.TYPE_I if on_x1_side else SimplexType.TYPE_II
    simplex_type = SimplexType(simplex_type)

    canonical = _canonical_points(v)
    alphas, shear = _parameters(canonical, simplex_type)
    violated = check_parameters(s.dim, alphas, shear, simplex_type)
    if violated:
        raise ParameterError(f"Canonical parameter constraints violated: {', '.join(violated)}")
    return StandardPosition(Simplex(canonical), tuple(float(a) for a in alphas), tuple(float(p) for p in shear),
                            simplex_type, RigidMotion.identity(s.dim), tuple(range(s.dim + 1)))


def decompose_affine(sp):
    """Return (diagonal map, shear map) with shear @ diag mapping the reference simplex onto sp.simplex."""
    violated = check_parameters(sp.dim, sp.alphas, sp.shear, sp.simplex_type)
    if violated:
        raise ParameterError(f"Standard position constraints violated: {', '.join(violated)}")

    zero = np.zeros(sp.dim)
    diag = AffineMap(np.diag(sp.alphas), zero)
    shear = AffineMap(sp.shear_matrix, zero)

    reference = reference_simplex(sp.dim, sp.simplex_type).vertices
    mapped = shear(diag(reference))
    scale = diameter(sp.simplex)
    if np.abs(mapped - sp.simplex.vertices).max() > 1e-12 * scale:
        raise ParameterError("Affine factorization does not reproduce the standard position")
    return diag, shear


def recompose(diag, shear, simplex_type=SimplexType.TYPE_I):
    """Inverse of decompose_affine: rebuild the standard position from its two factors."""
    simplex_type = SimplexType(simplex_type)
    alphas = tuple(float(a) for a in np.diag(diag.matrix))
    m = shear.matrix
    if m.shape[0] == 2:
        params = (float(m[0, 1]), float(m[1, 1]))
    else:
        sign = -1.0 if simplex_type == SimplexType.TYPE_II else 1.0
        params = (float(sign * m[0, 1]), float(m[1, 1]), float(m[0, 2]), float(m[1, 2]), float(m[2, 2]))

    violated = check_parameters(len(alphas), alphas, params, simplex_type)
    if violated:
        raise ParameterError(f"Canonical parameter constraints violated: {', '.join(violated)}")
    reference = reference_simplex(len(alphas), simplex_type).vertices
    canonical = _canonical_points(shear(diag(reference)))
    return StandardPosition(Simplex(canonical), alphas, params, simplex_type,
                            RigidMotion.identity(len(alphas)), tuple(range(len(alphas) + 1)))


#####################################
# Spectral norms
#####################################

def _largest_gram_eigenvalue(matrix):
    gram = matrix.T @ matrix
    if gram.shape == (2, 2):
        a, b, d = gram[0, 0], gram[0, 1], gram[1, 1]
        return 0.5 * (a + d + math.hypot(a - d, 2.0 * b))

    off = gram[0, 1] ** 2 + gram[0, 2] ** 2 + gram[1, 2] ** 2
    q = np.trace(gram) / 3.0
    if off == 0.0:
        return float(np.diag(gram).max())
    p = math.sqrt(((gram[0, 0] - q) ** 2 + (gram[1, 1] - q) ** 2 + (gram[2, 2] - q) ** 2 + 2.0 * off) / 6.0)
    r = np.linalg.det((gram - q * np.eye(3)) / p) / 2.0
    phi = math.acos(min(1.0, max(-1.0, r))) / 3.0
    return q + 2.0 * p * math.cos(phi)


def spectral_norm(matrix):
    matrix = np.asarray(matrix, dtype=float)
    if matrix.shape not in ((2, 2), (3, 3)):
        raise ParameterError(f"Expected a 2x2 or 3x3 matrix, got {matrix.shape}")
    return math.sqrt(max(_largest_gram_eigenvalue(matrix), 0.0))


def condition_number(matrix):
    matrix = np.asarray(matrix, dtype=float)
    if np.array_equal(matrix, np.triu(matrix)):
        inverse = solve_triangular(matrix, np.eye(matrix.shape[0]))
    else:
        inverse = np.linalg.inv(matrix)
    return spectral_norm(matrix) * spectral_norm(inverse)


def matrix_norm_bounds(sp, slack=None):
    slack = DEFAULT_CONFIG["slack"] if slack is None else slack
    shear = sp.shear_matrix
    area = measure(sp.simplex)
    norm = spectral_norm(shear)
    cond = condition_number(shear)
    if sp.dim == 2:
        norm_bound = math.sqrt(2.0)
        cond_bound = sp.alphas[0] * sp.alphas[1] / area
    else:
        norm_bound = 2.0
        cond_bound = (2.0 / 3.0) * sp.alphas[0] * sp.alphas[1] * sp.alphas[2] / area
    return {
        "norm": norm,
        "norm_bound": norm_bound,
        "condition": cond,
        "condition_bound": cond_bound,
        "passed": bool(norm <= norm_bound + slack and cond <= cond_bound * (1.0 + slack)),
    }


def random_points(s, n, rng):
    """n points drawn uniformly from the simplex."""
    weights = rng.dirichlet(np.ones(s.dim + 1), size=n)
    return weights @ s.vertices
