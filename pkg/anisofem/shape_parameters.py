# Copyright (c) anisofem contributors under Apache License 2.0 (see LICENSE.txt).
# Anisotropic interpolation error estimates on simplices
#
# Geometric quality parameters: H_T (needs the standard position), the pose-free H_T0,
# the mesh parameter H(h), the 2D circumradius, and angle diagnostics.

import logging
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .config import DEFAULT_CONFIG
from .errors import ParameterError
from .simplex_geometry import Simplex, diameter, edge_lengths, measure, to_standard_position

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ShapeMetrics:
    dim: int
    h_T: float
    H_T: float
    H_T0: float
    semiregularity: float
    circumradius: Optional[float] = None
    theta_max: Optional[float] = None
    theta_T: Optional[float] = None
    phi_T: Optional[float] = None
    simplex_type: str = "TypeI"


@dataclass(frozen=True)
class AngleDiagnostics:
    semiregularity: float
    theta_max: Optional[float] = None
    theta_T: Optional[float] = None
    phi_T: Optional[float] = None
    base_max_angle: Optional[float] = None
    M1: Optional[float] = None
    M2: Optional[float] = None
    bound: Optional[float] = None
    angles_within: Optional[bool] = None
    bound_holds: Optional[bool] = None


@dataclass(frozen=True)
class EquivalenceReport:
    H_T: float
    H_T0: float
    ratio: float
    passed: bool
    circumradius: Optional[float] = None
    circumradius_ratio: Optional[float] = None
    circumradius_passed: Optional[bool] = None


def param_H_T(sp):
    return math.prod(sp.alphas) / measure(sp.simplex) * diameter(sp.simplex)


def param_H_T0(s):
    lengths = [e.length for e in edge_lengths(s)]
    h = lengths[-1]
    shortest = lengths[0] if s.dim == 2 else lengths[0] * lengths[1]
    return h * h / measure(s) * shortest


def circumradius2d(s):
    if s.dim != 2:
        raise ParameterError("circumradius2d needs a triangle")
    lengths = [e.length for e in edge_lengths(s)]
    return math.prod(lengths) / (4.0 * measure(s))


def _angle(at, a, b):
    u, v = a - at, b - at
    return math.atan2(np.linalg.norm(np.cross(u, v)) if len(u) == 3 else abs(u[0] * v[1] - u[1] * v[0]), np.dot(u, v))


def _max_angle(triangle):
    return max(_angle(triangle[i], triangle[(i + 1) % 3], triangle[(i + 2) % 3]) for i in range(3))


def angle_bound(theta_bar, phi_bar1, phi_bar2):
    """M1, M2 and the semiregularity bound 6 / (M1 M2) for angle bounds theta_bar, phi_bar1 <= phi_bar2."""
    if not (0.0 < theta_bar < math.pi) or not (0.0 < phi_bar1 <= phi_bar2 < math.pi):
        raise ParameterError("Invalid angle bounds: need 0 < theta_bar < pi and 0 < phi_bar1 <= phi_bar2 < pi")
    m1 = min(math.sin((math.pi - theta_bar) / 2.0), math.sin(theta_bar))
    m2 = min(math.sin(phi_bar1), math.sin(phi_bar2))
    return m1, m2, 6.0 / (m1 * m2)


def angle_diagnostics(sp, theta_bar=None, phi_bar1=None, phi_bar2=None, slack=None):
    slack = DEFAULT_CONFIG["slack"] if slack is None else slack
    semiregularity = param_H_T(sp) / diameter(sp.simplex)
    if sp.dim == 2:
        s, t = sp.shear
        return AngleDiagnostics(semiregularity, theta_max=math.atan2(t, s))

    s1, t1, _, _, t2 = sp.shear
    theta_t = math.atan2(t1, s1)
    phi_t = math.asin(min(1.0, max(-1.0, t2)))
    base_max = _max_angle(sp.simplex.vertices[:3])
    if theta_bar is None:
        return AngleDiagnostics(semiregularity, theta_T=theta_t, phi_T=phi_t, base_max_angle=base_max)

    phi_bar1 = phi_t if phi_bar1 is None else phi_bar1
    phi_bar2 = phi_t if phi_bar2 is None else phi_bar2
    m1, m2, bound = angle_bound(theta_bar, phi_bar1, phi_bar2)
    within = base_max <= theta_bar + slack and phi_bar1 - slack <= phi_t <= phi_bar2 + slack
    return AngleDiagnostics(
        semiregularity, theta_T=theta_t, phi_T=phi_t, base_max_angle=base_max,
        M1=m1, M2=m2, bound=bound, angles_within=within,
        bound_holds=semiregularity <= bound * (1.0 + slack),
    )


def equivalence_check(s, slack=None):
    slack = DEFAULT_CONFIG["slack"] if slack is None else slack
    H_T = param_H_T(to_standard_position(s))
    H_T0 = param_H_T0(s)
    ratio = H_T / H_T0
    passed = 0.5 * (1.0 - slack) <= ratio <= 2.0 * (1.0 + slack)
    if s.dim != 2:
        return EquivalenceReport(H_T, H_T0, ratio, passed)
    radius = circumradius2d(s)
    radius_ratio = H_T0 / radius
    return EquivalenceReport(H_T, H_T0, ratio, passed, radius, radius_ratio,
                             2.0 * (1.0 - slack) <= radius_ratio <= 8.0 * (1.0 + slack))


def shape_metrics(s):
    sp = to_standard_position(s)
    diagnostics = angle_diagnostics(sp)
    h = diameter(s)
    H_T = param_H_T(sp)
    return ShapeMetrics(
        dim=s.dim,
        h_T=h,
        H_T=H_T,
        H_T0=param_H_T0(s),
        semiregularity=H_T / h,
        circumradius=circumradius2d(s) if s.dim == 2 else None,
        theta_max=diagnostics.theta_max,
        theta_T=diagnostics.theta_T,
        phi_T=diagnostics.phi_T,
        simplex_type=sp.simplex_type.value,
    )


#####################################
# Mesh-wide parameters
#####################################

def _cell_edge_lengths(mesh):
    points = mesh.vertices[mesh.cells]
    pairs = [(i, j) for i in range(mesh.dim + 1) for j in range(i + 1, mesh.dim + 1)]
    return np.stack([np.linalg.norm(points[:, i] - points[:, j], axis=1) for i, j in pairs], axis=1)


def _cell_measures(mesh):
    points = mesh.vertices[mesh.cells]
    return np.abs(np.linalg.det(points[:, 1:] - points[:, :1])) / math.factorial(mesh.dim)


def cell_H_T0(mesh):
    """Per-cell (h_T0, H_T0)."""
    lengths = np.sort(_cell_edge_lengths(mesh), axis=1)
    h = lengths[:, -1]
    shortest = lengths[:, 0] if mesh.dim == 2 else lengths[:, 0] * lengths[:, 1]
    return h, h * h / _cell_measures(mesh) * shortest


def mesh_H(mesh):
    if len(mesh.cells) == 0:
        raise ParameterError("empty mesh")
    return float(cell_H_T0(mesh)[1].max())


def element_H_T(mesh):
    """Per-cell (h_T, H_T); cells with equal edge lengths in the same vertex order share one evaluation."""
    if len(mesh.cells) == 0:
        raise ParameterError("empty mesh")
    lengths = _cell_edge_lengths(mesh)
    mantissa, exponent = np.frexp(lengths)
    keys = np.hstack([np.round(mantissa, 10), exponent])
    _, first, inverse = np.unique(keys, axis=0, return_index=True, return_inverse=True)
    h_unique = np.empty(len(first))
    H_unique = np.empty(len(first))
    for n, cell in enumerate(first):
        s = Simplex(mesh.vertices[mesh.cells[cell]])
        h_unique[n] = diameter(s)
        H_unique[n] = param_H_T(to_standard_position(s))
    inverse = np.asarray(inverse).ravel()
    logger.debug(f"element_H_T: {len(first)} congruence classes over {len(mesh.cells)} cells")
    return lengths.max(axis=1), H_unique[inverse] * (lengths.max(axis=1) / h_unique[inverse])


def mesh_semiregularity(mesh):
    """Measured suprema of H_T / h_T and H_T0 / h_T over the mesh."""
    h, H = element_H_T(mesh)
    h0, H0 = cell_H_T0(mesh)
    return {"max_H_T_over_h": float((H / h).max()), "max_H_T0_over_h": float((H0 / h0).max())}
