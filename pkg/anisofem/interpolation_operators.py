# Copyright (c) anisofem contributors under Apache License 2.0 (see LICENSE.txt).
# Anisotropic interpolation error estimates on simplices
#
# Finite elements as triples (reference simplex, shape space, degrees of freedom), local
# interpolation through the reference element, and measured interpolation error ratios.

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import lu_factor, lu_solve
from tqdm import tqdm

from .config import get_config
from .errors import ParameterError, UndefinedRatioError, UnisolvenceError
from .fields import remark_phi
from .mesh_engine import remark_tetra
from .polynomials_quadrature import (
    MultiPoly,
    SmoothField,
    _evaluate,
    _is_inf,
    _reference_lattice,
    as_field,
    facet_quadrature,
    lattice_doubling_check,
    lattice_points,
    multi_indices,
    poly_space_basis,
    scaled_monomial_basis,
    simplex_rule,
    sobolev_seminorm,
)
from .shape_parameters import element_H_T, param_H_T
from .simplex_geometry import (
    AffineMap,
    Simplex,
    affine_from_reference,
    decompose_affine,
    diameter,
    facets,
    random_points,
    reference_simplex,
    standard_position_from_pose,
    to_standard_position,
)

logger = logging.getLogger(__name__)

ZERO_SEMINORM = 1e-14


#####################################
# Degrees of freedom
#####################################

class LinearFunctional:
    """chi(v) = sum_q weights[q] * v(points[q]); vector weights pair with vector values."""

    def __init__(self, points, weights, entity=""):
        self.points = np.atleast_2d(np.asarray(points, dtype=float))
        self.weights = np.asarray(weights, dtype=float)
        self.entity = entity

    def __call__(self, v):
        values = _evaluate(v, self.points)
        if self.weights.ndim == 1:
            return float(self.weights @ values)
        return float(np.sum(self.weights * values))

    def mapped(self, affine):
        raise NotImplementedError

    def __repr__(self):
        return f"{type(self).__name__}({self.entity or len(self.points)})"


class PointEvaluation(LinearFunctional):
    def __init__(self, point):
        super().__init__(np.asarray(point, dtype=float)[None, :], [1.0], entity=f"point {np.round(point, 6).tolist()}")

    def mapped(self, affine):
        return PointEvaluation(affine(self.points[0]))


class FacetMean(LinearFunctional):
    """(1 / |F|) int_F v ds"""

    def __init__(self, facet_vertices, degree=None):
        self.facet_vertices = np.asarray(facet_vertices, dtype=float)
        self.degree = get_config()["quad_degree"] if degree is None else degree
        points, weights = facet_quadrature(self.facet_vertices, self.degree)
        super().__init__(points, weights / weights.sum(), entity="facet mean")

    def mapped(self, affine):
        return FacetMean(affine(self.facet_vertices), self.degree)


#####################################
# Finite elements
#####################################

@dataclass(frozen=True, eq=False)
class FiniteElement:
    name: str
    reference: Simplex
    degree: int
    basis: tuple          # spanning polynomials of the shape space
    dofs: tuple           # LinearFunctional on the reference simplex
    coefficients: np.ndarray = field(init=False, repr=False)  # basis -> shape function coefficients

    def __post_init__(self):
        if len(self.basis) != len(self.dofs):
            raise UnisolvenceError(f"{self.name}: {len(self.dofs)} DOFs for a shape space of dimension {len(self.basis)}")
        matrix = self.dof_matrix(self.basis)
        condition = np.linalg.cond(matrix)
        if not np.isfinite(condition) or condition > get_config()["condition_warn"]:
            raise UnisolvenceError(f"{self.name}: DOF matrix is singular (condition number {condition:.3e})")
        coefficients = lu_solve(lu_factor(matrix), np.eye(len(self.basis)))
        coefficients.setflags(write=False)
        object.__setattr__(self, "coefficients", coefficients)
        object.__setattr__(self, "_shape_functions", tuple(
            sum((c * b for c, b in zip(column, self.basis)), MultiPoly(self.dim)) for column in coefficients.T
        ))

    @property
    def dim(self):
        return self.reference.dim

    @property
    def n_dofs(self):
        return len(self.dofs)

    @property
    def shape_functions(self):
        return self._shape_functions

    def dof_matrix(self, functions):
        return np.array([[dof(f) for f in functions] for dof in self.dofs])

    def duality_residual(self):
        """max |chi_i(theta_j) - delta_ij|"""
        return float(np.abs(self.dof_matrix(self.shape_functions) - np.eye(self.n_dofs)).max())


def _lagrange_nodes(dim, k):
    nodes = _reference_lattice(dim, k)
    barycentric = np.column_stack([1.0 - nodes.sum(axis=1), nodes])
    # vertices first, in vertex order
    vertex_of = [int(np.argmax(b)) if np.isclose(b.max(), 1.0) else dim + 1 for b in barycentric]
    order = sorted(range(len(nodes)), key=lambda i: (vertex_of[i], i))
    return nodes[order]


def build_lagrange(dim, k):
    if k < 1:
        raise ParameterError("Lagrange elements need degree k >= 1")
    if k > 4:
        logger.warning(f"Lagrange degree {k} on equispaced nodes; expect a large Lebesgue constant")
    dofs = tuple(PointEvaluation(node) for node in _lagrange_nodes(dim, k))
    return FiniteElement(f"P{k}", reference_simplex(dim), k, tuple(poly_space_basis(dim, k)), dofs)


def build_crouzeix_raviart(dim):
    if dim not in (2, 3):
        raise ParameterError("Crouzeix-Raviart elements need dim in (2, 3)")
    reference = reference_simplex(dim)
    dofs = tuple(FacetMean(verts) for _, verts in facets(reference))
    return FiniteElement("CR", reference, 1, tuple(poly_space_basis(dim, 1)), dofs)


def build_element(name, dim):
    """Element by name: 'P1'..'P4' (Lagrange) or 'CR'."""
    name = name.upper()
    if name == "CR":
        return build_crouzeix_raviart(dim)
    if name.startswith("P") and name[1:].isdigit():
        return build_lagrange(dim, int(name[1:]))
    raise ParameterError(f"Unknown element {name!r}; use P<k> or CR")


#####################################
# Local interpolation
#####################################

@dataclass(frozen=True, eq=False)
class LocalPolynomial:
    """x -> poly(affine^{-1}(x)); keeps the expansion in well-scaled local coordinates."""
    poly: MultiPoly
    affine: AffineMap

    def __call__(self, points):
        return self.poly(self.affine.inverse()(points))

    def as_field(self, name=""):
        return SmoothField.from_poly(self.poly, name=name).compose_affine(self.affine.inverse())

    def as_poly(self):
        """Expansion in physical monomials; exact but badly scaled on tiny or thin simplices."""
        inverse = self.affine.inverse()
        return self.poly.compose_affine(inverse.matrix, inverse.offset)


@dataclass(frozen=True, eq=False)
class InterpolatedFunction:
    element: FiniteElement
    coefficients: np.ndarray  # chi_i(f o phi), one per DOF
    simplex: Simplex
    affine: AffineMap         # reference -> simplex

    @property
    def reference_poly(self):
        return sum((c * theta for c, theta in zip(self.coefficients, self.element.shape_functions)),
                   MultiPoly(self.element.dim))

    def local(self):
        return LocalPolynomial(self.reference_poly, self.affine)

    def __call__(self, points):
        return self.local()(points)

    def as_field(self):
        return self.local().as_field(name=f"I[{self.element.name}]")

    def as_poly(self):
        return self.local().as_poly()


def local_interpolate(e, f, T, affine=None):
    """I_T f = sum_i chi_i(f o phi) theta_i o phi^{-1}, with phi the reference map of T."""
    affine = affine_from_reference(T) if affine is None else affine
    if isinstance(f, (SmoothField, MultiPoly, list, tuple)):
        pulled = as_field(f, T.dim).compose_affine(affine)
    else:
        pulled = lambda x: f(affine(x))  # noqa: E731
    coefficients = np.array([dof(pulled) for dof in e.dofs])
    return InterpolatedFunction(e, coefficients, T, affine)


def physical_interpolate(e, f, T):
    """Interpolation assembled directly on T: mapped DOFs against a local monomial basis of T."""
    affine = affine_from_reference(T)
    dofs = [dof.mapped(affine) for dof in e.dofs]
    widths = T.vertices.max(axis=0) - T.vertices.min(axis=0)
    local = AffineMap(np.diag(widths), T.vertices.mean(axis=0))
    basis = scaled_monomial_basis(Simplex(local.inverse()(T.vertices)), e.degree)
    # basis lives on the local image of T; pull it back to physical coordinates for the DOFs
    physical_basis = [LocalPolynomial(b, local) for b in basis]
    matrix = np.array([[dof(b) for b in physical_basis] for dof in dofs])
    rhs = np.array([dof(f) for dof in dofs])
    try:
        solution = lu_solve(lu_factor(matrix), rhs)
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise UnisolvenceError(f"{e.name}: DOFs are not unisolvent on {T}") from exc
    poly = sum((c * b for c, b in zip(solution, basis)), MultiPoly(T.dim))
    return LocalPolynomial(poly, local)


def _sample_residual(a, b, points):
    values_a, values_b = a(points), b(points)
    scale = max(1.0, float(np.abs(values_a).max()))
    return float(np.abs(values_a - values_b).max() / scale)


def commuting_check(e, f, sp, rng, n_points=100):
    """Residuals of I_T(v) o shear = I_Ttilde(v o shear) and of the same identity for the diagonal step."""
    diag, shear = decompose_affine(sp)
    reference = reference_simplex(sp.dim, sp.simplex_type)
    T_tilde = Simplex(diag(reference.vertices))
    f = as_field(f, sp.dim)
    f_tilde = f.compose_affine(shear)
    f_hat = f_tilde.compose_affine(diag)

    on_T = physical_interpolate(e, f, sp.simplex)
    on_T_tilde = physical_interpolate(e, f_tilde, T_tilde)
    on_T_hat = physical_interpolate(e, f_hat, reference)

    x_tilde = random_points(T_tilde, n_points, rng)
    x_hat = random_points(reference, n_points, rng)
    residual_shear = _sample_residual(lambda x: on_T(shear(x)), on_T_tilde, x_tilde)
    residual_diag = _sample_residual(lambda x: on_T_tilde(diag(x)), on_T_hat, x_hat)
    # the reference-element path of local_interpolate must agree with the physical one
    residual_local = _sample_residual(local_interpolate(e, f, sp.simplex), on_T, shear(diag(x_hat)))
    return {
        "residual_shear": residual_shear,
        "residual_diag": residual_diag,
        "residual_local": residual_local,
        "residual": max(residual_shear, residual_diag, residual_local),
    }


#####################################
# Error ratios
#####################################

@dataclass(frozen=True)
class ErrorRatio:
    error: float
    seminorm: float
    bound_factor: float
    ratio: float
    h_T: float
    H_T: float


def _check_orders(e, m, ell):
    if not (0 <= m <= ell + 1 <= e.degree + 1):
        raise ParameterError(f"Need 0 <= m <= l + 1 <= k + 1, got m={m}, l={ell}, k={e.degree}")


def _ratio(error, seminorm, bound_factor):
    if seminorm < ZERO_SEMINORM:
        # f in P^l, where the interpolant is exact
        if error <= ZERO_SEMINORM ** 0.5:
            return 0.0
        raise UndefinedRatioError(f"|f|_(l+1) = {seminorm:.3e} vanishes but the error is {error:.3e}")
    return error / bound_factor


def error_ratio(e, f, T, m, p, ell, sp=None, n=None):
    """Measured |f - I_T f|_{W^{m,p}(T)} against (H_T / h_T)^m h_T^(l+1-m) |f|_{W^(l+1,p)(T)}."""
    _check_orders(e, m, ell)
    field_ = as_field(f, T.dim)
    sp = to_standard_position(T) if sp is None else sp
    interpolant = local_interpolate(e, field_, T)

    error = sobolev_seminorm(field_ - interpolant.as_field(), T, m, p, n=n)
    seminorm = sobolev_seminorm(field_, T, ell + 1, p, n=n)
    h = diameter(T)
    H = param_H_T(sp)
    bound_factor = (H / h) ** m * h ** (ell + 1 - m) * seminorm
    return ErrorRatio(error, seminorm, bound_factor, _ratio(error, seminorm, bound_factor), h, H)


def scaled_argument_check(e, f, T, lam, m):
    """(lhs, rhs) of |f(lam .) - I f(lam .)|_{H^m(T / lam)} = lam^(m - d/2) |f - I f|_{H^m(T)}."""
    if lam <= 0.0:
        raise ParameterError("Scaling factor must be positive")
    field_ = as_field(f, T.dim)
    scaled_T = Simplex(T.vertices / lam)
    scaled_f = field_.compose_affine(AffineMap(lam * np.eye(T.dim), np.zeros(T.dim)))
    base = sobolev_seminorm(field_ - local_interpolate(e, field_, T).as_field(), T, m, 2)
    lhs = sobolev_seminorm(scaled_f - local_interpolate(e, scaled_f, scaled_T).as_field(), scaled_T, m, 2)
    return lhs, lam ** (m - T.dim / 2) * base


def certify_linf_sampling(e, f, T, m, ell, n=None, tol=None):
    """True when doubling the sampling lattice moves both W^{m,inf} error and |f|_{W^(l+1,inf)} by less than tol."""
    config = get_config()
    tol = config["linf_doubling_tol"] if tol is None else tol
    field_ = as_field(f, T.dim)
    difference = field_ - local_interpolate(e, field_, T).as_field()
    changes = (lattice_doubling_check(difference, T, m, n), lattice_doubling_check(field_, T, ell + 1, n))
    certified = max(changes) < tol
    if not certified:
        logger.warning(f"W^(m,inf) sampling not certified on {T}: relative changes {changes}")
    return certified


#####################################
# Optimality of H_T (tetrahedron family x^2 + y^2/4 + z^2)
#####################################

LOWER_BOUND = 1.0 / (24.0 * math.sqrt(10.0))


@dataclass(frozen=True)
class OptimalityReport:
    s: float
    eps: float
    I_T: float                 # measured |phi - I phi|_{W^(1,inf)} / |phi|_{W^(2,inf)}
    I_T_closed_form: float     # (s^(2-eps) + s^eps) / 8
    I_T_y: float               # y-derivative part of the measured error, divided by |phi|_{W^(2,inf)}
    H_T: float                 # parameter read off the given pose
    H_T_closed_form: float
    H_T_standard: float        # parameter of the relabeled standard position
    interpolant_residual: float
    ratio: float
    ratio_standard: float
    ratio_closed_form: float
    lower_bound: float
    passed: bool


def optimality_check(s, eps, n=None, slack=1e-6):
    if not (0.0 < s < 1.0) or not (1.0 < eps < 2.0):
        raise ParameterError("optimality check needs 0 < s < 1 and 1 < eps < 2")
    T = remark_tetra(s, eps).cell(0)
    phi = remark_phi()
    interpolant = local_interpolate(build_lagrange(3, 1), phi, T)

    difference = phi - interpolant.as_field()
    points = lattice_points(T, get_config()["linf_lattice"] if n is None else n)
    semi = sobolev_seminorm(phi, T, 2, math.inf)
    I_T = sobolev_seminorm(difference, T, 1, math.inf, n=n) / semi
    I_T_y = float(np.abs(difference.derivative((0, 1, 0), points)).max()) / semi
    I_T_closed = (s ** (2.0 - eps) + s**eps) / 8.0

    expected = MultiPoly(3, {(1, 0, 0): s, (0, 1, 0): -0.25 * (s ** (2.0 - eps) - s**eps), (0, 0, 1): s})
    residual = (interpolant.as_poly() - expected).max_abs_coefficient()

    H_pose = param_H_T(standard_position_from_pose(T))
    H_closed = 6.0 * math.sqrt(2.0) * s**3 * math.sqrt(s * s / 4.0 + s ** (2.0 * eps)) / s ** (2.0 + eps)
    H_standard = param_H_T(to_standard_position(T))

    ratio, ratio_standard, ratio_closed = I_T / H_pose, I_T / H_standard, I_T_closed / H_closed
    passed = min(ratio, ratio_standard, ratio_closed) >= LOWER_BOUND - slack
    if not passed:
        logger.error(f"I_T / H_T fell below {LOWER_BOUND:.6g} at s={s}, eps={eps}")
    return OptimalityReport(s, eps, I_T, I_T_closed, I_T_y, H_pose, H_closed, H_standard, residual,
                            ratio, ratio_standard, ratio_closed, LOWER_BOUND, bool(passed))


#####################################
# Batched evaluation over a mesh
#####################################

@dataclass(frozen=True, eq=False)
class MeshErrors:
    error: np.ndarray
    seminorm: np.ndarray
    h_T: np.ndarray
    H_T: np.ndarray
    bound_factor: np.ndarray
    ratio: np.ndarray
    p: object = 2

    def total_error(self):
        if _is_inf(self.p):
            return float(self.error.max())
        return float(np.sqrt(np.sum(self.error**2)))

    def max_ratio(self):
        return float(np.nanmax(self.ratio)) if np.any(np.isfinite(self.ratio)) else math.nan


def _dof_sampling(e):
    """Reference points of all DOFs and the (n_dofs, n_points) weight matrix."""
    points = np.vstack([dof.points for dof in e.dofs])
    weights = np.zeros((e.n_dofs, len(points)))
    start = 0
    for i, dof in enumerate(e.dofs):
        weights[i, start:start + len(dof.points)] = dof.weights
        start += len(dof.points)
    return points, weights


def _physical_derivative_weights(B, beta):
    """{gamma: (E,) weights} with d^beta_x = sum_gamma w_gamma d^gamma_xhat for xhat = B (x - b)."""
    dim = B.shape[1]
    targets = [i for i, b in enumerate(beta) for _ in range(b)]
    weights = {}
    for source in np.ndindex(*(dim,) * len(targets)):
        gamma = tuple(source.count(j) for j in range(dim))
        factor = np.ones(B.shape[0])
        for j, i in zip(source, targets):
            factor = factor * B[:, j, i]
        weights[gamma] = weights.get(gamma, 0.0) + factor
    return weights


def _reduce(values, weights, p):
    """Per-cell |.|_p of (E, Q) squared-or-absolute samples."""
    if _is_inf(p):
        return values.max(axis=1)
    return np.sqrt(values @ weights)


def mesh_error_ratios(e, f, mesh, m, p, ell, degree=None, n=None, chunk_size=None, progress=False):
    """Per-cell error ratios of the local interpolant, vectorized through the reference element."""
    _check_orders(e, m, ell)
    if mesh.dim != e.dim:
        raise ParameterError(f"Element of dimension {e.dim} on a mesh of dimension {mesh.dim}")
    field_ = as_field(f, mesh.dim)
    if field_.is_vector:
        raise ParameterError("Scalar elements need a scalar field")
    config = get_config()

    if _is_inf(p):
        xi, quad_weights = _reference_lattice(mesh.dim, config["linf_lattice"] if n is None else n), None
    elif p == 2:
        rule = simplex_rule(mesh.dim, config["quad_degree"] if degree is None else degree)
        xi, quad_weights = rule.points, rule.weights
    else:
        raise ParameterError("Only p = 2 and p = inf are supported")

    dof_points, dof_weights = _dof_sampling(e)
    tables = {
        gamma: np.array([theta.derivative(gamma)(xi) for theta in e.shape_functions])
        for gamma in multi_indices(mesh.dim, m)
    }
    error_betas, semi_betas = multi_indices(mesh.dim, m), multi_indices(mesh.dim, ell + 1)
    chunk_size = chunk_size or max(1, config["chunk_size"] * 64 // max(len(xi), 1))

    error = np.empty(mesh.n_cells)
    seminorm = np.empty(mesh.n_cells)
    starts = range(0, mesh.n_cells, chunk_size)
    for start in tqdm(starts, desc="cells", disable=not progress, total=len(starts)):
        cells = np.arange(start, min(start + chunk_size, mesh.n_cells))
        A, b = mesh.affine_maps(cells)
        B = np.linalg.inv(A)
        jacobian = np.abs(np.linalg.det(A))

        x_dofs = np.einsum("eij,qj->eqi", A, dof_points) + b[:, None, :]
        coefficients = field_(x_dofs.reshape(-1, mesh.dim)).reshape(len(cells), -1) @ dof_weights.T
        x = (np.einsum("eij,qj->eqi", A, xi) + b[:, None, :]).reshape(-1, mesh.dim)

        error_samples = np.zeros((len(cells), len(xi)))
        for beta in error_betas:
            interpolated = sum(w[:, None] * (coefficients @ tables[gamma])
                               for gamma, w in _physical_derivative_weights(B, beta).items())
            diff = field_.derivative(beta, x).reshape(len(cells), -1) - interpolated
            error_samples = np.maximum(error_samples, np.abs(diff)) if _is_inf(p) else error_samples + diff**2

        semi_samples = np.zeros((len(cells), len(xi)))
        for beta in semi_betas:
            values = field_.derivative(beta, x).reshape(len(cells), -1)
            semi_samples = np.maximum(semi_samples, np.abs(values)) if _is_inf(p) else semi_samples + values**2

        if _is_inf(p):
            error[cells] = _reduce(error_samples, None, p)
            seminorm[cells] = _reduce(semi_samples, None, p)
        else:
            error[cells] = _reduce(error_samples, quad_weights, p) * np.sqrt(jacobian)
            seminorm[cells] = _reduce(semi_samples, quad_weights, p) * np.sqrt(jacobian)

    h, H = element_H_T(mesh)
    bound_factor = (H / h) ** m * h ** (ell + 1 - m) * seminorm
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(seminorm < ZERO_SEMINORM, np.where(error <= ZERO_SEMINORM ** 0.5, 0.0, np.nan),
                         error / bound_factor)
    undefined = int(np.isnan(ratio).sum())
    if undefined:
        logger.warning(f"{undefined} cells with vanishing |f|_(l+1) but nonzero error; ratio undefined there")
    return MeshErrors(error, seminorm, h, H, bound_factor, ratio, p)
