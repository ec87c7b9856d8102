# Copyright (c) anisofem contributors under Apache License 2.0 (see LICENSE.txt).
# Anisotropic interpolation error estimates on simplices
#
# Multivariate polynomials, simplex quadrature, fields with closed-form derivatives,
# Sobolev seminorms, and the best polynomial approximation used by Bramble-Hilbert type bounds.

import functools
import itertools
import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import lu_factor, lu_solve
from scipy.optimize import linprog
from scipy.special import comb, roots_jacobi

from .config import get_config
from .errors import ParameterError, QuadratureError, UnisolvenceError
from .simplex_geometry import affine_from_reference, diameter

logger = logging.getLogger(__name__)


#####################################
# Multi-indices and polynomials
#####################################

@functools.lru_cache(maxsize=None)
def multi_indices(dim, order):
    """All beta with |beta| = order, x_1^order first."""
    if order < 0:
        return ()
    betas = [beta for beta in itertools.product(range(order + 1), repeat=dim) if sum(beta) == order]
    return tuple(sorted(betas, reverse=True))


def multi_indices_upto(dim, order):
    return tuple(beta for n in range(order + 1) for beta in multi_indices(dim, n))


def _factorial_ratio(n, k):
    """n! / (n - k)!"""
    return math.prod(range(n - k + 1, n + 1))


class MultiPoly:
    """Polynomial in dim variables stored as {beta: coefficient}. Instances are treated as immutable."""

    __slots__ = ("dim", "coeffs")

    def __init__(self, dim, coeffs=None):
        self.dim = int(dim)
        clean = {}
        for beta, c in (coeffs or {}).items():
            beta = tuple(int(b) for b in beta)
            if len(beta) != self.dim or min(beta) < 0:
                raise ParameterError(f"Invalid multi-index {beta} for dim={dim}")
            c = float(c)
            if c != 0.0:
                clean[beta] = clean.get(beta, 0.0) + c
        self.coeffs = {beta: c for beta, c in clean.items() if c != 0.0}

    @classmethod
    def constant(cls, dim, value):
        return cls(dim, {(0,) * dim: value})

    @classmethod
    def monomial(cls, beta, coefficient=1.0):
        return cls(len(beta), {tuple(beta): coefficient})

    @classmethod
    def coordinate(cls, dim, i):
        beta = [0] * dim
        beta[i] = 1
        return cls(dim, {tuple(beta): 1.0})

    @property
    def degree(self):
        return max((sum(beta) for beta in self.coeffs), default=0)

    def is_zero(self):
        return not self.coeffs

    def __call__(self, points):
        points = np.asarray(points, dtype=float)
        single = points.ndim == 1
        points = np.atleast_2d(points)
        values = np.zeros(points.shape[0])
        for beta, c in self.coeffs.items():
            values += c * np.prod(points ** np.asarray(beta), axis=1)
        return values[0] if single else values

    def derivative(self, beta):
        beta = tuple(beta)
        out = {}
        for gamma, c in self.coeffs.items():
            if all(g >= b for g, b in zip(gamma, beta)):
                factor = math.prod(_factorial_ratio(g, b) for g, b in zip(gamma, beta))
                out[tuple(g - b for g, b in zip(gamma, beta))] = c * factor
        return MultiPoly(self.dim, out)

    def gradient(self):
        return [self.derivative(tuple(int(i == j) for j in range(self.dim))) for i in range(self.dim)]

    def _check(self, other):
        if other.dim != self.dim:
            raise ParameterError(f"Dimension mismatch: {self.dim} vs {other.dim}")

    def __add__(self, other):
        if not isinstance(other, MultiPoly):
            other = MultiPoly.constant(self.dim, other)
        self._check(other)
        coeffs = dict(self.coeffs)
        for beta, c in other.coeffs.items():
            coeffs[beta] = coeffs.get(beta, 0.0) + c
        return MultiPoly(self.dim, coeffs)

    __radd__ = __add__

    def __neg__(self):
        return MultiPoly(self.dim, {beta: -c for beta, c in self.coeffs.items()})

    def __sub__(self, other):
        return self + (-other)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        if not isinstance(other, MultiPoly):
            return MultiPoly(self.dim, {beta: c * float(other) for beta, c in self.coeffs.items()})
        self._check(other)
        coeffs = {}
        for (b1, c1), (b2, c2) in itertools.product(self.coeffs.items(), other.coeffs.items()):
            beta = tuple(x + y for x, y in zip(b1, b2))
            coeffs[beta] = coeffs.get(beta, 0.0) + c1 * c2
        return MultiPoly(self.dim, coeffs)

    __rmul__ = __mul__

    def __truediv__(self, scalar):
        return self * (1.0 / scalar)

    def __pow__(self, n):
        result = MultiPoly.constant(self.dim, 1.0)
        for _ in range(int(n)):
            result = result * self
        return result

    def compose_affine(self, matrix, offset):
        """q(y) = p(matrix @ y + offset), expanded exactly."""
        matrix = np.asarray(matrix, dtype=float)
        offset = np.asarray(offset, dtype=float)
        new_dim = matrix.shape[1]
        substitutes = []
        for i in range(self.dim):
            coeffs = {(0,) * new_dim: offset[i]}
            for j in range(new_dim):
                beta = tuple(int(j == l) for l in range(new_dim))
                coeffs[beta] = coeffs.get(beta, 0.0) + matrix[i, j]
            substitutes.append(MultiPoly(new_dim, coeffs))

        powers = {}

        def power(i, n):
            if (i, n) not in powers:
                powers[(i, n)] = substitutes[i] ** n
            return powers[(i, n)]

        result = MultiPoly(new_dim)
        for beta, c in self.coeffs.items():
            term = MultiPoly.constant(new_dim, c)
            for i, n in enumerate(beta):
                if n:
                    term = term * power(i, n)
            result = result + term
        return result

    def max_abs_coefficient(self):
        return max((abs(c) for c in self.coeffs.values()), default=0.0)

    def __repr__(self):
        terms = " + ".join(f"{c:.6g}*x^{beta}" for beta, c in sorted(self.coeffs.items(), reverse=True))
        return f"MultiPoly(dim={self.dim}, {terms or '0'})"


def poly_space_basis(dim, k):
    if k < 0:
        raise ParameterError("Invalid polynomial degree")
    return [MultiPoly.monomial(beta) for beta in multi_indices_upto(dim, k)]


def poly_space_dim(dim, k):
    return int(comb(k + dim, dim, exact=True))


def scaled_monomial_basis(s, k, min_degree=0, anisotropic=False):
    """Monomials ((x - centroid) / w)^beta with min_degree <= |beta| <= k.

    w = h_T, or the per-axis bounding-box extent when anisotropic is set.
    """
    centroid = s.vertices.mean(axis=0)
    if anisotropic:
        widths = s.vertices.max(axis=0) - s.vertices.min(axis=0)
    else:
        widths = np.full(s.dim, diameter(s))
    scale = np.diag(1.0 / widths)
    return [
        MultiPoly.monomial(beta).compose_affine(scale, -centroid / widths)
        for n in range(min_degree, k + 1)
        for beta in multi_indices(s.dim, n)
    ]


#####################################
# Quadrature
#####################################

@dataclass(frozen=True, eq=False)
class QuadratureRule:
    dim: int
    points: np.ndarray  # coordinates on conv{0, e_1, ..., e_dim}
    weights: np.ndarray  # sum to 1 / dim!
    exactness_degree: int

    @property
    def barycentric(self):
        return np.column_stack([1.0 - self.points.sum(axis=1), self.points])

    def __len__(self):
        return len(self.weights)


def _gauss_jacobi_01(n, alpha):
    """Nodes and weights on [0, 1] for the weight (1 - u)^alpha."""
    if alpha == 0:
        x, w = np.polynomial.legendre.leggauss(n)
    else:
        x, w = roots_jacobi(n, alpha, 0.0)
    return (1.0 + x) / 2.0, w / 2.0 ** (alpha + 1)


# Symmetric rules for the lowest degrees
_TABULATED = {
    (2, 2): (np.array([[1 / 6, 1 / 6], [2 / 3, 1 / 6], [1 / 6, 2 / 3]]), np.full(3, 1 / 6)),
    (3, 2): (
        np.array([
            [0.1381966011250105, 0.1381966011250105, 0.1381966011250105],
            [0.5854101966249685, 0.1381966011250105, 0.1381966011250105],
            [0.1381966011250105, 0.5854101966249685, 0.1381966011250105],
            [0.1381966011250105, 0.1381966011250105, 0.5854101966249685],
        ]),
        np.full(4, 1 / 24),
    ),
}


@functools.lru_cache(maxsize=None)
def simplex_rule(dim, degree):
    """Quadrature on the reference simplex exact for polynomials of total degree <= degree.

    Degrees 0-1 use the centroid. Degree 2 on triangles and tetrahedra uses the symmetric 3- and 4-point
    rules. Everything else uses collapsed Gauss-Jacobi tensor rules with
    ((degree + 2) // 2)^dim interior points instead of tabulated symmetric rules: they exist for
    every degree, but they are not invariant under vertex permutations and use more points.
    """
    degree = max(int(degree), 0)
    if dim not in (1, 2, 3):
        raise ParameterError(f"Unsupported simplex dimension {dim}")

    volume = 1.0 / math.factorial(dim)
    if degree <= 1:
        points, weights = np.full((1, dim), 1.0 / (dim + 1)), np.array([volume])
    elif (dim, degree) in _TABULATED:
        points, weights = _TABULATED[(dim, degree)]
    else:
        n = (degree + 2) // 2
        # collapsed coordinates; the Jacobian factors are absorbed by the Jacobi weights
        rules = [_gauss_jacobi_01(n, dim - 1 - i) for i in range(dim)]
        nodes = np.array(list(itertools.product(*[r[0] for r in rules])))
        weights = np.prod(np.array(list(itertools.product(*[r[1] for r in rules]))), axis=1)
        points = np.empty_like(nodes)
        remaining = np.ones(len(nodes))
        for i in range(dim):
            points[:, i] = nodes[:, i] * remaining
            remaining = remaining * (1.0 - nodes[:, i])

    points = np.array(points, dtype=float)
    weights = np.array(weights, dtype=float)
    points.setflags(write=False)
    weights.setflags(write=False)
    return QuadratureRule(dim, points, weights, degree)


def facet_quadrature(facet_vertices, degree):
    """Physical points and weights on a (d-1)-simplex embedded in R^d; weights sum to its measure."""
    facet_vertices = np.asarray(facet_vertices, dtype=float)
    base = facet_vertices[0]
    edges = (facet_vertices[1:] - base).T
    jacobian = math.sqrt(abs(np.linalg.det(edges.T @ edges)))
    if jacobian == 0.0:
        raise ParameterError("degenerate facet")
    rule = simplex_rule(facet_vertices.shape[0] - 1, degree)
    return rule.points @ edges.T + base, rule.weights * jacobian


def _poly_degree(f):
    if isinstance(f, MultiPoly):
        return f.degree
    if isinstance(f, (list, tuple)) and f and all(isinstance(p, MultiPoly) for p in f):
        return max(p.degree for p in f)
    return None


def _default_degree(f, fallback=None):
    degree = _poly_degree(f)
    if degree is not None:
        return degree
    return get_config()["quad_degree"] if fallback is None else fallback


def _evaluate(f, points):
    if isinstance(f, (list, tuple)):
        return np.column_stack([_evaluate(c, points) for c in f])
    return np.asarray(f(points), dtype=float)


def integrate(f, s, rule=None, degree=None, exact=False):
    """Integral of a polynomial, field, or callable (scalar or vector valued) over a simplex."""
    if rule is None:
        rule = simplex_rule(s.dim, _default_degree(f) if degree is None else degree)
    if exact:
        needed = _default_degree(f, fallback=math.inf)
        if needed > rule.exactness_degree:
            raise QuadratureError(f"Rule of degree {rule.exactness_degree} is too weak for degree {needed}")
    phi = affine_from_reference(s)
    values = _evaluate(f, phi(rule.points))
    return np.tensordot(rule.weights, values, axes=(0, 0)) * abs(phi.det)


def integrate_facet(f, facet_vertices, degree=None):
    points, weights = facet_quadrature(facet_vertices, _default_degree(f) if degree is None else degree)
    return np.tensordot(weights, _evaluate(f, points), axes=(0, 0))


@functools.lru_cache(maxsize=32)
def _reference_lattice(dim, n):
    grids = np.meshgrid(*[np.arange(n + 1)] * dim, indexing="ij")
    counts = np.column_stack([g.ravel() for g in grids])
    counts = counts[counts.sum(axis=1) <= n]
    points = counts / n
    points.setflags(write=False)
    return points


def lattice_points(s, n):
    """Barycentric lattice with n subdivisions per edge; contains all vertices."""
    return affine_from_reference(s)(_reference_lattice(s.dim, int(n)))


#####################################
# Fields with closed-form derivatives
#####################################

class SmoothField:
    """Scalar or vector field on R^dim whose partial derivatives are known in closed form.

    Scalar fields wrap partial(beta, points) -> (n,) values; vector fields hold scalar components.
    order is the highest available derivative order (None = any order).
    """

    def __init__(self, dim, partial=None, order=None, name="", components=None):
        self.dim = int(dim)
        self.name = name
        if components is not None:
            components = tuple(components)
            if any(c.is_vector or c.dim != self.dim for c in components):
                raise ParameterError("Vector components must be scalar fields of the same dimension")
            orders = [c.order for c in components if c.order is not None]
            self.order = min(orders) if orders else None
        else:
            if partial is None:
                raise ParameterError("A scalar field needs a partial-derivative evaluator")
            self.order = order
        self._partial = partial
        self.components = components

    @property
    def is_vector(self):
        return self.components is not None

    @property
    def n_components(self):
        return len(self.components) if self.is_vector else 1

    def derivative(self, beta, points):
        beta = tuple(int(b) for b in beta)
        if self.order is not None and sum(beta) > self.order:
            raise QuadratureError(f"Field {self.name!r} has derivatives only up to order {self.order}")
        points = np.atleast_2d(np.asarray(points, dtype=float))
        if self.is_vector:
            return np.column_stack([c.derivative(beta, points) for c in self.components])
        return np.asarray(self._partial(beta, points), dtype=float) * np.ones(points.shape[0])

    def __call__(self, points):
        return self.derivative((0,) * self.dim, points)

    def gradient(self, points):
        return np.stack([self.derivative(_unit(self.dim, i), points) for i in range(self.dim)], axis=-1)

    def divergence(self, points):
        if not self.is_vector or self.n_components != self.dim:
            raise ParameterError("Divergence needs a vector field with dim components")
        return sum(c.derivative(_unit(self.dim, i), points) for i, c in enumerate(self.components))

    def component(self, i):
        return self.components[i] if self.is_vector else self

    def __sub__(self, other):
        return _combine(self, as_field(other, self.dim), -1.0)

    def __add__(self, other):
        return _combine(self, as_field(other, self.dim), 1.0)

    def scaled(self, factor):
        if self.is_vector:
            return SmoothField.vector([c.scaled(factor) for c in self.components], name=self.name)
        return SmoothField(self.dim, lambda beta, x: factor * self._partial(beta, x), self.order, self.name)

    def compose_affine(self, affine):
        """x -> f(A x + b); scalar fields of any order, componentwise for vector fields."""
        if self.is_vector:
            return SmoothField.vector([c.compose_affine(affine) for c in self.components], name=self.name)
        matrix = affine.matrix

        def partial(beta, y):
            x = affine(y)
            order = sum(beta)
            if order == 0:
                return self._partial(beta, x)
            targets = [i for i, b in enumerate(beta) for _ in range(b)]
            weights = {}
            for source in itertools.product(range(self.dim), repeat=order):
                gamma = tuple(source.count(j) for j in range(self.dim))
                factor = math.prod(matrix[j, i] for j, i in zip(source, targets))
                weights[gamma] = weights.get(gamma, 0.0) + factor
            return sum(w * self._partial(gamma, x) for gamma, w in weights.items() if w != 0.0)

        return SmoothField(matrix.shape[1], partial, self.order, self.name)

    @classmethod
    def from_poly(cls, p, name=""):
        cache = {}

        def partial(beta, x):
            if beta not in cache:
                cache[beta] = p.derivative(beta)
            return cache[beta](x)

        return cls(p.dim, partial, None, name or "poly")

    @classmethod
    def vector(cls, components, name=""):
        components = [as_field(c) for c in components]
        return cls(components[0].dim, components=components, name=name)


def _unit(dim, i):
    return tuple(int(i == j) for j in range(dim))


def as_field(f, dim=None):
    if isinstance(f, SmoothField):
        return f
    if isinstance(f, MultiPoly):
        return SmoothField.from_poly(f)
    if isinstance(f, (list, tuple)):
        return SmoothField.vector([as_field(c, dim) for c in f])
    if dim is not None and np.isscalar(f):
        return SmoothField.from_poly(MultiPoly.constant(dim, f))
    raise ParameterError(f"Cannot interpret {type(f).__name__} as a field")


def _combine(a, b, sign):
    if a.is_vector != b.is_vector or a.n_components != b.n_components:
        raise ParameterError("Field shapes do not match")
    if a.is_vector:
        return SmoothField.vector([_combine(x, y, sign) for x, y in zip(a.components, b.components)], name=a.name)
    orders = [o for o in (a.order, b.order) if o is not None]
    return SmoothField(a.dim, lambda beta, x: a._partial(beta, x) + sign * b._partial(beta, x),
                       min(orders) if orders else None, a.name)


def finite_difference_check(field, points, step=1e-5):
    """Max relative mismatch between registered first partials and central differences."""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    worst = 0.0
    for i in range(field.dim):
        shift = np.zeros(field.dim)
        shift[i] = step
        numeric = (field(points + shift) - field(points - shift)) / (2.0 * step)
        exact = field.derivative(_unit(field.dim, i), points)
        scale = max(np.abs(exact).max(), 1.0)
        worst = max(worst, float(np.abs(numeric - exact).max() / scale))
    return worst


#####################################
# Sobolev seminorms
#####################################

def _is_inf(p):
    return p in (math.inf, "inf", "Inf", "infinity")


def sobolev_seminorm(f, s, m, p=2, degree=None, n=None):
    """|f|_{W^{m,p}(s)} for p in {2, inf}; the multi-index sum counts each beta once."""
    field = as_field(f, s.dim)
    betas = multi_indices(s.dim, m)
    if field.order is not None and m > field.order:
        raise QuadratureError(f"Field {field.name!r} has derivatives only up to order {field.order}")

    if _is_inf(p):
        points = lattice_points(s, get_config()["linf_lattice"] if n is None else n)
        return float(max(np.abs(field.derivative(beta, points)).max() for beta in betas))
    if p != 2:
        raise ParameterError("Only p = 2 and p = inf are supported")

    if degree is None:
        poly_degree = _poly_degree(f)
        degree = 2 * max(poly_degree - m, 0) if poly_degree is not None else get_config()["quad_degree"]
    rule = simplex_rule(s.dim, degree)
    phi = affine_from_reference(s)
    points = phi(rule.points)
    total = 0.0
    for beta in betas:
        values = field.derivative(beta, points)
        squared = values**2 if values.ndim == 1 else (values**2).sum(axis=1)
        total += float(rule.weights @ squared)
    return math.sqrt(total * abs(phi.det))


def lattice_doubling_check(f, s, m, n=None):
    """Relative change of the W^{m,inf} seminorm when the sampling lattice is doubled."""
    n = get_config()["linf_lattice"] if n is None else n
    coarse = sobolev_seminorm(f, s, m, math.inf, n=n)
    fine = sobolev_seminorm(f, s, m, math.inf, n=2 * n)
    if fine == 0.0:
        return 0.0
    return abs(fine - coarse) / fine


#####################################
# Best polynomial approximation
#####################################

@dataclass(frozen=True)
class BestApproximation:
    eta: MultiPoly
    error: float
    condition: float


def _solve_normal(gram, rhs):
    condition = float(np.linalg.cond(gram)) if gram.size else 1.0
    if not np.isfinite(condition):
        raise UnisolvenceError("rank-deficient normal system")
    if condition > get_config()["condition_warn"]:
        logger.warning(f"Ill-conditioned normal system (condition number {condition:.3e})")
    try:
        return lu_solve(lu_factor(gram, check_finite=True), rhs), condition
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise UnisolvenceError("rank-deficient normal system") from exc


def _least_squares(field, basis, s, k, degree):
    rule = simplex_rule(s.dim, degree)
    phi = affine_from_reference(s)
    points = phi(rule.points)
    weights = rule.weights * abs(phi.det)
    gram = np.zeros((len(basis), len(basis)))
    rhs = np.zeros(len(basis))
    for beta in multi_indices(s.dim, k):
        q = np.array([b.derivative(beta)(points) for b in basis])
        gram += (q * weights) @ q.T
        rhs += (q * weights) @ field.derivative(beta, points)
    coefficients, condition = _solve_normal(gram, rhs)
    return sum((c * b for c, b in zip(coefficients, basis)), MultiPoly(s.dim)), condition


def _minimax(field, basis, s, k, n):
    points = lattice_points(s, n)
    rows, targets = [], []
    for beta in multi_indices(s.dim, k):
        rows.append(np.array([b.derivative(beta)(points) for b in basis]).T)
        targets.append(field.derivative(beta, points))
    design = np.vstack(rows)
    target = np.concatenate(targets)
    ones = np.ones((len(target), 1))
    a_ub = np.vstack([np.hstack([design, -ones]), np.hstack([-design, -ones])])
    b_ub = np.concatenate([target, -target])
    cost = np.zeros(len(basis) + 1)
    cost[-1] = 1.0
    bounds = [(None, None)] * len(basis) + [(0.0, None)]
    result = linprog(cost, A_ub=a_ub, b_ub=b_ub, bounds=bounds, method="highs")
    if not result.success:
        raise UnisolvenceError(f"Minimax problem failed: {result.message}")
    return sum((c * b for c, b in zip(result.x[:-1], basis)), MultiPoly(s.dim)), float(np.linalg.cond(design))


def best_poly_approx(f, s, degree, k=0, p=2, quad_degree=None, n=16):
    """eta in P^degree minimizing |f - eta|_{W^{k,p}(s)}.

    Monomials of degree < k lie in the kernel of the seminorm; that part of eta is the
    L2 projection of the remainder, so that eta reproduces f whenever f is in P^degree.
    """
    if degree < 0 or k < 0:
        raise ParameterError("Invalid polynomial degree or seminorm order")
    field = as_field(f, s.dim)
    if quad_degree is None:
        poly_degree = _poly_degree(f)
        quad_degree = max(2 * degree, poly_degree + degree) if poly_degree is not None else get_config()["quad_degree"]

    eta, condition = MultiPoly(s.dim), 1.0
    high = scaled_monomial_basis(s, degree, min_degree=k)
    if high:
        if _is_inf(p):
            eta, condition = _minimax(field, high, s, k, n)
        elif p == 2:
            eta, condition = _least_squares(field, high, s, k, quad_degree)
        else:
            raise ParameterError("Only p = 2 and p = inf are supported")

    low = scaled_monomial_basis(s, min(k - 1, degree))
    if k > 0 and low:
        correction, _ = _least_squares(field - eta, low, s, 0, quad_degree)
        eta = eta + correction

    error = sobolev_seminorm(field - eta, s, k, p, degree=quad_degree, n=n if _is_inf(p) else None)
    return BestApproximation(eta, error, condition)


def verfurth_bound(d, k, m):
    """Upper bound of the Bramble-Hilbert constant C(d, k, m) on convex domains, p = 2."""
    if d < 1 or k < 0 or m < k + 1:
        raise ParameterError("Invalid indices: need d >= 1 and 0 <= k <= m - 1")
    return (math.pi ** (k - m) * math.sqrt(comb(d + k - 1, k, exact=True)) * math.sqrt(math.factorial(m - k))
            / math.factorial((m - k) // d) ** (d / 2))


def l2_inner(f, g, s, degree=None):
    return float(integrate(lambda x: _evaluate(as_field(f, s.dim), x) * _evaluate(as_field(g, s.dim), x), s,
                           degree=get_config()["quad_degree"] if degree is None else degree))