# File for internal use (unit tests)

import math

import numpy as np
import pytest

from anisofem.errors import ParameterError, QuadratureError
from anisofem.fields import get_field
from anisofem.polynomials_quadrature import (
    MultiPoly,
    SmoothField,
    best_poly_approx,
    facet_quadrature,
    integrate,
    l2_inner,
    lattice_doubling_check,
    lattice_points,
    multi_indices,
    poly_space_basis,
    poly_space_dim,
    scaled_monomial_basis,
    simplex_rule,
    sobolev_seminorm,
    verfurth_bound,
)
from anisofem.simplex_geometry import Simplex, diameter, random_simplex


def x(dim, i=0):
    return MultiPoly.coordinate(dim, i)


def test_multi_indices():
    assert multi_indices(2, 2) == ((2, 0), (1, 1), (0, 2))
    assert multi_indices(3, -1) == ()
    assert poly_space_dim(3, 2) == 10
    assert len(poly_space_basis(3, 2)) == 10
    with pytest.raises(ParameterError):
        poly_space_basis(2, -1)


def test_multipoly_algebra():
    a, b = x(2, 0), x(2, 1)
    square = (a + b) ** 2
    assert square.coeffs == {(2, 0): 1.0, (1, 1): 2.0, (0, 2): 1.0}
    assert (square - a * a - 2 * a * b - b * b).is_zero()
    assert square.degree == 2
    assert square.derivative((1, 0)).coeffs == {(1, 0): 2.0, (0, 1): 2.0}
    assert (3.0 - a).coeffs == {(0, 0): 3.0, (1, 0): -1.0}
    assert (square / 2)(np.array([1.0, 1.0])) == pytest.approx(2.0)
    with pytest.raises(ParameterError):
        a + x(3, 0)
    with pytest.raises(ParameterError):
        MultiPoly(2, {(1,): 1.0})


def test_compose_affine_is_exact(rng):
    p = MultiPoly(3, {(2, 1, 0): 1.5, (0, 0, 3): -2.0, (0, 0, 0): 0.25})
    matrix, offset = rng.standard_normal((3, 3)), rng.standard_normal(3)
    q = p.compose_affine(matrix, offset)
    points = rng.standard_normal((10, 3))
    np.testing.assert_allclose(q(points), p(points @ matrix.T + offset), rtol=1e-10, atol=1e-10)
    assert q.degree == 3


@pytest.mark.parametrize("dim", [1, 2, 3])
def test_quadrature_exactness(dim):
    for degree in range(9):
        rule = simplex_rule(dim, degree)
        assert rule.weights.sum() == pytest.approx(1.0 / math.factorial(dim))
        assert np.all(rule.barycentric >= -1e-14)
        for beta in multi_indices(dim, degree):
            exact = math.prod(math.factorial(b) for b in beta) / math.factorial(degree + dim)
            value = rule.weights @ np.prod(rule.points ** np.array(beta), axis=1)
            assert value == pytest.approx(exact, rel=1e-12, abs=1e-15), (dim, beta)


def test_quadrature_rule_families():
    for dim in (2, 3):
        rule = simplex_rule(dim, 2)
        assert len(rule.weights) == dim + 1
        # symmetric: every barycentric coordinate takes the same values
        spread = np.sort(rule.barycentric, axis=0)
        np.testing.assert_allclose(spread, spread[:, :1].repeat(dim + 1, axis=1))
    for dim, degree in [(1, 2), (2, 3), (2, 6), (3, 5)]:
        rule = simplex_rule(dim, degree)
        assert len(rule.weights) == ((degree + 2) // 2) ** dim
        assert np.all(rule.barycentric > 0.0)
    assert len(simplex_rule(3, 1).weights) == 1


def test_quadrature_rule_is_immutable():
    rule = simplex_rule(2, 5)
    with pytest.raises(ValueError):
        rule.weights[0] = 1.0
    with pytest.raises(ParameterError):
        simplex_rule(4, 2)


def test_integrate(unit_triangle, rng):
    s = Simplex(unit_triangle)
    assert integrate(x(2), s) == pytest.approx(1.0 / 6.0)
    assert integrate(x(2) * x(2, 1), s) == pytest.approx(1.0 / 24.0)
    np.testing.assert_allclose(integrate([x(2), x(2, 1)], s), [1.0 / 6.0, 1.0 / 6.0])
    with pytest.raises(QuadratureError):
        integrate(x(2) ** 4, s, degree=2, exact=True)

    # a constant integrates to the measure on any simplex
    t = random_simplex(rng, 3, max_aspect=100.0)
    assert integrate(MultiPoly.constant(3, 1.0), t) == pytest.approx(abs(t.signed_volume))


def test_facet_quadrature():
    points, weights = facet_quadrature([[0.0, 0.0, 0.0], [2.0, 0.0, 0.0], [0.0, 3.0, 0.0]], 4)
    assert weights.sum() == pytest.approx(3.0)
    assert np.allclose(points[:, 2], 0.0)
    points, weights = facet_quadrature([[1.0, 0.0], [0.0, 1.0]], 3)
    assert weights.sum() == pytest.approx(math.sqrt(2.0))
    assert weights @ points[:, 0] == pytest.approx(math.sqrt(2.0) / 2.0)


def test_lattice_points(unit_triangle):
    points = lattice_points(Simplex(unit_triangle), 2)
    assert len(points) == 6
    assert {tuple(p) for p in points} >= {(0.0, 0.0), (1.0, 0.0), (0.0, 1.0)}


def test_sobolev_seminorm(unit_triangle):
    s = Simplex(unit_triangle)
    f = x(2) ** 2
    assert sobolev_seminorm(f, s, 1) == pytest.approx(math.sqrt(1.0 / 3.0))
    assert sobolev_seminorm(f, s, 2) == pytest.approx(math.sqrt(2.0))
    assert sobolev_seminorm(f, s, 3) == pytest.approx(0.0)
    assert sobolev_seminorm(f, s, 1, p=math.inf) == pytest.approx(2.0)
    assert sobolev_seminorm(f, s, 1, p="inf") == pytest.approx(2.0)
    with pytest.raises(ParameterError):
        sobolev_seminorm(f, s, 1, p=1)


def test_seminorm_of_limited_field():
    field = SmoothField(2, lambda beta, pts: np.zeros(len(pts)), order=1, name="c1")
    with pytest.raises(QuadratureError):
        sobolev_seminorm(field, Simplex([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]), 2)


def test_lattice_doubling_check(unit_tetrahedron):
    s = Simplex(unit_tetrahedron)
    assert lattice_doubling_check(x(3) ** 2, s, 1, n=8) == pytest.approx(0.0)
    assert lattice_doubling_check(get_field("sin-product", 3), s, 1, n=16) < 0.05


def test_scaled_monomial_basis(rng):
    s = random_simplex(rng, 2, max_aspect=1e4)
    basis = scaled_monomial_basis(s, 2)
    assert len(basis) == 6
    values = np.array([b(s.vertices) for b in basis])
    assert np.abs(values).max() <= 1.0
    anisotropic = scaled_monomial_basis(s, 1, min_degree=1, anisotropic=True)
    assert len(anisotropic) == 2
    spans = [np.ptp(b(s.vertices)) for b in anisotropic]
    np.testing.assert_allclose(spans, 1.0)


def test_best_approximation_reproduces_polynomials(rng):
    s = random_simplex(rng, 3, max_aspect=10.0)
    f = MultiPoly(3, {(1, 1, 0): 2.0, (0, 0, 2): -1.0, (1, 0, 0): 0.5, (0, 0, 0): 3.0})
    for k in (0, 1, 2):
        best = best_poly_approx(f, s, 2, k=k)
        assert best.error == pytest.approx(0.0, abs=1e-9)
        points = lattice_points(s, 3)
        np.testing.assert_allclose(best.eta(points), f(points), atol=1e-8)


def test_best_approximation_minimax(unit_triangle):
    best = best_poly_approx(x(2), Simplex(unit_triangle), 0, k=0, p=math.inf, n=8)
    assert best.error == pytest.approx(0.5)
    assert best.eta(np.array([0.3, 0.3])) == pytest.approx(0.5)


@pytest.mark.parametrize("dim", [2, 3])
def test_best_approximation_within_bramble_hilbert_bound(rng, dim):
    f = get_field("sin-product", dim)
    for _ in range(5):
        s = random_simplex(rng, dim, max_aspect=10.0)
        best = best_poly_approx(f, s, 1, k=1)
        bound = verfurth_bound(dim, 1, 2) * diameter(s) * sobolev_seminorm(f, s, 2)
        assert best.error <= bound * (1.0 + 1e-9), (best.error, bound)


def test_verfurth_bound():
    assert verfurth_bound(3, 1, 2) == pytest.approx(math.sqrt(3.0) / math.pi)
    assert verfurth_bound(2, 0, 1) == pytest.approx(1.0 / math.pi)
    with pytest.raises(ParameterError):
        verfurth_bound(2, 2, 2)


def test_l2_inner(unit_triangle):
    s = Simplex(unit_triangle)
    assert l2_inner(x(2), 1.0, s) == pytest.approx(1.0 / 6.0)
    assert l2_inner(x(2), x(2, 1), s) == pytest.approx(1.0 / 24.0)
