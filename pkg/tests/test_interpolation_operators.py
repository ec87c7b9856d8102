# File for internal use (unit tests)

import logging
import math

import numpy as np
import pytest

from anisofem.errors import ParameterError, UndefinedRatioError
from anisofem.fields import get_field
from anisofem.interpolation_operators import (
    LOWER_BOUND,
    FacetMean,
    PointEvaluation,
    build_crouzeix_raviart,
    build_element,
    build_lagrange,
    certify_linf_sampling,
    commuting_check,
    error_ratio,
    local_interpolate,
    mesh_error_ratios,
    optimality_check,
    physical_interpolate,
    scaled_argument_check,
)
from anisofem.mesh_engine import strip_mesh
from anisofem.polynomials_quadrature import MultiPoly, SmoothField, lattice_points
from anisofem.simplex_geometry import AffineMap, Simplex, random_simplex, to_standard_position


@pytest.fixture
def quadratic():
    return {
        2: MultiPoly(2, {(2, 0): 1.0, (1, 1): -0.5, (0, 1): 2.0, (0, 0): 0.3}),
        3: MultiPoly(3, {(0, 2, 0): 1.0, (1, 0, 1): 0.75, (0, 0, 1): -1.0, (0, 0, 0): 0.1}),
    }


def test_functionals(unit_triangle):
    v = MultiPoly(2, {(1, 0): 1.0, (0, 1): 2.0})
    assert PointEvaluation([0.5, 0.25])(v) == pytest.approx(1.0)
    mean = FacetMean([[1.0, 0.0], [0.0, 1.0]])
    assert mean(v) == pytest.approx(1.5)
    mapped = mean.mapped(AffineMap(2.0 * np.eye(2), np.zeros(2)))
    assert mapped(v) == pytest.approx(3.0)


def test_p1_shape_functions_are_barycentric(rng):
    e = build_lagrange(2, 1)
    points = rng.uniform(0.0, 0.5, size=(10, 2))
    x, y = points[:, 0], points[:, 1]
    for theta, expected in zip(e.shape_functions, (1.0 - x - y, x, y)):
        np.testing.assert_allclose(theta(points), expected, atol=1e-14)


@pytest.mark.parametrize("dim,k,n_dofs", [(2, 1, 3), (2, 2, 6), (2, 3, 10), (3, 1, 4), (3, 2, 10), (3, 3, 20)])
def test_lagrange_duality(dim, k, n_dofs):
    e = build_lagrange(dim, k)
    assert e.n_dofs == n_dofs
    assert e.duality_residual() < 1e-10


def test_crouzeix_raviart_shape_functions(rng):
    e = build_crouzeix_raviart(2)
    assert e.n_dofs == 3
    assert e.duality_residual() < 1e-12
    points = rng.uniform(0.0, 0.5, size=(10, 2))
    lam0 = 1.0 - points.sum(axis=1)
    np.testing.assert_allclose(e.shape_functions[0](points), 1.0 - 2.0 * lam0, atol=1e-12)
    assert build_crouzeix_raviart(3).duality_residual() < 1e-12


def test_build_element(caplog):
    assert build_element("p2", 2).name == "P2"
    assert build_element("cr", 3).n_dofs == 4
    with pytest.raises(ParameterError):
        build_element("Q1", 2)
    with pytest.raises(ParameterError):
        build_lagrange(2, 0)
    with pytest.raises(ParameterError):
        build_crouzeix_raviart(1)
    with caplog.at_level(logging.WARNING):
        build_lagrange(2, 5)
    assert "Lebesgue" in caplog.text


@pytest.mark.parametrize("dim", [2, 3])
def test_interpolation_reproduces_the_shape_space(rng, quadratic, dim):
    s = random_simplex(rng, dim, max_aspect=100.0)
    points = lattice_points(s, 5)
    f = quadratic[dim]
    interpolant = local_interpolate(build_lagrange(dim, 2), f, s)
    np.testing.assert_allclose(interpolant(points), f(points), atol=1e-9)
    np.testing.assert_allclose(interpolant.as_field()(points), f(points), atol=1e-9)

    linear = MultiPoly(dim, {(1,) + (0,) * (dim - 1): 2.0, (0,) * dim: -1.0})
    for element in (build_lagrange(dim, 1), build_crouzeix_raviart(dim)):
        np.testing.assert_allclose(local_interpolate(element, linear, s)(points), linear(points), atol=1e-9)
        np.testing.assert_allclose(physical_interpolate(element, linear, s)(points), linear(points), atol=1e-9)


def test_interpolation_of_callables(unit_triangle):
    s = Simplex(unit_triangle)
    interpolant = local_interpolate(build_lagrange(2, 1), lambda x: x[:, 0] ** 2, s)
    np.testing.assert_allclose(interpolant.coefficients, [0.0, 1.0, 0.0])
    assert interpolant(np.array([[0.5, 0.0]]))[0] == pytest.approx(0.5)


@pytest.mark.parametrize("name", ["P1", "P2", "CR"])
@pytest.mark.parametrize("dim", [2, 3])
def test_interpolation_commutes_with_affine_steps(rng, name, dim):
    e = build_element(name, dim)
    f = get_field("sin-product", dim)
    for _ in range(5):
        sp = to_standard_position(random_simplex(rng, dim, max_aspect=100.0))
        residuals = commuting_check(e, f, sp, rng, n_points=50)
        assert residuals["residual"] < 1e-8, residuals


def test_remark_interpolant_and_optimality():
    s, eps = 0.25, 1.5
    report = optimality_check(s, eps)
    assert report.interpolant_residual < 1e-12
    assert report.I_T_closed_form == pytest.approx((s ** (2 - eps) + s**eps) / 8)
    assert report.I_T_y == pytest.approx(report.I_T_closed_form, rel=1e-9)
    assert report.I_T >= report.I_T_closed_form * (1.0 - 1e-9)
    assert report.H_T == pytest.approx(report.H_T_closed_form, rel=1e-9)
    assert report.lower_bound == LOWER_BOUND
    assert report.passed
    with pytest.raises(ParameterError):
        optimality_check(0.25, 2.0)


def test_optimality_interpolates_the_registered_field(monkeypatch):
    import anisofem.interpolation_operators as operators
    from anisofem.fields import remark_phi

    s, eps = 0.25, 1.5
    baseline = optimality_check(s, eps, n=16)
    monkeypatch.setattr(operators, "remark_phi", lambda: remark_phi().scaled(2.0))
    doubled = optimality_check(s, eps, n=16)
    # the interpolant doubles, the normalized errors do not move
    assert doubled.interpolant_residual == pytest.approx(s)
    assert doubled.I_T_y == pytest.approx(baseline.I_T_y, rel=1e-9)
    assert doubled.I_T == pytest.approx(baseline.I_T, rel=1e-9)


@pytest.mark.parametrize("eps", [1.25, 1.75])
def test_optimality_over_a_family(eps):
    for s in (2.0**-3, 2.0**-6, 2.0**-9):
        report = optimality_check(s, eps, n=16)
        assert report.passed, report
        assert report.ratio_closed_form >= LOWER_BOUND


def test_scaled_argument(rng):
    s = random_simplex(rng, 2, max_aspect=10.0)
    for m in (0, 1):
        lhs, rhs = scaled_argument_check(build_lagrange(2, 1), get_field("sin-product", 2), s, 0.1, m)
        assert lhs == pytest.approx(rhs, rel=1e-9)
    with pytest.raises(ParameterError):
        scaled_argument_check(build_lagrange(2, 1), get_field("sin-product", 2), s, 0.0, 1)


def test_error_ratio_vanishes_on_polynomials(rng, quadratic):
    s = random_simplex(rng, 3, max_aspect=10.0)
    result = error_ratio(build_lagrange(3, 2), quadratic[3], s, 1, 2, 2)
    assert result.error < 1e-9
    assert result.seminorm == 0.0
    assert result.ratio == 0.0


def test_error_ratio_undefined(unit_triangle):
    # inconsistent field: nonlinear values but vanishing second derivatives
    field = SmoothField(2, lambda beta, x: np.sin(x[:, 0]) if sum(beta) == 0 else np.zeros(len(x)))
    with pytest.raises(UndefinedRatioError):
        error_ratio(build_lagrange(2, 1), field, Simplex(unit_triangle), 0, 2, 1)


def test_error_ratio_orders(unit_triangle):
    with pytest.raises(ParameterError):
        error_ratio(build_lagrange(2, 1), get_field("sin-product", 2), Simplex(unit_triangle), 2, 2, 0)
    with pytest.raises(ParameterError):
        error_ratio(build_lagrange(2, 1), get_field("sin-product", 2), Simplex(unit_triangle), 1, 2, 2)


@pytest.mark.parametrize("p", [2, math.inf])
def test_error_ratio_is_bounded_on_anisotropic_triangles(rng, p):
    f = get_field("sin-product", 2)
    for _ in range(20):
        s = random_simplex(rng, 2, max_aspect=1e3)
        result = error_ratio(build_lagrange(2, 1), f, s, 1, p, 1, n=16)
        assert 0.0 <= result.ratio < 10.0, result


def test_certify_linf_sampling(unit_triangle):
    assert certify_linf_sampling(build_lagrange(2, 1), get_field("sin-product", 2), Simplex(unit_triangle), 1, 1,
                                 n=32, tol=0.05)


@pytest.mark.parametrize("name", ["P1", "P2", "CR"])
def test_mesh_error_ratios_match_cellwise_evaluation(name):
    mesh = strip_mesh(0.5, 2.0)
    e = build_element(name, 2)
    f = get_field("exp-plane", 2)
    batched = mesh_error_ratios(e, f, mesh, 1, 2, 1, chunk_size=5)
    cellwise = [error_ratio(e, f, cell, 1, 2, 1) for cell in mesh.simplices()]
    np.testing.assert_allclose(batched.error, [r.error for r in cellwise], rtol=1e-8)
    np.testing.assert_allclose(batched.seminorm, [r.seminorm for r in cellwise], rtol=1e-10)
    np.testing.assert_allclose(batched.ratio, [r.ratio for r in cellwise], rtol=1e-8)
    assert batched.total_error() == pytest.approx(math.sqrt(sum(r.error**2 for r in cellwise)))
    assert batched.max_ratio() == pytest.approx(max(r.ratio for r in cellwise))


def test_mesh_error_ratios_sup_norm():
    mesh = strip_mesh(0.5, 2.0)
    e = build_lagrange(2, 1)
    f = get_field("sin-product", 2)
    batched = mesh_error_ratios(e, f, mesh, 1, math.inf, 1, n=8)
    cellwise = [error_ratio(e, f, cell, 1, math.inf, 1, n=8) for cell in mesh.simplices()]
    np.testing.assert_allclose(batched.error, [r.error for r in cellwise], rtol=1e-8, atol=1e-14)
    assert batched.total_error() == pytest.approx(max(r.error for r in cellwise))


def test_mesh_error_ratios_flags_undefined_cells(caplog):
    field = SmoothField(2, lambda beta, x: np.sin(x[:, 0]) if sum(beta) == 0 else np.zeros(len(x)))
    result = mesh_error_ratios(build_lagrange(2, 1), field, strip_mesh(0.5, 1.0), 0, 2, 1)
    assert np.isnan(result.ratio).all()
    assert math.isnan(result.max_ratio())
    assert "ratio undefined" in caplog.text


def test_mesh_error_ratios_rejects_mismatches():
    mesh = strip_mesh(0.5, 1.0)
    with pytest.raises(ParameterError):
        mesh_error_ratios(build_lagrange(3, 1), get_field("sin-product", 3), mesh, 1, 2, 1)
    with pytest.raises(ParameterError):
        mesh_error_ratios(build_lagrange(2, 1), get_field("vec-x2", 2), mesh, 1, 2, 1)
    with pytest.raises(ParameterError):
        mesh_error_ratios(build_lagrange(2, 1), get_field("sin-product", 2), mesh, 1, 1, 1)
