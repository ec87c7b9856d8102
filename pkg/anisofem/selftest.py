# Copyright (c) anisofem contributors under Apache License 2.0 (see LICENSE.txt).
# Anisotropic interpolation error estimates on simplices
#
# Invariant suites behind `anisofem selftest`. Every suite draws from its own seeded generator,
# so the JSON summary depends only on (seed, samples).

import logging
import math
import os
import time

import numpy as np

from .config import get_config
from .errors import ParameterError
from .interpolation_operators import (
    build_crouzeix_raviart,
    build_lagrange,
    commuting_check,
    local_interpolate,
    optimality_check,
    scaled_argument_check,
)
from .mesh_engine import FamilySpec, Mesh, conformity_check, format_mesh, generate_family, parse_mesh
from .polynomials_quadrature import (
    MultiPoly,
    best_poly_approx,
    integrate,
    multi_indices_upto,
    simplex_rule,
    sobolev_seminorm,
    verfurth_bound,
)
from .raviart_thomas import (
    PiolaMap,
    build_rt_space,
    component_stability,
    diagonal_piola_residual,
    interior_basis_crosscheck,
    piola_identities,
    rt_commuting_check,
    rt_dimension,
    rt_interpolate,
)
from .shape_parameters import equivalence_check, mesh_H, param_H_T
from .simplex_geometry import (
    SimplexType,
    affine_from_reference,
    check_parameters,
    decompose_affine,
    diameter,
    edge_lengths,
    matrix_norm_bounds,
    random_points,
    random_simplex,
    recompose,
    reference_simplex,
    to_standard_position,
)

logger = logging.getLogger(__name__)

FAULT_ENV = "ANISOFEM_INJECT_FAULT"


def random_poly(rng, dim, degree):
    return MultiPoly(dim, {beta: rng.standard_normal() for beta in multi_indices_upto(dim, degree)})


def _random_rt_field(rng, space):
    coefficients = rng.standard_normal(len(space))
    return [sum((c * u[i] for c, u in zip(coefficients, space.basis)), MultiPoly(space.dim)) for i in range(space.dim)]


def _moderate_simplices(rng, n, dims=(2, 3), max_aspect=1e2):
    return [random_simplex(rng, dims[i % len(dims)], max_aspect=max_aspect) for i in range(n)]


#####################################
# Suites: each returns (checked, worst, passed)
#####################################

def suite_quadrature_exactness(rng, samples):
    worst = 0.0
    checked = 0
    for dim in (1, 2, 3):
        for degree in range(0, 11):
            rule = simplex_rule(dim, degree)
            for beta in multi_indices_upto(dim, degree):
                exact = math.prod(math.factorial(b) for b in beta) / math.factorial(sum(beta) + dim)
                approx = float(rule.weights @ np.prod(rule.points ** np.asarray(beta), axis=1))
                worst = max(worst, abs(approx - exact) / exact)
                checked += 1
    return checked, worst, worst < 1e-12


def suite_rt_dimension(rng, samples):
    mismatches = 0
    for dim in (2, 3):
        for k in range(4):
            mismatches += len(build_rt_space(dim, k)) != rt_dimension(dim, k)
    return 8, float(mismatches), mismatches == 0


def suite_rt_projection(rng, samples):
    worst = 0.0
    n = min(samples, 10)
    for dim in (2, 3):
        for k in (0, 1):
            space = build_rt_space(dim, k)
            for T in _moderate_simplices(rng, n, dims=(dim,)):
                field = _random_rt_field(rng, space)
                # a field of RT^k(That) pushed to T stays in RT^k(T)
                pushed = PiolaMap(affine_from_reference(T)).push(field)
                interpolant = rt_interpolate(space, pushed, T)
                points = random_points(T, 50, rng)
                expected = pushed(points)
                worst = max(worst, float(np.abs(interpolant(points) - expected).max() / max(1.0, np.abs(expected).max())))
    return 4 * n, worst, worst < 1e-10


def suite_piola_identities(rng, samples):
    worst = 0.0
    n = min(samples, 25)
    for i in range(n):
        T = random_simplex(rng, 2 + i % 2, max_aspect=1e2)
        piola = PiolaMap(affine_from_reference(T))
        v_hat = [random_poly(rng, T.dim, 2) for _ in range(T.dim)]
        phi_hat = random_poly(rng, T.dim, 1)
        worst = max(worst, max(piola_identities(piola, v_hat, phi_hat, degree=4).values()))
    return n, worst, worst < 1e-9


def suite_piola_commutation(rng, samples):
    worst = 0.0
    n = min(samples, 8)
    for dim in (2, 3):
        for k in (0, 1):
            space = build_rt_space(dim, k)
            for T in _moderate_simplices(rng, n, dims=(dim,)):
                v_hat = [random_poly(rng, dim, 2) for _ in range(dim)]
                worst = max(worst, rt_commuting_check(space, v_hat, affine_from_reference(T)))
    return 4 * n, worst, worst < 1e-9


def suite_standard_position(rng, samples):
    worst = 0.0
    violations = 0
    for i in range(samples):
        s = random_simplex(rng, 2 + i % 2)
        sp = to_standard_position(s)
        labeled = s.vertices[list(sp.labels)]
        h = diameter(s)
        worst = max(worst, float(np.abs(sp.motion(labeled) - sp.simplex.vertices).max() / h))
        diag, shear = decompose_affine(sp)
        rebuilt = recompose(diag, shear, sp.simplex_type)
        worst = max(worst, float(np.abs(rebuilt.simplex.vertices - sp.simplex.vertices).max() / h))
        violations += bool(check_parameters(sp.dim, sp.alphas, sp.shear, sp.simplex_type))
    return samples, worst, worst < 1e-9 and violations == 0


def suite_condition_conformance(rng, samples):
    tol = 1e-9
    failures = 0
    for i in range(samples):
        s = random_simplex(rng, 2 + i % 2)
        sp = to_standard_position(s)
        v = sp.simplex.vertices
        lengths = [e.length for e in edge_lengths(s)]
        if sp.dim == 2:
            ok = sp.alphas[0] >= sp.alphas[1] * (1 - tol) and abs(np.linalg.norm(v[2] - v[1]) - lengths[-1]) <= tol * lengths[-1]
        else:
            a, b = (0, 2) if sp.simplex_type == SimplexType.TYPE_I else (1, 2)
            shortest = np.linalg.norm(v[a] - v[b])
            adjacent = [np.linalg.norm(v[x] - v[y]) for x in range(4) for y in range(x + 1, 4)
                        if {x, y} != {a, b} and {x, y} & {a, b}]
            ok = abs(shortest - lengths[0]) <= tol * lengths[0] and sp.alphas[0] >= max(adjacent) * (1 - tol)
        failures += not ok
    return samples, float(failures), failures == 0


def suite_matrix_norm_bounds(rng, samples):
    failures = 0
    worst = 0.0
    for i in range(samples):
        report = matrix_norm_bounds(to_standard_position(random_simplex(rng, 2 + i % 2)))
        failures += not report["passed"]
        worst = max(worst, report["condition"] / report["condition_bound"])
    return samples, worst, failures == 0


def suite_equivalence_constants(rng, samples):
    failures = 0
    worst = 0.0
    for i in range(samples):
        report = equivalence_check(random_simplex(rng, 2 + i % 2))
        failures += not report.passed or report.circumradius_passed is False
        worst = max(worst, report.ratio, 1.0 / report.ratio)
    return samples, worst, failures == 0


def suite_closed_form_ratios(rng, samples):
    worst = 0.0
    for i in range(samples):
        s = random_simplex(rng, 2 + i % 2, max_aspect=1e3)
        sp = to_standard_position(s)
        semiregularity = param_H_T(sp) / diameter(s)
        expected = 2.0 / sp.shear[1] if sp.dim == 2 else 6.0 / (sp.shear[1] * sp.shear[4])
        worst = max(worst, abs(semiregularity - expected) / expected)
    return samples, worst, worst < 1e-10


def suite_optimality(rng, samples):
    worst = 0.0
    failures = 0
    checked = 0
    for eps in (1.25, 1.5, 1.75):
        for n in range(2, 11):
            report = optimality_check(2.0**-n, eps)
            failures += not report.passed
            worst = max(worst, abs(report.I_T_y - report.I_T_closed_form) / report.I_T_closed_form,
                        report.interpolant_residual)
            checked += 1
    return checked, worst, failures == 0 and worst < 1e-8


def suite_lagrange_reproduction(rng, samples):
    worst = 0.0
    n = min(samples, 10)
    elements = [build_lagrange(2, k) for k in (1, 2, 3)] + [build_lagrange(3, k) for k in (1, 2)]
    elements += [build_crouzeix_raviart(2), build_crouzeix_raviart(3)]
    for e in elements:
        worst = max(worst, e.duality_residual())
        for T in _moderate_simplices(rng, n, dims=(e.dim,)):
            q = random_poly(rng, e.dim, e.degree)
            interpolant = local_interpolate(e, q, T)
            points = random_points(T, 50, rng)
            worst = max(worst, float(np.abs(interpolant(points) - q(points)).max() / max(1.0, np.abs(q(points)).max())))
    return n * len(elements), worst, worst < 1e-10


def suite_lagrange_commutation(rng, samples):
    worst = 0.0
    n = min(samples, 10)
    for e in (build_lagrange(2, 1), build_lagrange(2, 2), build_lagrange(3, 1), build_lagrange(3, 2)):
        for T in _moderate_simplices(rng, n, dims=(e.dim,)):
            f = random_poly(rng, e.dim, e.degree + 1)
            sp = to_standard_position(T)
            worst = max(worst, commuting_check(e, f, sp, rng)["residual"])
    return 4 * n, worst, worst < 1e-9


def suite_verfurth_bound(rng, samples):
    worst = abs(verfurth_bound(3, 1, 2) - math.sqrt(3.0) / math.pi)
    reference = reference_simplex(3)
    limit = math.sqrt(6.0) / math.pi
    measured = 0.0
    n = min(samples, 100)
    for _ in range(n):
        f = random_poly(rng, 3, 3)
        approximation = best_poly_approx(f, reference, 1, k=1, p=2)
        measured = max(measured, approximation.error / sobolev_seminorm(f, reference, 2, 2))
    return n + 1, max(worst, measured), worst < 1e-12 and measured <= limit


def suite_component_stability(rng, samples):
    worst = 0.0
    ok = True
    checked = 0
    for reference_type in (SimplexType.TYPE_I, SimplexType.TYPE_II):
        report = component_stability(0, reference_type, dim=3, rng=rng)
        if not report.stable:
            logger.warning(f"component stability on {reference_type.value}: sup moved by more than 10% under doubling")
        ok = ok and report.stable
        worst = max(worst, max(report.sup))
        checked += report.n_fields
    return checked, worst, ok


def suite_mesh_plumbing(rng, samples):
    failures = 0
    # T-junction: the midpoint of the long edge of the left triangle is a vertex on the right side only
    t_junction = Mesh([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [1.0, 0.5], [2.0, 0.5]],
                      [[0, 1, 2], [1, 4, 3], [3, 4, 2]])
    failures += conformity_check(t_junction).passed
    for text in ("remark-tetra:levels=3", "aniso-strip-2d:levels=4,gamma=2", "aniso-box-3d:levels=2",
                 "uniform-ref:levels=3"):
        meshes = generate_family(FamilySpec.parse(text))
        H = [mesh_H(mesh) for mesh in meshes]
        failures += any(b >= a for a, b in zip(H, H[1:]))
        text_out = format_mesh(meshes[-1])
        failures += format_mesh(parse_mesh(text_out)) != text_out
    return 9, float(failures), failures == 0


def suite_diagonal_scaling(rng, samples):
    worst = 0.0
    n = min(samples, 100)
    for i in range(n):
        dim = 2 + i % 2
        alphas = 10.0 ** rng.uniform(-4.0, 0.0, size=dim)
        v_hat = [random_poly(rng, dim, 2) for _ in range(dim)]
        worst = max(worst, diagonal_piola_residual(alphas, v_hat, random_points(reference_simplex(dim), 20, rng)))
    return n, worst, worst < 1e-10


def suite_rt_interior_basis(rng, samples):
    worst = 0.0
    n = min(samples, 5)
    for dim in (2, 3):
        for k in (1, 2):
            space = build_rt_space(dim, k)
            for T in _moderate_simplices(rng, n, dims=(dim,), max_aspect=10.0):
                v = [random_poly(rng, dim, k + 1) for _ in range(dim)]
                worst = max(worst, interior_basis_crosscheck(space, v, T))
    return 4 * n, worst, worst < 1e-10


def suite_scaled_argument(rng, samples):
    worst = 0.0
    n = min(samples, 10)
    e = build_lagrange(2, 1)
    for T in _moderate_simplices(rng, n, dims=(2,)):
        f = random_poly(rng, 2, 3)
        lam = 10.0 ** rng.uniform(-1.0, 1.0)
        for m in (0, 1):
            lhs, rhs = scaled_argument_check(e, f, T, lam, m)
            worst = max(worst, abs(lhs - rhs) / max(rhs, 1e-300))
    return 2 * n, worst, worst < 1e-9


def suite_quadrature_integrate(rng, samples):
    worst = 0.0
    n = min(samples, 50)
    for T in _moderate_simplices(rng, n):
        q = random_poly(rng, T.dim, 4)
        # affine invariance of the exact integral: int_T q = |det A| int_That q o phi
        phi = affine_from_reference(T)
        pulled = q.compose_affine(phi.matrix, phi.offset)
        expected = abs(phi.det) * float(integrate(pulled, reference_simplex(T.dim), exact=True))
        worst = max(worst, abs(float(integrate(q, T, exact=True)) - expected) / max(1.0, abs(expected)))
    return n, worst, worst < 1e-10


SUITES = {
    "quadrature_exactness": suite_quadrature_exactness,
    "quadrature_affine_invariance": suite_quadrature_integrate,
    "rt_dimension": suite_rt_dimension,
    "rt_projection": suite_rt_projection,
    "rt_interior_basis": suite_rt_interior_basis,
    "piola_identities": suite_piola_identities,
    "piola_commutation": suite_piola_commutation,
    "diagonal_scaling": suite_diagonal_scaling,
    "standard_position": suite_standard_position,
    "condition_conformance": suite_condition_conformance,
    "matrix_norm_bounds": suite_matrix_norm_bounds,
    "equivalence_constants": suite_equivalence_constants,
    "closed_form_ratios": suite_closed_form_ratios,
    "optimality": suite_optimality,
    "lagrange_reproduction": suite_lagrange_reproduction,
    "lagrange_commutation": suite_lagrange_commutation,
    "scaled_argument": suite_scaled_argument,
    "verfurth_bound": suite_verfurth_bound,
    "component_stability": suite_component_stability,
    "mesh_plumbing": suite_mesh_plumbing,
}


def run_selftest(seed=None, samples=None, suites=None):
    config = get_config()
    seed = config["seed"] if seed is None else seed
    samples = config["selftest_samples"] if samples is None else samples
    fault = os.environ.get(FAULT_ENV)
    names = list(SUITES) if suites is None else list(suites)
    unknown = [name for name in names if name not in SUITES]
    if unknown:
        raise ParameterError(f"Unknown selftest suites: {unknown}")

    results = []
    for name in names:
        # seeded by position in SUITES, not in names
        rng = np.random.default_rng([seed, list(SUITES).index(name)])
        start = time.perf_counter()
        try:
            checked, worst, passed = SUITES[name](rng, samples)
            error = None
        except Exception as exc:  # a crashing suite is a failed suite
            logger.exception(f"Suite {name} raised")
            checked, worst, passed, error = 0, math.nan, False, f"{type(exc).__name__}: {exc}"
        if fault == name:
            passed, error = False, "injected fault"
        logger.info(f"{name}: {'ok' if passed else 'FAILED'} ({time.perf_counter() - start:.2f} s)")
        result = {"name": name, "passed": bool(passed), "checked": int(checked), "worst": float(worst)}
        if error:
            result["error"] = error
        results.append(result)

    failed = [r["name"] for r in results if not r["passed"]]
    return {
        "seed": seed,
        "samples": samples,
        "n_suites": len(results),
        "passed": not failed,
        "failed": failed,
        "suites": results,
    }
