# File for internal use (unit tests)

import math

import numpy as np
import pytest

from anisofem.errors import ParameterError
from anisofem.mesh_engine import kuhn_box_mesh, strip_mesh
from anisofem.shape_parameters import (
    angle_bound,
    angle_diagnostics,
    cell_H_T0,
    circumradius2d,
    element_H_T,
    equivalence_check,
    mesh_H,
    mesh_semiregularity,
    param_H_T,
    param_H_T0,
    shape_metrics,
)
from anisofem.simplex_geometry import Simplex, diameter, random_simplex, to_standard_position


def test_unit_triangle_parameters(unit_triangle):
    s = Simplex(unit_triangle)
    assert param_H_T(to_standard_position(s)) == pytest.approx(2.0 * math.sqrt(2.0))
    assert param_H_T0(s) == pytest.approx(4.0)
    assert circumradius2d(s) == pytest.approx(math.sqrt(2.0) / 2.0)

    metrics = shape_metrics(s)
    assert metrics.semiregularity == pytest.approx(2.0)
    assert metrics.theta_max == pytest.approx(math.pi / 2)
    assert metrics.simplex_type == "TypeI"


def test_unit_tetrahedron_parameters(unit_tetrahedron):
    s = Simplex(unit_tetrahedron)
    assert param_H_T(to_standard_position(s)) == pytest.approx(12.0 * math.sqrt(2.0))
    assert param_H_T0(s) == pytest.approx(12.0)
    with pytest.raises(ParameterError):
        circumradius2d(s)


def test_semiregularity_matches_shear(rng):
    for _ in range(100):
        sp = to_standard_position(random_simplex(rng, 2))
        assert param_H_T(sp) / diameter(sp.simplex) == pytest.approx(2.0 / sp.shear[1], rel=1e-9)
        sp = to_standard_position(random_simplex(rng, 3))
        _, t1, _, _, t2 = sp.shear
        assert param_H_T(sp) / diameter(sp.simplex) == pytest.approx(6.0 / (t1 * t2), rel=1e-9)


@pytest.mark.parametrize("dim", [2, 3])
def test_equivalence_with_pose_free_parameter(rng, dim):
    for _ in range(200):
        report = equivalence_check(random_simplex(rng, dim))
        assert report.passed, report
        if dim == 2:
            assert report.circumradius_passed, report


def test_angle_bound():
    m1, m2, bound = angle_bound(math.pi / 2, math.pi / 4, math.pi / 2)
    assert m1 == pytest.approx(math.sqrt(0.5))
    assert m2 == pytest.approx(math.sqrt(0.5))
    assert bound == pytest.approx(12.0)
    with pytest.raises(ParameterError):
        angle_bound(math.pi, 0.1, 0.2)
    with pytest.raises(ParameterError):
        angle_bound(1.0, 0.5, 0.4)


def test_angle_diagnostics_unit_tetrahedron(unit_tetrahedron):
    sp = to_standard_position(Simplex(unit_tetrahedron))
    diagnostics = angle_diagnostics(sp)
    assert diagnostics.theta_T == pytest.approx(math.pi / 4)
    assert diagnostics.phi_T == pytest.approx(math.pi / 4)
    assert diagnostics.base_max_angle == pytest.approx(math.pi / 2)
    assert diagnostics.bound is None

    bounded = angle_diagnostics(sp, theta_bar=math.pi / 2)
    assert bounded.angles_within
    assert bounded.bound_holds
    assert bounded.semiregularity == pytest.approx(12.0)


def test_mesh_parameters_on_strip():
    mesh = strip_mesh(0.5, 2.0)
    assert mesh.n_cells == 16
    h, H = element_H_T(mesh)
    np.testing.assert_allclose(H / h, 2.0)
    h0, H0 = cell_H_T0(mesh)
    np.testing.assert_allclose(h0, h)
    np.testing.assert_allclose(H0, [param_H_T0(c) for c in mesh.simplices()])
    assert mesh_H(mesh) == pytest.approx(1.25)
    summary = mesh_semiregularity(mesh)
    assert summary["max_H_T_over_h"] == pytest.approx(2.0)
    assert summary["max_H_T0_over_h"] == pytest.approx(math.sqrt(5.0))


def test_element_H_T_matches_per_cell_evaluation():
    mesh = kuhn_box_mesh(0.5, 0.25, 0.125)
    _, H = element_H_T(mesh)
    expected = [param_H_T(to_standard_position(c)) for c in mesh.simplices()]
    np.testing.assert_allclose(H, expected, rtol=1e-9)
