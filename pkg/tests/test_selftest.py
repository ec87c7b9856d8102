# File for internal use (unit tests)

import math

import pytest

from anisofem import selftest
from anisofem.errors import ParameterError
from anisofem.raviart_thomas import StabilityReport
from anisofem.selftest import FAULT_ENV, SUITES, run_selftest
from anisofem.simplex_geometry import SimplexType

QUICK = ["quadrature_exactness", "closed_form_ratios", "matrix_norm_bounds", "standard_position"]


def test_quick_suites_pass():
    summary = run_selftest(seed=7, samples=50, suites=QUICK)
    assert summary["passed"], summary
    assert summary["n_suites"] == len(QUICK)
    assert summary["failed"] == []
    assert [s["name"] for s in summary["suites"]] == QUICK
    assert all(s["checked"] > 0 for s in summary["suites"])


def test_selftest_is_deterministic():
    first = run_selftest(seed=3, samples=20, suites=QUICK)
    second = run_selftest(seed=3, samples=20, suites=QUICK)
    assert first == second
    # a subset draws the same samples as a larger run
    alone = run_selftest(seed=3, samples=20, suites=["matrix_norm_bounds"])
    assert alone["suites"][0] == first["suites"][2]


def test_fault_injection(monkeypatch):
    monkeypatch.setenv(FAULT_ENV, "closed_form_ratios")
    summary = run_selftest(seed=1, samples=10, suites=QUICK)
    assert not summary["passed"]
    assert summary["failed"] == ["closed_form_ratios"]
    faulty = summary["suites"][1]
    assert faulty["error"] == "injected fault"


def test_crashing_suite_fails(monkeypatch):
    def boom(rng, samples):
        raise RuntimeError("suite crashed")

    monkeypatch.setitem(SUITES, "rt_dimension", boom)
    summary = run_selftest(samples=5, suites=["rt_dimension"])
    result = summary["suites"][0]
    assert not result["passed"]
    assert result["error"] == "RuntimeError: suite crashed"
    assert math.isnan(result["worst"])


def test_unknown_suite():
    with pytest.raises(ParameterError):
        run_selftest(suites=["no_such_suite"])


def test_random_poly_degree(rng):
    poly = selftest.random_poly(rng, 3, 2)
    assert poly.degree == 2
    assert len(poly.coeffs) == 10


def test_all_suites_pass():
    summary = run_selftest(samples=20)
    assert summary["n_suites"] == len(SUITES) == 20
    assert summary["passed"], [s for s in summary["suites"] if not s["passed"]]


def test_unstable_component_constants_fail_the_suite(monkeypatch):
    def unstable(k, reference_type, dim=3, n_fields=400, rng=None):
        return StabilityReport(k, dim, SimplexType(reference_type).value, n_fields, (1.0, 1.0, 1.0), (0.5, 1.0, 1.0),
                               (0.5, 1.0, 1.0), (2.0, 2.0, 2.0), False, "div")

    monkeypatch.setattr(selftest, "component_stability", unstable)
    summary = run_selftest(samples=5, suites=["component_stability"])
    assert not summary["passed"]
    assert summary["failed"] == ["component_stability"]
    assert "error" not in summary["suites"][0]
