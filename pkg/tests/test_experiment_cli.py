# File for internal use (unit tests)

import json
import math
import subprocess
import sys
from pathlib import Path

import pytest

import anisofem.selftest
from anisofem.experiment_cli import (
    BOUND_REPORT_COLUMNS,
    EXIT_GEOMETRY,
    EXIT_INVARIANT,
    EXIT_NONCONFORMING,
    EXIT_OK,
    EXIT_USAGE,
    MESH_QUALITY_COLUMNS,
    OPTIMALITY_COLUMNS,
    _observed_orders,
    evaluate_bound_report,
    main,
)
from anisofem.mesh_engine import Mesh, read_mesh, strip_mesh, write_mesh

ROOT = Path(__file__).resolve().parents[1]


@pytest.fixture
def mesh_files(tmp_path):
    conforming = tmp_path / "strip.anisomesh"
    write_mesh(strip_mesh(0.5, 2.0), conforming)
    t_junction = tmp_path / "t-junction.anisomesh"
    write_mesh(Mesh([[0.0, 0.0], [2.0, 0.0], [1.0, 1.0], [1.0, 0.0], [1.0, -1.0]],
                    [[0, 1, 4], [0, 3, 2], [3, 1, 2]]), t_junction)
    broken = tmp_path / "broken.anisomesh"
    broken.write_text("anisomesh 2\nvertices 2\n0 0\n", encoding="utf-8")
    return {"conforming": conforming, "t_junction": t_junction, "broken": broken}


def csv_lines(capsys):
    return capsys.readouterr().out.strip().split("\n")


def test_analyze_simplex_triangle(capsys):
    assert main(["analyze-simplex", "0,0", "1,0", "0,1"]) == EXIT_OK
    report = json.loads(capsys.readouterr().out)
    assert report["dim"] == 2
    assert report["labels"] == [0, 1, 2]
    assert report["type"] == "TypeI"
    assert report["H_T"] == pytest.approx(2.0 * math.sqrt(2.0))
    assert report["H_T0"] == pytest.approx(4.0)
    assert report["semiregularity"] == pytest.approx(2.0)
    assert report["circumradius"] == pytest.approx(math.sqrt(0.5))
    assert report["angles"]["theta_max"] == pytest.approx(math.pi / 2)
    assert report["angles"]["M1"] is None
    assert report["norm_bounds"]["passed"]
    assert report["equivalence"]["passed"]


def test_analyze_simplex_tetrahedron(capsys):
    code = main(["analyze-simplex", "0,0,0", "1,0,0", "0,1,0", "0,0,1", "--theta-bar", str(math.pi / 2)])
    assert code == EXIT_OK
    report = json.loads(capsys.readouterr().out)
    assert report["labels"] == [1, 2, 0, 3]
    assert report["semiregularity"] == pytest.approx(12.0)
    assert report["angles"]["bound"] == pytest.approx(12.0)
    assert report["angles"]["bound_holds"]
    assert report["H_T_given_pose"] == pytest.approx(6.0 * math.sqrt(2.0))


def test_analyze_simplex_errors(capsys):
    assert main(["analyze-simplex", "0,0", "1,1", "2,2"]) == EXIT_GEOMETRY
    assert "degenerate simplex" in capsys.readouterr().err
    assert main(["analyze-simplex", "0,0", "1,0"]) == EXIT_USAGE
    assert main(["analyze-simplex", "0,0", "1,0", "0,1,2"]) == EXIT_USAGE
    with pytest.raises(SystemExit) as excinfo:
        main(["analyze-simplex", "a,b", "1,0", "0,1"])
    assert excinfo.value.code == EXIT_USAGE


def test_usage_errors_exit_64():
    for argv in ([], ["no-such-command"], ["convergence", "--p", "3"], ["generate"]):
        with pytest.raises(SystemExit) as excinfo:
            main(argv)
        assert excinfo.value.code == EXIT_USAGE, argv


def test_mesh_quality(mesh_files, capsys):
    assert main(["mesh-quality", str(mesh_files["conforming"])]) == EXIT_OK
    lines = csv_lines(capsys)
    assert lines[0] == ",".join(MESH_QUALITY_COLUMNS)
    assert len(lines) == 1 + 16 + 1
    assert lines[-1].startswith("summary,")

    assert main(["mesh-quality", str(mesh_files["conforming"]), "--format", "json"]) == EXIT_OK
    rows = json.loads(capsys.readouterr().out)["rows"]
    assert rows[-1]["cell"] == "summary"
    assert rows[-1]["H_T0"] == pytest.approx(1.25)


def test_mesh_quality_nonconforming(mesh_files, capsys):
    assert main(["mesh-quality", str(mesh_files["t_junction"])]) == EXIT_NONCONFORMING
    assert "nonconforming" in capsys.readouterr().err
    assert main(["mesh-quality", str(mesh_files["t_junction"]), "--allow-nonconforming"]) == EXIT_OK
    assert len(csv_lines(capsys)) == 1 + 3 + 1
    assert main(["mesh-quality", str(mesh_files["broken"])]) == EXIT_USAGE


def test_convergence_lagrange(capsys):
    argv = ["convergence", "--element", "lagrange", "--k", "1", "--l", "1", "--m", "1", "--p", "2",
            "--family", "uniform-ref:levels=3", "--field", "monomial:2,0"]
    assert main(argv) == EXIT_OK
    lines = csv_lines(capsys)
    assert lines[0] == ",".join(BOUND_REPORT_COLUMNS)
    assert len(lines) == 4

    assert main(argv + ["--format", "json"]) == EXIT_OK
    payload = json.loads(capsys.readouterr().out)
    assert payload["passed"] and payload["ratio_stable"] and payload["order_checked"] and payload["order_ok"]
    assert payload["expected_order"] == 1
    assert payload["experiment"] == "lagrange-k1-l1-m1-p2"
    assert payload["rows"][0]["order"] is None
    for row in payload["rows"][1:]:
        assert row["order"] == pytest.approx(1.0, abs=1e-6)
    ratios = [row["max_ratio"] for row in payload["rows"]]
    assert ratios == pytest.approx([ratios[0]] * 3, rel=1e-8)


def test_convergence_seed_is_recorded_only(capsys):
    argv = ["convergence", "--element", "cr", "--k", "1", "--l", "1", "--m", "0",
            "--family", "uniform-ref:seed=square,levels=2", "--field", "sin-product", "--format", "json"]
    payloads, codes = [], []
    for seed in ("7", "9"):
        codes.append(main(argv + ["--seed", seed]))
        payloads.append(json.loads(capsys.readouterr().out))
    assert codes[0] == codes[1] and codes[0] in (EXIT_OK, EXIT_INVARIANT)
    assert [p["seed"] for p in payloads] == [7, 9]
    assert payloads[0]["family"] == payloads[1]["family"]
    assert payloads[0]["rows"] == payloads[1]["rows"]


def test_convergence_raviart_thomas(capsys):
    argv = ["convergence", "--element", "rt", "--k", "0", "--l", "0", "--m", "0",
            "--family", "aniso-strip-2d:levels=3,gamma=2", "--field", "vec-exp", "--format", "json"]
    assert main(argv) in (EXIT_OK, EXIT_INVARIANT)
    payload = json.loads(capsys.readouterr().out)
    assert len(payload["rows"]) == 3
    assert all(row["max_ratio"] > 0.0 for row in payload["rows"])
    errors = [row["error"] for row in payload["rows"]]
    assert errors[-1] < errors[0]


def test_convergence_sup_norm(capsys):
    argv = ["convergence", "--k", "1", "--l", "1", "--m", "0", "--p", "inf",
            "--family", "uniform-ref:levels=2", "--field", "exp-plane"]
    assert main(argv) in (EXIT_OK, EXIT_INVARIANT)
    assert len(csv_lines(capsys)) == 3


@pytest.mark.parametrize("extra", [
    ["--element", "rt", "--field", "sin-product", "--k", "0", "--l", "0"],
    ["--element", "rt", "--field", "vec-exp", "--k", "0", "--l", "0", "--m", "1"],
    ["--element", "lagrange", "--field", "vec-exp"],
    ["--element", "cr", "--k", "2"],
    ["--k", "1", "--l", "1", "--m", "3"],
    ["--k", "0"],
    ["--field", "no-such-field"],
    ["--family", "no-such-family"],
])
def test_convergence_invalid_arguments(extra):
    assert main(["convergence"] + extra) == EXIT_USAGE


def test_optimality(capsys):
    assert main(["optimality", "--s-list", "0.25,0.125", "--eps-list", "1.5"]) == EXIT_OK
    lines = csv_lines(capsys)
    assert lines[0] == ",".join(OPTIMALITY_COLUMNS)
    assert len(lines) == 3
    assert all(line.endswith(",True") for line in lines[1:])

    assert main(["optimality", "--s-list", "0.25", "--eps-list", "1.5", "--format", "json"]) == EXIT_OK
    payload = json.loads(capsys.readouterr().out)
    assert payload["lower_bound"] == pytest.approx(1.0 / (24.0 * math.sqrt(10.0)))
    assert payload["rows"][0]["pass"] is True
    assert main(["optimality", "--s-list", "1.5"]) == EXIT_USAGE
    assert main(["optimality", "--s-list", "a,b"]) == EXIT_USAGE


def test_generate(tmp_path):
    out = tmp_path / "meshes"
    assert main(["generate", "--family", "aniso-strip-2d:levels=2,gamma=2", "--out", str(out)]) == EXIT_OK
    paths = sorted(p.name for p in out.iterdir())
    assert paths == ["aniso-strip-2d-0.anisomesh", "aniso-strip-2d-1.anisomesh"]
    assert read_mesh(out / paths[1]).n_cells == 2 * 2 * 4
    assert main(["generate", "--family", "aniso-strip-2d:gamma=0.5", "--out", str(out)]) == EXIT_USAGE


def test_report_written_to_out(tmp_path, capsys):
    out = tmp_path / "report.json"
    assert main(["analyze-simplex", "0,0", "1,0", "0,1", "--out", str(out)]) == EXIT_OK
    assert capsys.readouterr().out == ""
    assert json.loads(out.read_text(encoding="utf-8"))["dim"] == 2


def test_selftest_exit_codes(monkeypatch, capsys):
    monkeypatch.setattr(anisofem.selftest, "run_selftest", lambda seed, samples: {"passed": False, "failed": ["x"]})
    assert main(["selftest"]) == EXIT_INVARIANT
    monkeypatch.setattr(anisofem.selftest, "run_selftest", lambda seed, samples: {"passed": True, "failed": []})
    assert main(["selftest", "--samples", "3"]) == EXIT_OK
    capsys.readouterr()


def test_observed_orders():
    orders = _observed_orders([1.0, 0.25, 0.0625, 0.0], [1.0, 0.5, 0.25, 0.125])
    assert math.isnan(orders[0]) and math.isnan(orders[3])
    assert orders[1:3] == pytest.approx([2.0, 2.0])


def row(max_ratio, semiregularity=2.0, order=1.0):
    return {"max_ratio": max_ratio, "semiregularity": semiregularity, "order": order}


def test_evaluate_bound_report():
    stable = evaluate_bound_report([row(1.0, order=math.nan), row(1.02), row(1.04)], 1.0, 0.05, 0.2)
    assert stable == {"ratio_stable": True, "order_checked": True, "order_ok": True, "passed": True}

    growing = evaluate_bound_report([row(1.0), row(1.2)], 1.0, 0.05, 0.2)
    assert not growing["ratio_stable"] and not growing["passed"]

    wrong_order = evaluate_bound_report([row(1.0), row(1.0, order=1.5)], 1.0, 0.05, 0.2)
    assert wrong_order["order_ok"] is False and not wrong_order["passed"]

    # H_T / h_T grows from level to level: the order is not checked
    degenerating = evaluate_bound_report([row(1.0, 2.0), row(1.0, 4.0, order=0.5)], 1.0, 0.05, 0.2)
    assert not degenerating["order_checked"] and degenerating["order_ok"] is None and degenerating["passed"]

    undefined = evaluate_bound_report([row(math.nan), row(1.0)], 1.0, 0.05, 0.2)
    assert not undefined["ratio_stable"]

    zero = evaluate_bound_report([row(0.0, order=math.nan), row(0.0, order=math.nan)], 1.0, 0.05, 0.2)
    assert zero["ratio_stable"] and not zero["order_checked"]


def test_module_entry_point():
    result = subprocess.run([sys.executable, "-m", "anisofem", "analyze-simplex", "0,0", "1,1", "2,2"],
                            cwd=ROOT, capture_output=True, text=True)
    assert result.returncode == EXIT_GEOMETRY
    assert "degenerate simplex" in result.stderr
    result = subprocess.run([sys.executable, "-m", "anisofem", "analyze-simplex", "0,0"],
                            cwd=ROOT, capture_output=True, text=True)
    assert result.returncode == EXIT_USAGE
