# Copyright (c) anisofem contributors under Apache License 2.0 (see LICENSE.txt).
# Anisotropic interpolation error estimates on simplices
#
# Command-line entry point:
#
#   anisofem analyze-simplex 0,0 1,0 0,1
#   anisofem mesh-quality mesh.anisomesh
#   anisofem convergence --element lagrange --k 1 --l 1 --m 0 --p 2 --family uniform-ref --field sin-product
#   anisofem optimality --s-list 0.25,0.125 --eps-list 1.5
#   anisofem generate --family aniso-strip-2d:gamma=2 --out meshes
#   anisofem selftest
#
# Reports go to stdout (or --out); logs go to stderr.

import argparse
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np
import pandas as pd

from .config import configure_logging, get_config
from .errors import (
    DegenerateSimplexError,
    MeshFormatError,
    NonconformingMeshError,
    ParameterError,
    QuadratureError,
    SingularMapError,
    UndefinedRatioError,
    UnisolvenceError,
)
from .fields import field_kind, get_field
from .interpolation_operators import (
    build_crouzeix_raviart,
    build_lagrange,
    certify_linf_sampling,
    mesh_error_ratios,
    optimality_check,
)
from .mesh_engine import FamilySpec, conformity_check, generate_family, read_mesh, write_mesh
from .raviart_thomas import build_rt_space, mesh_rt_error_ratios
from .shape_parameters import angle_diagnostics, cell_H_T0, equivalence_check, mesh_H, param_H_T, param_H_T0
from .simplex_geometry import Simplex, diameter, matrix_norm_bounds, standard_position_from_pose, to_standard_position

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_INVARIANT = 1
EXIT_GEOMETRY = 2
EXIT_NONCONFORMING = 3
EXIT_USAGE = 64

BOUND_REPORT_COLUMNS = ["level", "h", "H", "n_cells", "semiregularity", "error", "max_error", "max_bound_factor",
                        "max_ratio", "order"]
OPTIMALITY_COLUMNS = ["s", "eps", "I_T", "I_T_closed_form", "H_T", "H_T_standard", "ratio", "ratio_standard", "pass"]
MESH_QUALITY_COLUMNS = ["cell", "h_T0", "H_T0", "ratio"]

FLOAT_FORMAT = "%.12g"


class UsageArgumentParser(argparse.ArgumentParser):
    """Usage errors exit with status 64."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _emit(text, out=None):
    if out:
        Path(out).write_text(text, encoding="utf-8")
        logger.info(f"Wrote {out}")
    else:
        sys.stdout.write(text)


def _to_json(payload):
    def default(value):
        if isinstance(value, np.generic):
            return value.item()
        if isinstance(value, np.ndarray):
            return value.tolist()
        raise TypeError(f"Not JSON serializable: {type(value).__name__}")

    def clean(value):
        if isinstance(value, float) and not math.isfinite(value):
            return None
        if isinstance(value, dict):
            return {k: clean(v) for k, v in value.items()}
        if isinstance(value, (list, tuple)):
            return [clean(v) for v in value]
        return value

    return json.dumps(clean(payload), indent=2, default=default) + "\n"


def _emit_table(df, columns, args, extra=None):
    df = df[columns]
    if args.format == "json":
        payload = dict(extra or {})
        payload["rows"] = df.to_dict(orient="records")
        _emit(_to_json(payload), args.out)
    else:
        _emit(df.to_csv(index=False, float_format=FLOAT_FORMAT, lineterminator="\n"), args.out)


def _parse_float_list(text, name):
    try:
        values = [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise ParameterError(f"Invalid {name} argument")
    if not values:
        raise ParameterError(f"Invalid {name} argument")
    return values


#####################################
# analyze-simplex
#####################################

def _parse_vertex(text):
    try:
        return [float(v) for v in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid vertex {text!r}; use comma-separated coordinates")


def cmd_analyze_simplex(args):
    vertices = args.vertices
    if len(vertices) not in (3, 4) or any(len(v) != len(vertices) - 1 for v in vertices):
        raise ParameterError("Give 3 vertices in R^2 or 4 vertices in R^3")
    s = Simplex(np.array(vertices))
    sp = to_standard_position(s)

    try:
        H_pose = param_H_T(standard_position_from_pose(s))
    except ParameterError:
        H_pose = None

    angles = angle_diagnostics(sp, args.theta_bar, args.phi_bar1, args.phi_bar2) if s.dim == 3 else angle_diagnostics(sp)
    norms = matrix_norm_bounds(sp)
    equivalence = equivalence_check(s)
    H_T = param_H_T(sp)
    report = {
        "dim": s.dim,
        "labels": list(sp.labels),
        "type": sp.simplex_type.value,
        "alphas": list(sp.alphas),
        "shear": list(sp.shear),
        "h_T": diameter(s),
        "H_T": H_T,
        "H_T_given_pose": H_pose,
        "H_T0": param_H_T0(s),
        "semiregularity": H_T / diameter(s),
        "circumradius": equivalence.circumradius,
        "angles": {
            "theta_max": angles.theta_max,
            "theta_T": angles.theta_T,
            "phi_T": angles.phi_T,
            "base_max_angle": angles.base_max_angle,
            "M1": angles.M1,
            "M2": angles.M2,
            "bound": angles.bound,
            "angles_within": angles.angles_within,
            "bound_holds": angles.bound_holds,
        },
        "norm_bounds": norms,
        "equivalence": {
            "ratio": equivalence.ratio,
            "passed": equivalence.passed,
            "circumradius_ratio": equivalence.circumradius_ratio,
            "circumradius_passed": equivalence.circumradius_passed,
        },
    }
    _emit(_to_json(report), args.out)
    passed = norms["passed"] and equivalence.passed and equivalence.circumradius_passed is not False
    return EXIT_OK if passed else EXIT_INVARIANT


#####################################
# mesh-quality
#####################################

def cmd_mesh_quality(args):
    mesh = read_mesh(args.mesh, check_conformity=True)
    if mesh.conforming is False:
        report = conformity_check(mesh)
        if not args.allow_nonconforming:
            raise NonconformingMeshError(f"Mesh {args.mesh} is nonconforming", report.offending)
        logger.warning(f"Continuing with nonconforming mesh {args.mesh}")

    h0, H0 = cell_H_T0(mesh)
    df = pd.DataFrame({"cell": [str(i) for i in range(mesh.n_cells)], "h_T0": h0, "H_T0": H0, "ratio": H0 / h0})
    summary = pd.DataFrame([{"cell": "summary", "h_T0": mesh.h, "H_T0": mesh_H(mesh), "ratio": float((H0 / h0).max())}])
    _emit_table(pd.concat([df, summary], ignore_index=True), MESH_QUALITY_COLUMNS, args)
    return EXIT_OK


#####################################
# convergence
#####################################

def _observed_orders(errors, hs):
    orders = [math.nan]
    for n in range(1, len(errors)):
        if errors[n - 1] > 0.0 and errors[n] > 0.0:
            orders.append(math.log2(errors[n - 1] / errors[n]) / math.log2(hs[n - 1] / hs[n]))
        else:
            orders.append(math.nan)
    return orders


def evaluate_bound_report(rows, expected_order, ratio_tol, order_tol):
    """Ratio stability and observed-order verdicts for a finished level table."""
    ratios = [row["max_ratio"] for row in rows]
    finite = [r for r in ratios if math.isfinite(r)]
    ratio_stable = len(finite) == len(ratios)
    if ratio_stable and len(ratios) > 1:
        running = max(ratios[:-1])
        ratio_stable = ratios[-1] <= (1.0 + ratio_tol) * running or (running == 0.0 and ratios[-1] == 0.0)

    semiregularity = [row["semiregularity"] for row in rows]
    level_constant = max(semiregularity) - min(semiregularity) <= 1e-6 * max(semiregularity)
    orders = [row["order"] for row in rows[-3:] if math.isfinite(row["order"])]
    order_checked = level_constant and len(orders) > 0
    order_ok = all(abs(o - expected_order) <= order_tol for o in orders) if order_checked else None
    return {
        "ratio_stable": bool(ratio_stable),
        "order_checked": bool(order_checked),
        "order_ok": order_ok,
        "passed": bool(ratio_stable and order_ok is not False),
    }


def _validate_convergence(args):
    if args.p not in ("2", "inf"):
        raise ParameterError("Invalid --p argument")
    if args.element == "rt":
        if args.m != 0 or args.p != "2":
            raise ParameterError("RT estimates need --m 0 and --p 2")
        if not (0 <= args.l <= args.k):
            raise ParameterError("RT estimates need 0 <= l <= k")
    else:
        if args.element == "cr" and args.k != 1:
            raise ParameterError("Crouzeix-Raviart elements have --k 1")
        if args.k < 1:
            raise ParameterError("Invalid --k argument")
        if not (0 <= args.m <= args.l + 1 <= args.k + 1):
            raise ParameterError("Need 0 <= m <= l + 1 <= k + 1")

    wanted = "vector" if args.element == "rt" else "scalar"
    if field_kind(args.field) != wanted:
        raise ParameterError(f"--element {args.element} needs a {wanted} field")


def cmd_convergence(args):
    _validate_convergence(args)
    spec = FamilySpec.parse(args.family)
    meshes = generate_family(spec)
    dim = meshes[0].dim
    f = get_field(args.field, dim)
    p = math.inf if args.p == "inf" else 2

    if args.element == "rt":
        space = build_rt_space(dim, args.k)
    else:
        element = build_lagrange(dim, args.k) if args.element == "lagrange" else build_crouzeix_raviart(dim)
        if p == math.inf and not certify_linf_sampling(element, f, meshes[0].cell(0), args.m, args.l):
            raise ParameterError("p=inf sampling is not certified for this field and family; use --p 2")

    rows = []
    for level, mesh in enumerate(meshes):
        if args.element == "rt":
            errors = mesh_rt_error_ratios(space, f, mesh, args.l, progress=args.progress)
        else:
            errors = mesh_error_ratios(element, f, mesh, args.m, p, args.l, progress=args.progress)
        rows.append({
            "level": level,
            "h": mesh.h,
            "H": mesh_H(mesh),
            "n_cells": mesh.n_cells,
            "semiregularity": float((errors.H_T / errors.h_T).max()),
            "error": errors.total_error(),
            "max_error": float(errors.error.max()),
            "max_bound_factor": float(errors.bound_factor.max()),
            "max_ratio": errors.max_ratio(),
        })
        logger.info(f"{spec} level {level}: {mesh.n_cells} cells, h={mesh.h:.4g}, max ratio {rows[-1]['max_ratio']:.4g}")

    for row, order in zip(rows, _observed_orders([r["error"] for r in rows], [r["h"] for r in rows])):
        row["order"] = order

    expected = args.l + 1 - args.m
    verdict = evaluate_bound_report(rows, expected, args.ratio_tol, args.order_tol)
    config_echo = {
        "experiment": f"{args.element}-k{args.k}-l{args.l}-m{args.m}-p{args.p}",
        "element": args.element, "k": args.k, "l": args.l, "m": args.m, "p": args.p,
        "field": args.field, "family": str(spec), "seed": args.seed,
        "expected_order": expected, "ratio_tol": args.ratio_tol, "order_tol": args.order_tol,
        **verdict,
    }
    _emit_table(pd.DataFrame(rows, columns=BOUND_REPORT_COLUMNS), BOUND_REPORT_COLUMNS, args, config_echo)
    if not verdict["passed"]:
        logger.error(f"Convergence study failed: {verdict}")
    return EXIT_OK if verdict["passed"] else EXIT_INVARIANT


#####################################
# optimality
#####################################

def cmd_optimality(args):
    s_values = _parse_float_list(args.s_list, "--s-list")
    eps_values = _parse_float_list(args.eps_list, "--eps-list")
    rows = []
    for eps in eps_values:
        for s in s_values:
            report = optimality_check(s, eps)
            rows.append({
                "s": s, "eps": eps, "I_T": report.I_T, "I_T_closed_form": report.I_T_closed_form,
                "H_T": report.H_T, "H_T_standard": report.H_T_standard, "ratio": report.ratio,
                "ratio_standard": report.ratio_standard, "pass": report.passed,
            })
    df = pd.DataFrame(rows, columns=OPTIMALITY_COLUMNS)
    _emit_table(df, OPTIMALITY_COLUMNS, args, {"lower_bound": 1.0 / (24.0 * math.sqrt(10.0))})
    return EXIT_OK if bool(df["pass"].all()) else EXIT_INVARIANT


#####################################
# generate
#####################################

def cmd_generate(args):
    spec = FamilySpec.parse(args.family)
    out = Path(args.out or ".")
    out.mkdir(parents=True, exist_ok=True)
    for level, mesh in enumerate(generate_family(spec)):
        path = out / f"{spec.kind}-{level}.anisomesh"
        write_mesh(mesh, path)
        logger.info(f"Wrote {path} ({mesh.n_cells} cells)")
    return EXIT_OK


#####################################
# selftest
#####################################

def cmd_selftest(args):
    from .selftest import run_selftest

    summary = run_selftest(seed=args.seed, samples=args.samples)
    _emit(_to_json(summary), args.out)
    return EXIT_OK if summary["passed"] else EXIT_INVARIANT


#####################################
# Parser
#####################################

def build_parser():
    config = get_config()
    parser = UsageArgumentParser(prog="anisofem", description="Anisotropic interpolation error experiments on simplices.")
    parser.add_argument(
        "--log-level",
        type=str,
        default=config["log_level"],
        help=(
            "Logging level written to stderr (DEBUG, INFO, WARNING, ERROR)."
        )
    )
    subparsers = parser.add_subparsers(dest="command", required=True)

    def common(sub, formats=True):
        sub.add_argument(
            "--out",
            type=str,
            default=None,
            help=(
                "Write the report to this path instead of stdout."
            )
        )
        sub.add_argument(
            "--seed",
            type=int,
            default=config["seed"],
            help=(
                "Seed of the random sampling in selftest. The other commands draw no random numbers and only"
                " record the seed in the report; the uniform-ref `seed=` key names the seed mesh instead."
            )
        )
        if formats:
            sub.add_argument(
                "--format",
                choices=["csv", "json"],
                default="csv",
                help=(
                    "Report format."
                )
            )

    analyze = subparsers.add_parser("analyze-simplex", help="Shape parameters of one triangle or tetrahedron.")
    analyze.add_argument(
        "vertices",
        nargs="+",
        type=_parse_vertex,
        help=(
            "Vertices as comma-separated coordinates, e.g. `0,0 1,0 0,1`."
        )
    )
    for name in ("--theta-bar", "--phi-bar1", "--phi-bar2"):
        analyze.add_argument(
            name,
            type=float,
            default=None,
            help=(
                "Angle bound in radians for the semiregularity check (3D only)."
            )
        )
    common(analyze, formats=False)
    analyze.set_defaults(func=cmd_analyze_simplex)

    quality = subparsers.add_parser("mesh-quality", help="Per-cell H_T0 / h_T0 of an anisomesh file.")
    quality.add_argument("mesh", type=str, help="Path of the anisomesh file.")
    quality.add_argument(
        "--allow-nonconforming",
        action="store_true",
        default=False,
        help=(
            "Report nonconforming meshes instead of failing with exit code 3."
        )
    )
    common(quality)
    quality.set_defaults(func=cmd_mesh_quality)

    convergence = subparsers.add_parser("convergence", help="Error ratios and observed orders over a mesh family.")
    convergence.add_argument(
        "--element",
        choices=["lagrange", "cr", "rt"],
        default="lagrange",
        help=(
            "Interpolation operator: Lagrange, Crouzeix-Raviart, or Raviart-Thomas."
        )
    )
    convergence.add_argument("--k", type=int, default=1, help="Polynomial degree of the element.")
    convergence.add_argument("--l", type=int, default=1, help="Smoothness index: the bound uses |f|_(l+1).")
    convergence.add_argument("--m", type=int, default=0, help="Order of the error seminorm.")
    convergence.add_argument("--p", choices=["2", "inf"], default="2", help="Lebesgue exponent.")
    convergence.add_argument(
        "--family",
        type=str,
        default="uniform-ref",
        help=(
            "Mesh family, e.g. `aniso-strip-2d:gamma=2,levels=5` or `remark-tetra:eps=1.5`."
            " Kinds: remark-tetra, aniso-strip-2d, aniso-box-3d, uniform-ref."
        )
    )
    convergence.add_argument(
        "--field",
        type=str,
        default="sin-product",
        help=(
            "Field id: remark-phi, sin-product, exp-plane, vec-x2, vec-exp, vec-sin-cos, vec-trig,"
            " or monomial:<exponents>."
        )
    )
    convergence.add_argument(
        "--ratio-tol",
        type=float,
        default=config["ratio_tol"],
        help=(
            "Allowed growth of the last-level max ratio over the running max of earlier levels."
        )
    )
    convergence.add_argument(
        "--order-tol",
        type=float,
        default=config["order_tol"],
        help=(
            "Allowed deviation of the observed order from l + 1 - m on the last three levels."
        )
    )
    convergence.add_argument("--progress", action="store_true", default=False, help="Show a progress bar per level.")
    common(convergence)
    convergence.set_defaults(func=cmd_convergence)

    optimality = subparsers.add_parser("optimality", help="I_T / H_T on the tetrahedra (0,0,0),(s,0,0),(s/2,s^eps,0),(0,0,s).")
    optimality.add_argument(
        "--s-list",
        type=str,
        default=",".join(str(2.0**-n) for n in range(2, 11)),
        help=(
            "Comma-separated values of s in (0, 1)."
        )
    )
    optimality.add_argument(
        "--eps-list",
        type=str,
        default="1.25,1.5,1.75",
        help=(
            "Comma-separated values of eps in (1, 2)."
        )
    )
    common(optimality)
    optimality.set_defaults(func=cmd_optimality)

    generate = subparsers.add_parser("generate", help="Write the meshes of a family as anisomesh files.")
    generate.add_argument("--family", type=str, required=True, help="Mesh family specification.")
    common(generate, formats=False)
    generate.set_defaults(func=cmd_generate)

    selftest = subparsers.add_parser("selftest", help="Run every invariant suite with fixed seeds.")
    selftest.add_argument(
        "--samples",
        type=int,
        default=None,
        help=(
            "Random samples per suite (default from the configuration)."
        )
    )
    common(selftest, formats=False)
    selftest.set_defaults(func=cmd_selftest)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    configure_logging(args.log_level)

    try:
        return args.func(args)
    except NonconformingMeshError as exc:
        logger.error(f"{exc}; offending facets: {exc.offending[:10]}")
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NONCONFORMING
    except (DegenerateSimplexError, SingularMapError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_GEOMETRY
    except (ParameterError, MeshFormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (UnisolvenceError, QuadratureError, UndefinedRatioError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVARIANT


if __name__ == "__main__":
    sys.exit(main())
