#!/usr/bin/env python3
"""
Main entry point for the ERT inversion tools.
"""

import argparse
import json
import signal
import sys
from dataclasses import asdict, replace
from pathlib import Path
from typing import Any, Callable, Optional

from errors import ParameterError
from fem.forward import load_observations, save_observations
from gauss_newton import ALGORITHMS, GnConfig
from geometry.mesh import Mesh
from geometry.survey import Survey
from models.model_vector import ModelVector
from models.reports import (
    BENCH_COLUMNS,
    RunManifest,
    write_csv,
    write_report_csv,
    write_result_json,
    write_spectrum_csv,
)
from settings import DEFAULT_CONFIG_PATH, VERSION, configure_logging, load_config, section
from workflow import ErtWorkflow

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_USAGE = 2

MANIFEST_NAME = "manifest.json"


def signal_handler(sig: int, frame: Any) -> None:
    """Handle Ctrl+C gracefully"""
    sys.exit(EXIT_FAILURE)


def positive_float(text: str) -> float:
    value = float(text)
    if not value > 0.0:
        raise argparse.ArgumentTypeError(f"must be positive, got {text}")
    return value


def positive_int(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"must be a positive integer, got {text}")
    return value


def non_negative_int(text: str) -> int:
    value = int(text)
    if value < 0:
        raise argparse.ArgumentTypeError(f"must be >= 0, got {text}")
    return value


def electrode_count(text: str) -> int:
    value = int(text)
    if value < 2:
        raise argparse.ArgumentTypeError(f"need at least 2 electrodes, got {text}")
    return value


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        description="2D ERT Gauss-Newton inversion with Woodbury solvers"
    )
    parser.add_argument(
        "--config",
        default=None,
        help=f"Path to configuration file (default: {DEFAULT_CONFIG_PATH} if present)",
    )
    parser.add_argument("--seed", type=int, default=0, help="Random seed (default: 0)")
    commands = parser.add_subparsers(dest="command", required=True)

    mesh = commands.add_parser("mesh", help="Build the half-disk mesh and survey")
    mesh.add_argument("--nele", type=electrode_count, help="Number of electrodes")
    mesh.add_argument("--radius", type=positive_float, help="Half-disk radius")
    mesh.add_argument("--extent", type=float, nargs=2, metavar=("LO", "HI"))
    mesh.add_argument("--out", required=True, help="Mesh JSON output path")
    mesh.add_argument("--survey", help="Also write the pole-dipole survey CSV here")
    mesh.add_argument("--true-model", help="Also write the checkerboard model JSON here")
    mesh.add_argument("--reference-model", help="Also write the homogeneous model JSON here")

    forward = commands.add_parser("forward", help="Synthesize observations on the refined mesh")
    forward.add_argument("--mesh", required=True)
    forward.add_argument("--survey", required=True)
    forward.add_argument("--model", required=True, help="True model JSON")
    forward.add_argument("--out", required=True, help="Observations CSV output path")

    invert = commands.add_parser("invert", help="Run the Gauss-Newton inversion")
    invert.add_argument("--mesh", required=True)
    invert.add_argument("--survey", required=True)
    invert.add_argument("--obs", required=True, help="Observations CSV")
    invert.add_argument("--reference-model", help="Reference model JSON (default: homogeneous)")
    invert.add_argument("--beta", type=positive_float)
    invert.add_argument("--algo", choices=ALGORITHMS)
    invert.add_argument("--steps", type=positive_int)
    invert.add_argument("--tol", type=positive_float)
    invert.add_argument("--maxit", type=positive_int)
    invert.add_argument("--out", required=True, help="Result JSON output path")
    invert.add_argument("--report", help="Report CSV path (default: next to --out)")

    bench = commands.add_parser("bench", help="Scaling benchmark over electrode counts")
    bench.add_argument("--nele", type=electrode_count, nargs="+")
    bench.add_argument("--algos", choices=ALGORITHMS, nargs="+")
    bench.add_argument("--beta", type=positive_float)
    bench.add_argument("--steps", type=positive_int)
    bench.add_argument("--tol", type=positive_float)
    bench.add_argument("--out", required=True, help="Consolidated CSV output path")

    spectrum = commands.add_parser(
        "spectrum", help="Dense spectrum of the ideally preconditioned operator"
    )
    spectrum.add_argument("--nx", type=positive_int, default=6)
    spectrum.add_argument("--nz", type=positive_int, default=6)
    spectrum.add_argument("--beta", type=positive_float)
    spectrum.add_argument("--nmeas", type=non_negative_int, help="Rows of the random Jacobian")
    spectrum.add_argument("--dof-cap", type=positive_int)
    spectrum.add_argument("--out", required=True, help="Eigenvalue CSV output path")
    return parser


def _manifest_path(output: str) -> Path:
    return Path(output).resolve().parent / MANIFEST_NAME


def _gn_overrides(workflow: ErtWorkflow, args: argparse.Namespace) -> GnConfig:
    overrides: dict[str, Any] = {}
    if getattr(args, "beta", None) is not None:
        overrides["beta"] = args.beta
    if getattr(args, "algo", None) is not None:
        overrides["algorithm"] = args.algo
    if getattr(args, "steps", None) is not None:
        overrides["max_outer_steps"] = args.steps
    if getattr(args, "tol", None) is not None:
        overrides["minres_tol"] = args.tol
    if getattr(args, "maxit", None) is not None:
        overrides["minres_maxit"] = args.maxit
    config = replace(workflow.gn_config, **overrides)
    config.validate()
    return config


def _load_survey(path: str, mesh: Mesh) -> Survey:
    return Survey.load_csv(path, mesh.vertices[mesh.electrode_nodes, 0])


def cmd_mesh(args: argparse.Namespace, workflow: ErtWorkflow) -> RunManifest:
    if args.nele is not None:
        workflow.n_electrodes = args.nele
    if args.radius is not None:
        workflow.radius = args.radius
    if args.extent is not None:
        workflow.extent = tuple(args.extent)
    manifest = RunManifest("mesh", VERSION)
    manifest.config = {
        "n_electrodes": workflow.n_electrodes,
        "radius": workflow.radius,
        "extent": list(workflow.extent),
        "grading": asdict(workflow.grading),
    }

    mesh = workflow.build_mesh()
    mesh.save(args.out)
    manifest.add_file("mesh", args.out)
    print(f"Mesh: {mesh.n_vertices} vertices, {mesh.n_cells} cells -> {args.out}")

    if args.survey or args.true_model:
        survey = workflow.build_survey()
        if args.survey:
            survey.save_csv(args.survey)
            manifest.add_file("survey", args.survey)
            print(f"Survey: M={survey.M} configurations -> {args.survey}")
        if args.true_model:
            workflow.true_model(mesh, survey).save(args.true_model)
            manifest.add_file("true_model", args.true_model)
    if args.reference_model:
        workflow.reference_model(mesh).save(args.reference_model)
        manifest.add_file("reference_model", args.reference_model)
    return manifest


def cmd_forward(args: argparse.Namespace, workflow: ErtWorkflow) -> RunManifest:
    mesh = Mesh.load(args.mesh)
    survey = _load_survey(args.survey, mesh)
    model = ModelVector.load(args.model)
    if len(model) != mesh.n_cells:
        raise ParameterError(f"model has {len(model)} cells, mesh has {mesh.n_cells}")
    g_obs = workflow.forward(mesh, survey, model)
    save_observations(args.out, g_obs)
    print(f"Observations: {len(g_obs)} values -> {args.out}")

    manifest = RunManifest("forward", VERSION, config={"refinements": 1})
    for role, path in (("mesh", args.mesh), ("survey", args.survey), ("model", args.model)):
        manifest.add_file(role, path)
    manifest.add_file("observations", args.out)
    return manifest


def cmd_invert(args: argparse.Namespace, workflow: ErtWorkflow) -> RunManifest:
    gn_config = _gn_overrides(workflow, args)
    mesh = Mesh.load(args.mesh)
    survey = _load_survey(args.survey, mesh)
    g_obs = load_observations(args.obs)
    m_ref = ModelVector.load(args.reference_model) if args.reference_model else None

    model, report = workflow.invert(mesh, survey, g_obs, gn_config, m_ref)
    pretty = bool(section(workflow.config, "output").get("json_pretty_print", True))
    write_result_json(args.out, model, report, pretty)
    report_path = args.report or str(Path(args.out).with_suffix(".csv"))
    write_report_csv(report_path, report, survey.n_electrodes)
    print(f"Result: final misfit {report.final_misfit:.6e} -> {args.out}, {report_path}")

    manifest = RunManifest("invert", VERSION, config=asdict(gn_config))
    for role, path in (("mesh", args.mesh), ("survey", args.survey), ("observations", args.obs)):
        manifest.add_file(role, path)
    manifest.add_file("result", args.out)
    manifest.add_file("report", report_path)
    manifest.timings = {
        f"step_{step.step}_t_norm": step.t_norm for step in report.steps if step.t_norm is not None
    }
    return manifest


def cmd_bench(args: argparse.Namespace, workflow: ErtWorkflow) -> RunManifest:
    gn_config = _gn_overrides(workflow, args)
    rows = workflow.bench(args.nele, args.algos, gn_config)
    write_csv(args.out, BENCH_COLUMNS, rows)
    failures = sum(1 for row in rows if str(row["status"]).startswith("failed"))
    print(f"Bench: {len(rows)} rows ({failures} failed) -> {args.out}")

    manifest = RunManifest("bench", VERSION, config={**asdict(gn_config), "electrodes": args.nele})
    manifest.add_file("bench", args.out)
    return manifest


def cmd_spectrum(args: argparse.Namespace, workflow: ErtWorkflow) -> RunManifest:
    result = workflow.spectrum(args.nx, args.nz, args.nmeas, args.beta, args.seed, args.dof_cap)
    write_spectrum_csv(args.out, result.eigenvalues)
    summary_path = str(Path(args.out).with_suffix(".json"))
    Path(summary_path).write_text(json.dumps(result.to_dict(), indent=2))
    verdict = "PASS" if result.passed else "FAIL"
    print(
        f"Spectrum: {len(result.eigenvalues)} eigenvalues, inclusion {verdict} "
        f"(distance {result.distance:.2e}) -> {args.out}"
    )

    manifest = RunManifest(
        "spectrum",
        VERSION,
        config={"nx": args.nx, "nz": args.nz, "seed": args.seed, **result.to_dict()},
    )
    manifest.add_file("eigenvalues", args.out)
    manifest.add_file("summary", summary_path)
    return manifest


COMMANDS: dict[str, Callable[[argparse.Namespace, ErtWorkflow], RunManifest]] = {
    "mesh": cmd_mesh,
    "forward": cmd_forward,
    "invert": cmd_invert,
    "bench": cmd_bench,
    "spectrum": cmd_spectrum,
}


def main(argv: Optional[list[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)

    # Set up signal handler for graceful shutdown
    signal.signal(signal.SIGINT, signal_handler)

    try:
        config = load_config(args.config)
        configure_logging(section(config, "output"))
        workflow = ErtWorkflow(config=config)
        manifest = COMMANDS[args.command](args, workflow)
        manifest.config["seed"] = args.seed
        manifest.write(_manifest_path(args.out))
    except FileNotFoundError as e:
        print(f"Error: file '{e.filename}' not found.", file=sys.stderr)
        return EXIT_FAILURE
    except ParameterError as e:
        print(f"Error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as e:
        print(f"Error: {e}", file=sys.stderr)
        return EXIT_FAILURE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
