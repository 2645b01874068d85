"""Command-line front end: mesh generation, solves, convergence studies,
spectrum reports. Every command writes a JSON manifest into its output
directory so a run can be reproduced from flags alone."""
from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .cases import CaseDefinition, case_by_name, graded_cavity_mesh, mesh_for_case
from .mesh import (
    CellType,
    Mesh,
    distort,
    generate_annulus,
    generate_structured_quads,
    generate_structured_tris,
    read_mesh,
    write_mesh,
)
from .newton import NewtonReport, solve_stokes_case
from .postprocess import (
    cell_mass_flux,
    convergence_study,
    measure_errors,
    solve_case_on_mesh,
    tau_p_sweep,
    write_csv,
    write_vtk,
)
from .stabilization import PressureConstraint, RiemannSolver, load_config
from .stokes import assemble_stokes, dump_matrix, spectrum
from .cases import synthetic_stokes

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_SOLVER_FAILURE = 1
EXIT_USAGE = 2


def _write_manifest(outdir: Path, command: str, args: argparse.Namespace, config=None, extra=None):
    payload = {
        "command": command,
        "argv": {k: v for k, v in vars(args).items() if k != "func"},
        "version": __version__,
        "timestamp": time.strftime("%Y-%m-%dT%H:%M:%S"),
    }
    if config is not None:
        payload["config"] = {
            "nu": config.nu,
            "beta": config.beta,
            "xi": config.xi,
            "tau_p": config.tau_p,
            "riemann": config.riemann.value,
            "newton_tol": config.newton_tol,
            "newton_max_iter": config.newton_max_iter,
            "pressure_constraint": config.pressure_constraint.value,
        }
    if extra:
        payload.update(extra)
    outdir.mkdir(parents=True, exist_ok=True)
    (outdir / "manifest.json").write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def _mesh_from_spec(spec: str, seed: int = 0, distortion: float = 0.0) -> Mesh:
    """Build a mesh from a path or a `kind:AxB` descriptor."""
    p = Path(spec)
    if p.exists():
        mesh = read_mesh(p)
    else:
        kind, _, dims = spec.partition(":")
        if kind in ("quad", "tri", "annulus"):
            try:
                a, b = (int(t) for t in dims.lower().split("x"))
            except ValueError:
                raise SystemExit(f"bad mesh spec {spec!r}; expected kind:AxB")
            if kind == "quad":
                mesh = generate_structured_quads(a, b)
            elif kind == "tri":
                mesh = generate_structured_tris(a, b)
            else:
                mesh = generate_annulus(a, b, 1.0, 2.0)
        elif kind == "graded-cavity":
            mesh = graded_cavity_mesh(int(dims))
        else:
            raise SystemExit(f"unknown mesh spec {spec!r}")
    if distortion > 0.0:
        mesh = distort(mesh, distortion, seed)
    return mesh


def _config_for(case: CaseDefinition, args) -> "SolverConfig":
    overrides = {}
    if getattr(args, "riemann", None):
        overrides["riemann"] = RiemannSolver(args.riemann)
    if getattr(args, "tau_p", None) is not None:
        overrides["tau_p"] = args.tau_p
    if getattr(args, "beta", None) is not None:
        overrides["beta"] = args.beta
    if getattr(args, "xi", None) is not None:
        overrides["xi"] = args.xi
    if getattr(args, "tol", None) is not None:
        overrides["newton_tol"] = args.tol
    if getattr(args, "max_iter", None) is not None:
        overrides["newton_max_iter"] = args.max_iter
    if getattr(args, "config", None):
        return load_config(args.config, **overrides)
    return case.default_config(**overrides)


def cmd_mesh(args) -> int:
    if args.quad:
        mesh = generate_structured_quads(args.quad[0], args.quad[1], tuple(args.domain))
    elif args.tri:
        mesh = generate_structured_tris(args.tri[0], args.tri[1], tuple(args.domain))
    elif args.annulus:
        mesh = generate_annulus(
            args.annulus[0], args.annulus[1], args.inner, args.outer
        )
    elif args.graded_cavity:
        mesh = graded_cavity_mesh(args.graded_cavity)
    else:
        raise SystemExit("one of --quad/--tri/--annulus/--graded-cavity is required")
    if args.distort > 0.0:
        mesh = distort(mesh, args.distort, args.seed)
    if args.tag_case:
        mesh = case_by_name(args.tag_case, args.re).tag(mesh)
    write_mesh(mesh, args.output)
    print(
        f"wrote {args.output}: {mesh.n_cells} cells, {mesh.n_faces} faces "
        f"({mesh.boundary_faces().size} boundary)"
    )
    return EXIT_OK


def cmd_solve(args) -> int:
    case = case_by_name(args.case, args.re)
    if args.mesh:
        mesh = _mesh_from_spec(args.mesh, args.seed, args.distort)
    else:
        mesh = mesh_for_case(case, args.level, CellType(args.cells))
    if not mesh.boundary_tags:
        mesh = case.tag(mesh)
    config = _config_for(case, args)
    outdir = Path(args.output)
    outdir.mkdir(parents=True, exist_ok=True)

    try:
        state, report = solve_case_on_mesh(mesh, config, case)
    except RuntimeError as exc:
        logger.error("solver failed: %s", exc)
        _write_manifest(outdir, "solve", args, config, {"status": "failed", "error": str(exc)})
        return EXIT_SOLVER_FAILURE

    write_vtk(mesh, state, outdir / "fields.vtk")
    if report is not None:
        report.write_csv(outdir / "newton.csv")
    J, max_je, sum_je = cell_mass_flux(mesh, case, state)
    extra = {
        "status": "converged",
        "max_cell_mass_flux": max_je,
        "total_mass_flux": sum_je,
        "newton_iterations": report.iterations if report else 0,
        "outputs": ["fields.vtk"] + (["newton.csv"] if report else []),
    }
    if case.exact_velocity is not None:
        rec = measure_errors(mesh, case, state, report=report)
        extra["errors"] = {
            "u": rec.err_u,
            "uhat": rec.err_uhat,
            "p": rec.err_p,
            "phat": rec.err_phat,
            "stress": rec.err_stress,
        }
    _write_manifest(outdir, "solve", args, config, extra)
    print(f"converged; outputs in {outdir}")
    return EXIT_OK


def cmd_converge(args) -> int:
    case = case_by_name(args.case, args.re)
    config = _config_for(case, args)
    cell_type = CellType(args.cells)
    outdir = Path(args.output)
    outdir.mkdir(parents=True, exist_ok=True)

    def builder(level: int) -> Mesh:
        mesh = mesh_for_case(case, level, cell_type)
        if args.distort > 0.0:
            mesh = case.tag(distort(mesh, args.distort, args.seed))
        return mesh

    if args.sweep_tau_p:
        mesh = builder(args.sweep_level)
        values = [float(v) for v in args.tau_p_values.split(",")]
        rows = tau_p_sweep(case, mesh, values, config)
        write_csv(
            [
                (r.h, r.err_u, r.err_p, r.err_stress, r.max_Je, r.sum_Je)
                for r in rows
            ],
            ["tau_p", "err_u", "err_p", "err_L", "maxJe", "sumJe"],
            outdir / "tau_p_sweep.csv",
        )
        _write_manifest(outdir, "converge", args, config, {"mode": "tau_p_sweep"})
        print(f"sweep written to {outdir}/tau_p_sweep.csv")
        return EXIT_OK

    levels = list(range(1, args.levels + 1))
    try:
        report = convergence_study(case, builder, levels, config)
    except RuntimeError as exc:
        logger.error("study failed: %s", exc)
        _write_manifest(outdir, "converge", args, config, {"status": "failed", "error": str(exc)})
        return EXIT_SOLVER_FAILURE
    report.write_csv(outdir / "convergence.csv")
    _write_manifest(outdir, "converge", args, config, {"status": "ok"})
    for rec, rate in zip(report.records[1:], report.rates("err_u")):
        print(f"level {rec.level}: err_u={rec.err_u:.3e} rate={rate:.2f}")
    return EXIT_OK


def cmd_spectrum(args) -> int:
    case = synthetic_stokes()
    gen = generate_structured_quads if args.cells == "quad" else generate_structured_tris
    mesh = gen(args.n, args.n)
    if args.distort > 0.0:
        mesh = distort(mesh, args.distort, args.seed)
    mesh = case.tag(mesh)
    config = case.default_config()
    system = assemble_stokes(mesh, config, case)
    outdir = Path(args.output)
    outdir.mkdir(parents=True, exist_ok=True)
    if args.dump_matrix:
        dump_matrix(system, outdir / "matrix.txt")
    try:
        eigvals, summary = spectrum(system, cap=args.cap)
    except ValueError as exc:
        raise SystemExit(str(exc))
    write_csv(
        [(float(v.real), float(v.imag)) for v in eigvals],
        ["real", "imag"],
        outdir / "eigenvalues.csv",
    )
    _write_manifest(
        outdir,
        "spectrum",
        args,
        config,
        {
            "dimension": summary.dimension,
            "nnz": summary.nnz,
            "min_real": summary.min_real,
            "max_real": summary.max_real,
            "max_abs_imag": summary.max_abs_imag,
            "complex_fraction": summary.complex_fraction,
        },
    )
    print(
        f"dimension {summary.dimension}, nnz {summary.nnz}, "
        f"Re(lambda) in [{summary.min_real:.3e}, {summary.max_real:.3e}], "
        f"complex fraction {summary.complex_fraction:.3%}"
    )
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hpfcfv",
        description="Hybrid-pressure face-centred finite volume solver (2D)",
    )
    parser.add_argument("--threads", type=int, default=None, help="cap BLAS worker threads")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    m = sub.add_parser("mesh", help="generate/distort/tag a mesh file")
    m.add_argument("--quad", nargs=2, type=int, metavar=("NX", "NY"))
    m.add_argument("--tri", nargs=2, type=int, metavar=("NX", "NY"))
    m.add_argument("--annulus", nargs=2, type=int, metavar=("NTHETA", "NR"))
    m.add_argument("--graded-cavity", type=int, metavar="LEVEL")
    m.add_argument("--domain", nargs=4, type=float, default=[0.0, 0.0, 1.0, 1.0],
                   metavar=("X0", "Y0", "X1", "Y1"))
    m.add_argument("--inner", type=float, default=1.0)
    m.add_argument("--outer", type=float, default=2.0)
    m.add_argument("--distort", type=float, default=0.0)
    m.add_argument("--seed", type=int, default=0)
    m.add_argument("--tag-case", choices=["stokes-synthetic", "couette", "cavity"])
    m.add_argument("--re", type=float, default=None)
    m.add_argument("-o", "--output", required=True)
    m.set_defaults(func=cmd_mesh)

    s = sub.add_parser("solve", help="solve a benchmark case")
    s.add_argument("--case", required=True,
                   choices=["stokes-synthetic", "couette", "cavity"])
    s.add_argument("--mesh", help="mesh file or spec (quad:NxN, tri:NxN, annulus:NTxNR, graded-cavity:L)")
    s.add_argument("--level", type=int, default=1, help="mesh family level when --mesh is omitted")
    s.add_argument("--cells", choices=["quad", "tri"], default="quad")
    s.add_argument("--re", type=float, default=None)
    s.add_argument("--riemann", choices=["lf", "hll"], default=None)
    s.add_argument("--tau-p", dest="tau_p", type=float, default=None)
    s.add_argument("--beta", type=float, default=None)
    s.add_argument("--xi", type=float, default=None)
    s.add_argument("--tol", type=float, default=None)
    s.add_argument("--max-iter", dest="max_iter", type=int, default=None)
    s.add_argument("--distort", type=float, default=0.0)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--config", help="JSON config file overriding case defaults")
    s.add_argument("-o", "--output", default="run")
    s.set_defaults(func=cmd_solve)

    c = sub.add_parser("converge", help="mesh-family convergence study")
    c.add_argument("--case", required=True,
                   choices=["stokes-synthetic", "couette", "cavity"])
    c.add_argument("--cells", choices=["quad", "tri"], default="quad")
    c.add_argument("--levels", type=int, default=4)
    c.add_argument("--re", type=float, default=None)
    c.add_argument("--riemann", choices=["lf", "hll"], default=None)
    c.add_argument("--distort", type=float, default=0.0)
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--sweep-tau-p", dest="sweep_tau_p", action="store_true")
    c.add_argument("--sweep-level", type=int, default=2)
    c.add_argument(
        "--tau-p-values",
        default="1e-4,1e-3,1e-2,1e-1,1,10",
        help="comma-separated grid for --sweep-tau-p",
    )
    c.add_argument("--config")
    c.add_argument("-o", "--output", default="study")
    c.set_defaults(func=cmd_converge)

    e = sub.add_parser("spectrum", help="Stokes global-matrix spectrum study")
    e.add_argument("--cells", choices=["quad", "tri"], default="quad")
    e.add_argument("--n", type=int, default=16)
    e.add_argument("--distort", type=float, default=0.0)
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--cap", type=int, default=4096)
    e.add_argument("--dump-matrix", action="store_true")
    e.add_argument("-o", "--output", default="spectrum")
    e.set_defaults(func=cmd_spectrum)

    return parser


def _limit_threads(n: int) -> None:
    try:
        from threadpoolctl import threadpool_limits

        threadpool_limits(limits=n)
    except ImportError:
        import os

        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
            os.environ[var] = str(n)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )
    if args.threads:
        _limit_threads(args.threads)
    try:
        return args.func(args)
    except (ValueError, FileNotFoundError) as exc:
        parser.exit(EXIT_USAGE, f"error: {exc}\n")
    except RuntimeError as exc:
        logger.error("%s", exc)
        return EXIT_SOLVER_FAILURE


if __name__ == "__main__":
    sys.exit(main())
