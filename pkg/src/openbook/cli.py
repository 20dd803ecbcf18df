"""Command line entry point.

Exit codes: 0 success, 2 invalid input, 3 eigensolver stall.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from .eigensolve import SolverStalled
from .geometry import GeometryError
from .harness import (
    ConfigError,
    ExperimentConfig,
    fattened_csv,
    limit_csv,
    run_convergence,
    run_fattened,
    run_limit,
    run_transfer_defects,
    write_report,
)
from .transfer import defects_csv

EXIT_OK, EXIT_INVALID, EXIT_STALL = 0, 2, 3


class RunFailed(RuntimeError):
    """Some solves stalled; their partial results were still written."""


def _load(args) -> ExperimentConfig:
    cfg = ExperimentConfig.from_json(args.config) if args.config else ExperimentConfig()
    if args.out is not None:
        cfg = replace(cfg, out=args.out)
    if args.seed is not None:
        if not 0 <= args.seed < 2**64:
            raise ConfigError("seed must fit in an unsigned 64-bit integer")
        cfg = replace(cfg, seed=args.seed)
    if args.threads is not None:
        if args.threads < 1:
            raise ConfigError("threads must be >= 1")
        cfg = replace(cfg, threads=args.threads)
    cfg.validate()
    return cfg


def cmd_limit(cfg: ExperimentConfig, out: Path):
    run = run_limit(cfg)
    (out / "limit.csv").write_text(limit_csv(run))
    (out / "limit.json").write_text(
        json.dumps(
            {
                "h": run.h_list,
                "results": [r.to_dict() for r in run.results],
                "extrapolated": run.extrapolated.tolist(),
                "oracle": None if run.oracle is None else run.oracle.tolist(),
                "multiplicities": run.multiplicities(),
            },
            indent=2,
        )
    )
    print(limit_csv(run), end="")


def cmd_fattened(cfg: ExperimentConfig, out: Path):
    runs = run_fattened(cfg)
    text = fattened_csv(runs)
    (out / "fattened.csv").write_text(text)
    print(text, end="")
    failures = [msg for r in runs for msg in r.failures]
    if failures:
        raise RunFailed("; ".join(failures))


def cmd_converge(cfg: ExperimentConfig, out: Path):
    report = run_convergence(cfg)
    paths = write_report(report, out)
    for w in report.warnings:
        print(w)
    print(paths["csv"].read_text(), end="")
    if report.failures:
        raise RunFailed("; ".join(report.failures))


def cmd_defects(cfg: ExperimentConfig, out: Path):
    reports = run_transfer_defects(cfg)
    text = defects_csv(reports)
    (out / "defects.csv").write_text(text)
    print(text, end="")


def cmd_mesh_export(cfg: ExperimentConfig, out: Path):
    from .femcore import assemble_surface, assemble_volume
    from .io import write_matrix_market, write_vtk_surface, write_vtk_tets
    from .meshing import fattened_mesh, mesh_surface

    s = cfg.structure()
    surf = mesh_surface(s, cfg.surface_h_list[-1])
    write_vtk_surface(out / "surface.vtk", surf)
    f2 = assemble_surface(surf)
    write_matrix_market(out / "surface_K.mtx", f2.K, "surface stiffness")
    write_matrix_market(out / "surface_M.mtx", f2.M, "surface mass")
    h = cfg.h_list[-1]
    for eps in cfg.eps_list:
        vol = fattened_mesh(s, eps, h, cfg.n_z(h))
        write_vtk_tets(out / f"fattened_eps{eps:g}.vtk", vol)
        f3 = assemble_volume(vol)
        write_matrix_market(out / f"fattened_eps{eps:g}_K.mtx", f3.K, f"stiffness eps={eps:g}")
        write_matrix_market(out / f"fattened_eps{eps:g}_M.mtx", f3.M, f"mass eps={eps:g}")
    for p in sorted(out.iterdir()):
        print(p)


COMMANDS = {
    "limit-spectrum": (cmd_limit, "surface FEM spectrum of the limit operator"),
    "fattened-spectrum": (cmd_fattened, "3D Neumann spectra for every (eps, h)"),
    "converge": (cmd_converge, "full eps-convergence report (CSV, JSON, SVG)"),
    "transfer-defects": (cmd_defects, "isometry and energy defects of the transfer maps"),
    "mesh-export": (cmd_mesh_export, "write meshes as VTK and forms as Matrix Market"),
}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="openbook", description="Spectra of fattened periodic open books.")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)
    for name, (_, help_) in COMMANDS.items():
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config", type=Path, help="JSON file with ExperimentConfig fields")
        p.add_argument("--out", help="output directory")
        p.add_argument("--seed", type=int)
        p.add_argument("--threads", type=int)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = _load(args)
        out = Path(cfg.out)
        out.mkdir(parents=True, exist_ok=True)
        COMMANDS[args.command][0](cfg, out)
    except (ConfigError, GeometryError, ValueError, FileNotFoundError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (SolverStalled, RunFailed) as exc:
        print(f"solver stalled: {exc}", file=sys.stderr)
        return EXIT_STALL
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
