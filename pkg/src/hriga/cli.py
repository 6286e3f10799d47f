"""Command-line front end.

Exit codes: 0 success, 1 configuration error, 2 solver nonconvergence,
3 verification probe failure, 4 I/O error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .analysis import convergence_study, probe_trajectory, solve_case, trajectory_csv
from .config import ExperimentConfig
from .derham import ConfigurationError
from .solver import SolverNonConvergence

EXIT_OK, EXIT_CONFIG, EXIT_SOLVER, EXIT_PROBE, EXIT_IO = 0, 1, 2, 3, 4

log = logging.getLogger("hriga")


class ProbeFailure(RuntimeError):
    pass


def _load_config(args, required: bool = True, default_case: str = "deformed_square") -> ExperimentConfig:
    if args.config is None:
        if required:
            raise ConfigurationError("--config is required for this command")
        cfg = ExperimentConfig(case=default_case, h=(1 / 2, 1 / 3, 1 / 4))
    else:
        path = Path(args.config)
        if not path.is_file():
            raise FileNotFoundError(f"config file {path} not found")
        cfg = ExperimentConfig.load(path)
    cfg = cfg.with_overrides(seed=args.seed, threads=args.threads)
    if args.naive_spaces:
        cfg = cfg.with_overrides(naive=True)
    return cfg


def _out_path(args, cfg: ExperimentConfig, key: str, default: str) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out / cfg.output.get(key, default)


def _dump_json(obj, path: Path) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def cmd_convergence(args) -> int:
    cfg = _load_config(args)
    case = cfg.validate()
    if not case.has_exact:
        raise ConfigurationError(f"case {cfg.case!r} has no exact solution; use the cook command")
    target = _out_path(args, cfg, "csv", f"{cfg.case}_p{cfg.p}_r{cfg.r}.csv")
    report = convergence_study(case, cfg.p, cfg.r, cfg.h, cfg.solve_config(), naive=cfg.naive, threads=cfg.threads,
                               callback=lambda row: log.info("h=%g dof=%d sigma=%.6e", row.h, row.dof,
                                                             row.err_sigma_hdiv),
                               quadrature=cfg.quadrature_settings())
    report.to_csv(target)
    print(target)
    return EXIT_OK


def cmd_cook(args) -> int:
    cfg = _load_config(args)
    case = cfg.validate()
    target = _out_path(args, cfg, "csv", f"{cfg.case}_p{cfg.p}_trajectory.csv")
    rows = probe_trajectory(case, cfg.p, cfg.r, cfg.h, cfg.solve_config(), naive=cfg.naive, threads=cfg.threads,
                            callback=lambda row: log.info("dof=%d ux=%.6f uy=%.6f", row.dof, row.ux, row.uy),
                            quadrature=cfg.quadrature_settings())
    trajectory_csv(rows, target)
    print(target)
    return EXIT_OK


def cmd_verify(args) -> int:
    from .verification import verification_suite

    cfg = _load_config(args, required=False)
    probes = cfg.probes
    if args.probes:
        probes = tuple(s.strip() for s in args.probes.split(",") if s.strip())
    results = verification_suite(naive=cfg.naive, seed=cfg.seed, probes=probes)
    report = {"seed": cfg.seed, "naive": cfg.naive,
              "records": [rec for res in results for rec in res.records()]}
    target = _out_path(args, cfg, "json", "verification.json")
    _dump_json(report, target)
    print(target)
    failed = [res.label for res in results if not res.passed]
    if failed:
        raise ProbeFailure(f"probe(s) failed: {failed}")
    return EXIT_OK


def cmd_infsup(args) -> int:
    from .verification import infsup_probe

    cfg = _load_config(args, required=False)
    case = cfg.validate()
    res = infsup_probe(case.geometry, cfg.h, cfg.p, cfg.r, naive=cfg.naive, seed=cfg.seed)
    target = _out_path(args, cfg, "json", "infsup.json")
    _dump_json({"seed": cfg.seed, "naive": cfg.naive, "records": res.records()}, target)
    print(target)
    if not res.passed:
        raise ProbeFailure(f"inf-sup probe did not behave as expected ({res.expect})")
    return EXIT_OK


def cmd_export_vtk(args) -> int:
    from .vtk import export_vtk

    cfg = _load_config(args)
    case = cfg.validate()
    sol = solve_case(case, cfg.h[-1], cfg.p, cfg.r, cfg.solve_config(), naive=cfg.naive, threads=cfg.threads,
                     quadrature=cfg.quadrature_settings())
    target = _out_path(args, cfg, "vtk", f"{cfg.case}.vtk")
    for path in export_vtk(sol, target, m=cfg.vtk_samples):
        print(path)
    return EXIT_OK


COMMANDS = {
    "convergence": cmd_convergence,
    "cook": cmd_cook,
    "verify": cmd_verify,
    "export-vtk": cmd_export_vtk,
    "infsup": cmd_infsup,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hriga", description="Mixed isogeometric elasticity experiments.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="JSON experiment config")
        p.add_argument("--out", default=".", help="output directory")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--naive-spaces", action="store_true", help="use unstable equal-degree spaces")
        p.add_argument("--threads", type=int, default=None)
        if name == "verify":
            p.add_argument("--probes", help="comma-separated probe names (default: all)")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, stream=sys.stderr,
                        format="%(message)s")
    if args.threads is not None and args.threads < 1:
        print("error: --threads must be positive", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return COMMANDS[args.command](args)
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SolverNonConvergence as exc:
        print(f"solver did not converge: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except ProbeFailure as exc:
        print(f"verification failed: {exc}", file=sys.stderr)
        return EXIT_PROBE
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
