"""Command-line front end.

Exit codes: 0 success, 1 error, 2 fixed point not converged, 3 verification failed.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from dataclasses import dataclass, field
from pathlib import Path

from . import __version__
from .config import SolverConfig
from .driver import run_fixed_point
from .errors import IngestionError, OtmorphError
from .fields import export_frames, load_density, prepare_pair
from .mesh import Grid2D
from .storage import save_array
from .studies import run_studies
from .verification import verify_run

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_NOT_CONVERGED = 2
EXIT_VERIFY_FAILED = 3

logger = logging.getLogger("otmorph")


@dataclass
class RunManifest:
    subcommand: str
    config: SolverConfig
    output: Path | None = None
    inputs: dict = field(default_factory=dict)
    seed: int = 0
    frame_format: str = "pgm16"

    def to_dict(self) -> dict:
        return {
            "subcommand": self.subcommand,
            "inputs": {k: str(v) for k, v in self.inputs.items()},
            "output": str(self.output) if self.output else None,
            "seed": self.seed,
            "frame_format": self.frame_format,
            "config": self.config.to_dict(),
        }


def _write_json(path: Path, data) -> None:
    path.write_text(json.dumps(data, indent=2, sort_keys=True) + "\n")


def resolve_config(args) -> SolverConfig:
    cfg = SolverConfig.from_json(args.config) if getattr(args, "config", None) else SolverConfig()
    overrides = {k: getattr(args, k) for k in ("nx", "ny", "nt") if getattr(args, k, None) is not None}
    return cfg.replace(**overrides) if overrides else cfg


def cmd_morph(manifest: RunManifest) -> int:
    cfg = manifest.config
    out = manifest.output
    for key, path in manifest.inputs.items():
        if not Path(path).is_file():
            raise IngestionError(f"input {key} not found", path)
    out.mkdir(parents=True, exist_ok=True)
    _write_json(out / "config.json", cfg.to_dict())
    _write_json(out / "manifest.json", manifest.to_dict())

    grid = Grid2D(cfg.nx, cfg.ny)
    raw0 = load_density(manifest.inputs["rho0"], grid)
    raw1 = load_density(manifest.inputs["rho1"], grid)
    rho0, rho1 = prepare_pair(raw0, raw1, cfg)
    rho, v, report = run_fixed_point(rho0, rho1, cfg)

    meta = {"nx": cfg.nx, "ny": cfg.ny, "nt": cfg.nt}
    save_array(out, "rho0", rho0.values, **meta)
    save_array(out, "rho1", rho1.values, **meta)
    save_array(out, "rho", rho.values, **meta)
    save_array(out, "velocity", v.values, **meta)
    export_frames(rho, out / "frames", manifest.frame_format)
    data = report.to_dict()
    final = report.final
    data["summary"] = {
        "cost": final.cost,
        "lsq_residual": final.lsq_residual,
        "fp_residual_l2": final.fp_residual_l2,
        "max_mass_drift": final.max_mass_drift,
    }
    _write_json(out / "report.json", data)
    logger.info("morph finished: %s after %d iterations", report.verdict, report.iterations)
    return EXIT_OK if report.converged else EXIT_NOT_CONVERGED


def cmd_verify(manifest: RunManifest) -> int:
    run_dir = manifest.inputs["run"]
    result = verify_run(run_dir, manifest.seed)
    _write_json(Path(run_dir) / "verify.json", result)
    for name, check in result["checks"].items():
        logger.info("%-24s %s", name, "pass" if check["passed"] else "FAIL")
    return EXIT_OK if result["passed"] else EXIT_VERIFY_FAILED


def cmd_convergence(manifest: RunManifest) -> int:
    out = manifest.output
    out.mkdir(parents=True, exist_ok=True)
    _write_json(out / "config.json", manifest.config.to_dict())
    rows = run_studies(manifest.config)
    with open(out / "convergence.csv", "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=["case", "n", "nt", "h", "error", "order"])
        writer.writeheader()
        for row in rows:
            writer.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})
    return EXIT_OK


class _Parser(argparse.ArgumentParser):
    """Usage errors exit with 1; exit code 2 is reserved for non-convergence."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_ERROR, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("-v", "--verbose", action="store_true", default=argparse.SUPPRESS)
    common.add_argument(
        "--json-errors", action="store_true", default=argparse.SUPPRESS,
        help="print errors as JSON on stderr",
    )
    parser = _Parser(prog="otmorph", description=__doc__.splitlines()[0], parents=[common])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    morph = sub.add_parser("morph", parents=[common], help="compute the transport path between two PGM images")
    morph.add_argument("--rho0", required=True, type=Path)
    morph.add_argument("--rho1", required=True, type=Path)
    morph.add_argument("--out", required=True, type=Path)
    morph.add_argument("--nx", type=int)
    morph.add_argument("--ny", type=int)
    morph.add_argument("--nt", type=int)
    morph.add_argument("--config", type=Path)
    morph.add_argument("--format", dest="frame_format", choices=["pgm16", "csv"], default="pgm16")

    verify = sub.add_parser("verify", parents=[common], help="check a finished run against the oracles")
    verify.add_argument("--run", required=True, type=Path)
    verify.add_argument("--seed", type=int, default=0)

    conv = sub.add_parser("convergence", parents=[common], help="mesh-refinement study")
    conv.add_argument("--out", required=True, type=Path)
    conv.add_argument("--config", type=Path)
    return parser


def _manifest(args) -> RunManifest:
    if args.command == "morph":
        return RunManifest(
            "morph", resolve_config(args), args.out.resolve(),
            {"rho0": args.rho0.resolve(), "rho1": args.rho1.resolve()},
            frame_format=args.frame_format,
        )
    if args.command == "verify":
        run = args.run.resolve()
        cfg_path = run / "config.json"
        if not cfg_path.exists():
            raise IngestionError("run directory has no config.json", cfg_path)
        return RunManifest("verify", SolverConfig.from_json(cfg_path), None, {"run": run}, seed=args.seed)
    return RunManifest("convergence", resolve_config(args), args.out.resolve())


COMMANDS = {"morph": cmd_morph, "verify": cmd_verify, "convergence": cmd_convergence}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    args.verbose = getattr(args, "verbose", False)
    args.json_errors = getattr(args, "json_errors", False)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        manifest = _manifest(args)
        return COMMANDS[args.command](manifest)
    except (OtmorphError, OSError) as exc:
        if args.json_errors:
            payload = {"error": type(exc).__name__, "message": str(exc)}
            for attr in ("path", "position", "iteration", "residual"):
                value = getattr(exc, attr, None)
                if value is not None:
                    payload[attr] = str(value) if attr == "path" else value
            print(json.dumps(payload), file=sys.stderr)
        else:
            print(f"otmorph: error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
