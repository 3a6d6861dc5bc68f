"""
Command-line front end.

    sinvt lsd      --config run.json --out results/
    sinvt clt      --config run.json --out results/ [--crosscheck]
    sinvt simulate --config run.json --out results/ --threads 4 --seed 7
    sinvt verify

Flags override the matching config fields. Exit codes: 0 success, 1 a
verification or crosscheck failed, 2 bad configuration, 3 solver or harness
failure, 4 Monte Carlo disagreed with the theory beyond the z-score gate.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from . import __version__
from .clt import clt_vector
from .config import ConfigError, RunConfig, apply_overrides, load_config, parse_config
from .contour import ContourError
from .ensemble import run_mc
from .lsd import density, default_grid, lsd_functional, numeric_support
from .oracles import reference_clt
from .stieltjes import NearCriticalError, SolverError
from .verify import run_checks

log = logging.getLogger("sinvt")

EXIT_OK = 0
EXIT_CHECK = 1
EXIT_CONFIG = 2
EXIT_SOLVER = 3
EXIT_GATE = 4

CROSSCHECK_TOLERANCE = 1e-7
DEFAULT_Z_GATE = 4.0


def _dumps(doc: dict[str, Any]) -> str:
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def _write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)
    print(path)


def _relative_gap(a, b) -> float:
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    if a.size == 0:
        return 0.0
    return float(np.max(np.abs(a - b) / np.maximum(1.0, np.abs(a))))


# --------------------------------------------------------------------------
# workflows


def cmd_lsd(cfg: RunConfig) -> int:
    opts = cfg.section("lsd")
    params = cfg.params
    if "grid" in opts:
        grid = np.asarray(opts["grid"], dtype=float)
    else:
        grid = default_grid(params, opts.get("grid_points", 4001))
    curve = density(params, grid, opts.get("eps_schedule"), cfg.solver)
    intervals = numeric_support(params, opts.get("grid_points", 4001),
                                opts.get("support_threshold", 1e-6), cfg.solver)
    functionals = {f.label: lsd_functional(f, params, config=cfg.solver) for f in cfg.functions}
    report = {
        "meta": cfg.meta,
        "y": params.y,
        "population": params.measure.to_records(),
        "support": [list(iv) for iv in intervals],
        "zero_mass": curve.zero_mass,
        "mass": curve.mass(),
        "flagged_points": int(curve.flagged.sum()) if curve.flagged is not None else 0,
        "functionals": functionals,
    }
    out = cfg.output_dir
    _write(out / "lsd_density.csv", curve.to_csv(cfg.csv_preamble))
    _write(out / "lsd_support.json", _dumps(report))
    return EXIT_OK


def _crosscheck(cfg: RunConfig, result) -> dict[str, Any]:
    params = cfg.params
    if params.measure.zero_mass > 0.0:
        raise ConfigError("--crosscheck needs an invertible T; the population has an atom at 0")
    ref = reference_clt(cfg.functions, params)
    kappa = params.moments.kappa
    beta = params.moments.beta_x if result.diagnostics.get("kernel_mode", "none") != "none" else 0.0
    mean = (kappa - 1) * ref.mean + beta * ref.mean_beta
    cov = kappa * ref.covariance + beta * ref.covariance_beta
    dm = _relative_gap(result.mean, mean)
    dc = _relative_gap(result.covariance, cov)
    return {
        "oracle": "classical CLT for T^{-1/2} S T^{-1/2} in the w = 1/z plane",
        "mean": mean.tolist(),
        "covariance": cov.tolist(),
        "max_mean_deviation": dm,
        "max_covariance_deviation": dc,
        "max_deviation": max(dm, dc),
        "tolerance": CROSSCHECK_TOLERANCE,
        "passed": bool(max(dm, dc) < CROSSCHECK_TOLERANCE),
    }


def cmd_clt(cfg: RunConfig, crosscheck: bool = False) -> int:
    result = clt_vector(cfg.functions, cfg.params, contours=cfg.contours, kernels=cfg.kernels(),
                        quadrature=cfg.quadrature)
    doc = {"meta": cfg.meta, "y": cfg.params.y, "population": cfg.params.measure.to_records(),
           **result.to_dict()}
    code = EXIT_OK
    if crosscheck:
        block = _crosscheck(cfg, result)
        doc["crosscheck"] = block
        if not block["passed"]:
            print(f"crosscheck failed: max deviation {block['max_deviation']:.3e}", file=sys.stderr)
            code = EXIT_CHECK
    _write(cfg.output_dir / "clt.json", _dumps(doc))
    return code


def cmd_simulate(cfg: RunConfig) -> int:
    mc = cfg.mc_config()
    opts = cfg.section("mc")
    gate = float(opts.get("z_gate", DEFAULT_Z_GATE))
    params = mc.params
    theory = clt_vector(mc.fs, params, kernels=cfg.kernels(params), quadrature=cfg.quadrature)
    report = run_mc(mc, theory)
    doc = {"meta": cfg.meta, "z_gate": gate, "passed": report.passes(gate), **report.to_dict()}
    out = cfg.output_dir
    _write(out / "simulate.json", _dumps(doc))
    if opts.get("write_replicates", False):
        _write(out / "simulate_replicates.csv", report.replicates_csv(cfg.csv_preamble))
    if not report.passes(gate):
        print(f"z-score gate failed: max |z| = {report.max_abs_z():.3f} >= {gate:g}", file=sys.stderr)
        return EXIT_GATE
    return EXIT_OK


def cmd_verify(cfg: RunConfig | None, out: Path | None) -> int:
    results = run_checks()
    for r in results:
        print(r.line())
    if out is not None:
        doc = {
            "meta": cfg.meta if cfg is not None else {"version": __version__},
            "checks": [
                {"name": r.name, "anchor": r.anchor, "passed": r.passed,
                 "value": r.value if np.isfinite(r.value) else None, "limit": r.threshold}
                for r in results
            ],
        }
        _write(out / "verify.json", _dumps(doc))
    return EXIT_OK if all(r.passed for r in results) else EXIT_CHECK


# --------------------------------------------------------------------------
# entry point


def _seed(text: str) -> int:
    value = int(text)
    if not 0 <= value < 2**64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return value


def _threads(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError("threads must be positive")
    return value


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sinvt", description=__doc__.split("\n\n")[0].strip())
    parser.add_argument("--version", action="version", version=f"sinvt {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {
        "lsd": "density, support and functionals of the limiting spectral distribution",
        "clt": "mean and covariance of the limiting linear spectral statistics",
        "simulate": "Monte Carlo check of the CLT",
        "verify": "run the built-in identity and oracle checks",
    }
    for name, text in helps.items():
        p = sub.add_parser(name, help=text, description=text)
        p.add_argument("--config", type=Path, required=name != "verify", help="JSON run configuration")
        p.add_argument("--out", type=Path, help="output directory (overrides output.dir)")
        p.add_argument("--threads", type=_threads, help="worker threads (overrides mc.workers)")
        p.add_argument("--seed", type=_seed, help="master seed (overrides mc.seed)")
        if name == "clt":
            p.add_argument("--crosscheck", action="store_true",
                           help="compare with the inverted-picture oracle (invertible T only)")
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        cfg = None
        if args.config is not None:
            raw = apply_overrides(load_config(args.config), args.seed, args.threads,
                                  None if args.out is None else str(args.out))
            cfg = parse_config(raw)
        if args.command == "verify":
            return cmd_verify(cfg, args.out if args.out is not None else
                              (cfg.output_dir if cfg is not None and "output" in cfg.raw else None))
        if args.command == "lsd":
            return cmd_lsd(cfg)
        if args.command == "clt":
            return cmd_clt(cfg, args.crosscheck)
        return cmd_simulate(cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NearCriticalError as exc:
        print(f"contour error: a node lies too close to a support edge; widen the contour: {exc}",
              file=sys.stderr)
        return EXIT_SOLVER
    except ContourError as exc:
        print(f"contour error: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except (SolverError, ArithmeticError, RuntimeError, ValueError) as exc:
        print(f"solver error: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
