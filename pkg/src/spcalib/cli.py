"""
Command-line interface.

Exit codes: 0 success, 1 data or I/O error, 2 usage error.
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path

from . import __version__
from .errors import CalibrationError
from .fileio import dumps_report, format_run, format_table, read_run, write_run
from .physics import ApparatusConfig
from .pipeline import (
    AnalysisConfig,
    load_config,
    powerlaw_dict,
    report_document,
    report_tables,
    residual_dict,
    run_pipeline,
    vc_dict,
    write_report,
)
from .scaling import FREE, parse_mode
from .synth import PRESETS, RUN1_STEPS, generate_run, preset_truth, run1_plan

logger = logging.getLogger("spcalib")


def _mode(text: str):
    try:
        return parse_mode(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="spcalib",
        description="Electrostatic calibration analysis for sphere-plane force measurements.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="JSON analysis config (apparatus, modes, lm, sigma_floor, ...)")
    common.add_argument("--out", type=Path, help="output file (directory for 'report'); stdout if omitted")

    sim = sub.add_parser("simulate", parents=[common], help="generate a synthetic run file")
    sim.add_argument("--seed", type=int, required=True, help="seed for step spacing and noise")
    sim.add_argument("--preset", choices=sorted(PRESETS), default="run1", help="ground-truth preset (default run1)")
    sim.add_argument("--noise", type=float, help="relative k_el noise (preset default otherwise)")
    sim.add_argument("--gamma", type=float, help="true curvature exponent (preset default otherwise)")
    sim.add_argument("--steps", type=int, default=RUN1_STEPS, help=f"number of PZT steps (default {RUN1_STEPS})")

    def analysis(name: str, help_text: str, multi_mode: bool = False) -> argparse.ArgumentParser:
        p = sub.add_parser(name, parents=[common], help=help_text)
        p.add_argument("run", type=Path, help="run file")
        if multi_mode:
            p.add_argument("--mode", type=_mode, action="append",
                           help="fit mode 'free' or 'fixed:<gamma>'; repeatable (default: free and fixed:-2)")
        else:
            p.add_argument("--mode", type=_mode, help="fit mode 'free' or 'fixed:<gamma>' (default free)")
        p.add_argument("--sigma-floor", type=float, help="relative k_el uncertainty floor (default 0.04; 0 disables)")
        p.add_argument("--seed", type=int, help="accepted for symmetry with 'simulate'; analysis is deterministic")
        return p

    analysis("fit-parabolas", "per-step parabola fits as CSV")
    analysis("fit-powerlaw", "power-law fit of the curvature series as JSON")
    p = analysis("stability", "progressive-inclusion stability scan as CSV")
    p.add_argument("--min-points", type=int, help="smallest prefix length (default 4, at least 5 in free mode)")
    analysis("distances", "linear vs curvature distance estimates as CSV")
    analysis("vctrend", "contact potential vs distance models as JSON")
    p = analysis("residual", "residual force-gradient power law as JSON")
    p.add_argument("--method", choices=["joint", "distance"], help="residual fit method (default joint)")
    p.add_argument("--nu-p-source", choices=["config", "far_steps"], help="free-frequency source (default config)")
    analysis("veq", "equivalent voltage vs contact-potential miscompensation as CSV")
    p = analysis("report", "full pipeline: report.json plus plot tables", multi_mode=True)
    p.add_argument("--min-points", type=int, help="smallest stability prefix length")
    p.add_argument("--method", choices=["joint", "distance"], help="residual fit method (default joint)")
    p.add_argument("--nu-p-source", choices=["config", "far_steps"], help="free-frequency source (default config)")
    return parser


def _emit(text: str, out: Path | None) -> None:
    if out is None:
        sys.stdout.write(text)
    else:
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_text(text, encoding="utf-8")


def _analysis_config(args) -> AnalysisConfig:
    data = load_config(args.config) if args.config else {}
    cfg = AnalysisConfig.from_dict(data)
    kw = {}
    mode = getattr(args, "mode", None)
    if isinstance(mode, list):
        kw["modes"] = tuple(dict.fromkeys(mode))
    elif mode is not None:
        kw["modes"] = (mode,)
    elif args.command != "report" and "modes" not in data:
        kw["modes"] = (FREE,)
    if args.sigma_floor is not None:
        kw["sigma_floor"] = args.sigma_floor
    for attr, key in (("min_points", "min_points"), ("method", "residual_method"), ("nu_p_source", "nu_p_source")):
        value = getattr(args, attr, None)
        if value is not None:
            kw[key] = value
    return replace(cfg, **kw) if kw else cfg


def _simulate(args) -> None:
    data = load_config(args.config) if args.config else {}
    overrides = {}
    if "apparatus" in data:
        overrides["cfg"] = ApparatusConfig.from_dict(data["apparatus"])
    if args.noise is not None:
        overrides["noise_rel_kel"] = args.noise
    if args.gamma is not None:
        overrides["gamma_true"] = args.gamma
    truth = preset_truth(args.preset, **overrides)
    run = generate_run(truth, run1_plan(truth, args.seed, args.steps), args.seed)
    if args.out is None:
        sys.stdout.write(format_run(run))
    else:
        args.out.parent.mkdir(parents=True, exist_ok=True)
        write_run(run, args.out)


_STAGES = {
    "fit-parabolas": frozenset(),
    "fit-powerlaw": frozenset(),
    "stability": frozenset({"stability"}),
    "distances": frozenset({"distances"}),
    "vctrend": frozenset({"vctrend"}),
    "residual": frozenset({"residual"}),
    "veq": frozenset({"veq"}),
}


def _analyze(args) -> None:
    config = _analysis_config(args)
    run = read_run(args.run)
    if args.command == "report":
        result = run_pipeline(run, config)
        if args.out is None:
            sys.stdout.write(dumps_report(report_document(result)))
        else:
            for path in write_report(result, args.out):
                logger.info("wrote %s", path)
        return

    result = run_pipeline(run, config, stages=_STAGES[args.command])
    mr = result.modes[0]
    if args.command == "fit-parabolas":
        cols = ["v_pzt", "status", "nu0_sq", "sigma_nu0_sq", "k_el", "sigma_k", "v_c", "sigma_vc", "chi2_red", "n_points", "reason"]
        rows = []
        for e in result.series.entries:
            if hasattr(e, "k_el"):
                rows.append([e.v_pzt, "ok" if e.valid else "invalid", e.nu0_sq, e.sigma_nu0_sq, e.k_el, e.sigma_k,
                             e.v_c, e.sigma_vc, e.chi2_red, e.n_points, ";".join(e.flags)])
            else:
                rows.append([e.v_pzt, "failed"] + [None] * 8 + [e.reason])
        _emit(format_table(cols, rows), args.out)
        return
    stage_errors = {**mr.errors, **result.errors}
    if mr.fit is None:
        raise CalibrationError(f"power-law fit failed: {stage_errors.get('fit')}")
    if args.command == "fit-powerlaw":
        _emit(dumps_report(powerlaw_dict(mr.fit)), args.out)
        return
    tables = report_tables(result)
    slug = str(mr.mode).replace(":", "_")
    if args.command == "stability":
        if mr.stability is None:
            raise CalibrationError(f"stability scan failed: {stage_errors.get('stability')}")
        _emit(tables[f"stability_{slug}.csv"], args.out)
    elif args.command == "distances":
        _emit(tables[f"distances_{slug}.csv"], args.out)
    elif args.command == "vctrend":
        if result.vc is None:
            raise CalibrationError(f"contact-potential trend failed: {stage_errors.get('vctrend')}")
        _emit(dumps_report(vc_dict(result.vc)), args.out)
    elif args.command == "veq":
        if result.veq is None:
            raise CalibrationError(f"equivalent-voltage table failed: {stage_errors.get('vctrend')}")
        _emit(tables["veq.csv"], args.out)
    elif args.command == "residual":
        if result.residual is None:
            raise CalibrationError(f"residual analysis failed: {stage_errors.get('residual') or stage_errors.get('nu_p')}")
        _emit(dumps_report(residual_dict(result.residual)), args.out)


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "simulate":
            _simulate(args)
        else:
            _analyze(args)
    except (CalibrationError, OSError, ValueError) as exc:
        print(f"spcalib {args.command}: error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
