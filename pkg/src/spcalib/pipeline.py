"""
End-to-end analysis of one run and its report.

``run_pipeline`` chains parabola extraction, power-law fits (one per
requested mode), stability scans, the distance cross-check, the contact
potential trend, the V_eq table and the residual fit. ``write_report`` emits
``report.json`` plus flat CSV tables for plotting.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import __version__
from .analysis import (
    DistanceReport,
    ResidualReport,
    StabilityTrace,
    VcTrend,
    VeqRow,
    distance_report,
    fits_as_series,
    nu_p_from_far_steps,
    residual_analysis,
    residual_analysis_joint,
    stability_scan,
    vc_trend,
    veq_comparison,
)
from .data import MeasurementRun
from .errors import CalibrationError, InvalidConfig
from .fileio import dumps_report, format_table
from .lm import LMSettings
from .parabola import CalibrationSeries, ParabolaFit, SweepFailure, fit_run
from .physics import ApparatusConfig
from .scaling import FREE, CurvaturePoint, FitMode, Fixed, PowerLawFit, curvature_points, fit_power_law, parse_mode

logger = logging.getLogger(__name__)

DISTANCE_ESTIMATORS = ("curvature", "linear")
RESIDUAL_METHODS = ("joint", "distance")
NU_P_SOURCES = ("config", "far_steps")


@dataclass(frozen=True)
class AnalysisConfig:
    """Settings for :func:`run_pipeline`.

    ``sigma_floor`` is the relative k_el uncertainty floor (0.04 reproduces a
    4% error budget); ``None`` or 0 uses parabola-fit errors only.
    """

    apparatus: ApparatusConfig | None = None
    modes: tuple[FitMode, ...] = (FREE, Fixed(-2.0))
    lm: LMSettings = field(default_factory=LMSettings)
    sigma_floor: float | None = 0.04
    min_points: int = 4
    distance_estimator: str = "curvature"
    residual_method: str = "joint"
    nu_p_source: str = "config"
    output_dir: str | None = None

    def __post_init__(self):
        if not self.modes:
            raise InvalidConfig("at least one fit mode is required")
        if self.distance_estimator not in DISTANCE_ESTIMATORS:
            raise InvalidConfig(f"distance_estimator must be one of {DISTANCE_ESTIMATORS}")
        if self.residual_method not in RESIDUAL_METHODS:
            raise InvalidConfig(f"residual_method must be one of {RESIDUAL_METHODS}")
        if self.nu_p_source not in NU_P_SOURCES:
            raise InvalidConfig(f"nu_p_source must be one of {NU_P_SOURCES}")
        if self.min_points < 4:
            raise InvalidConfig("min_points must be >= 4")
        if self.sigma_floor is not None and self.sigma_floor < 0:
            raise InvalidConfig("sigma_floor must be >= 0")

    @property
    def primary_mode(self) -> FitMode:
        """Mode whose fit supplies distances: free if requested, else the first."""
        return FREE if FREE in self.modes else self.modes[0]

    @classmethod
    def from_dict(cls, data: dict) -> "AnalysisConfig":
        kw: dict = {}
        if data.get("apparatus") is not None:
            kw["apparatus"] = ApparatusConfig.from_dict(data["apparatus"])
        elif "apparatus" in data:
            kw["apparatus"] = None
        if "modes" in data:
            kw["modes"] = tuple(parse_mode(m) for m in data["modes"])
        if "lm" in data:
            kw["lm"] = LMSettings(**data["lm"])
        for key in ("sigma_floor", "min_points", "distance_estimator", "residual_method", "nu_p_source", "output_dir"):
            if key in data:
                kw[key] = data[key]
        unknown = set(data) - set(kw) - {"simulate"}
        if unknown:
            raise InvalidConfig(f"unknown analysis settings: {sorted(unknown)}")
        return cls(**kw)

    def to_dict(self) -> dict:
        return {
            "apparatus": None if self.apparatus is None else self.apparatus.to_dict(),
            "modes": [str(m) for m in self.modes],
            "lm": self.lm.__dict__.copy(),
            "sigma_floor": self.sigma_floor,
            "min_points": self.min_points,
            "distance_estimator": self.distance_estimator,
            "residual_method": self.residual_method,
            "nu_p_source": self.nu_p_source,
        }


def load_config(path) -> dict:
    with open(path, encoding="utf-8") as fh:
        data = json.load(fh)
    if not isinstance(data, dict):
        raise InvalidConfig("config file must hold a JSON object")
    return data


@dataclass
class ModeResult:
    mode: FitMode
    fit: PowerLawFit | None = None
    stability: StabilityTrace | None = None
    distances: DistanceReport | None = None
    errors: dict[str, str] = field(default_factory=dict)


@dataclass
class PipelineResult:
    run: MeasurementRun
    config: AnalysisConfig
    apparatus: ApparatusConfig
    series: CalibrationSeries
    used_fits: list[ParabolaFit]
    points: list[CurvaturePoint]
    modes: list[ModeResult]
    distances_m: np.ndarray | None = None
    vc: VcTrend | None = None
    veq: list[VeqRow] | None = None
    residual: ResidualReport | None = None
    nu_p: float | None = None
    errors: dict[str, str] = field(default_factory=dict)

    def mode_result(self, mode: FitMode) -> ModeResult:
        for m in self.modes:
            if m.mode == mode:
                return m
        raise KeyError(str(mode))


def resolve_apparatus(run: MeasurementRun, config: AnalysisConfig) -> ApparatusConfig:
    if config.apparatus is not None:
        return config.apparatus
    if run.apparatus is not None:
        return run.apparatus
    logger.warning("no apparatus parameters in run or config; using defaults")
    return ApparatusConfig()


def _usable(fit: ParabolaFit, floor: float | None) -> bool:
    sig = fit.sigma_k
    if floor:
        sig = max(sig, floor * fit.k_el)
    return bool(np.isfinite(sig) and sig > 0 and np.all(np.isfinite(fit.cov)))


def _stage(errors: dict, name: str, fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except CalibrationError as exc:
        errors[name] = f"{type(exc).__name__}: {exc}"
        logger.warning("stage %s failed: %s", name, errors[name])
        return None


def run_pipeline(
    run: MeasurementRun,
    config: AnalysisConfig | None = None,
    stages: frozenset[str] | None = None,
) -> PipelineResult:
    """Analyze ``run``. Stage failures are recorded in ``errors``, not raised.

    ``stages`` restricts the optional stages (``stability``, ``distances``,
    ``vctrend``, ``veq``, ``residual``); parabola and power-law fits always run.
    """
    config = config or AnalysisConfig()
    want = stages if stages is not None else frozenset({"stability", "distances", "vctrend", "veq", "residual"})
    cfg = resolve_apparatus(run, config)
    polarity = cfg.V_pzt_polarity
    series = fit_run(run)
    used = [f for f in series.fits if _usable(f, config.sigma_floor)]
    points = curvature_points(fits_as_series(used), config.sigma_floor, polarity)
    result = PipelineResult(run, config, cfg, series, used, points, [])

    for mode in config.modes:
        mr = ModeResult(mode)
        mr.fit = _stage(mr.errors, "fit", fit_power_law, points, mode, config.lm)
        if "stability" in want:
            min_points = max(config.min_points, 5 if mode == FREE else 4)
            mr.stability = _stage(mr.errors, "stability", stability_scan, points, mode, min_points, config.lm)
        if mr.fit is not None and ("distances" in want or mode == config.primary_mode):
            mr.distances = _stage(mr.errors, "distances", distance_report, mr.fit, points, cfg.beta)
        result.modes.append(mr)

    primary = result.mode_result(config.primary_mode)
    if primary.distances is not None:
        result.distances_m = primary.distances.distances(config.distance_estimator)

    if result.distances_m is not None and ("vctrend" in want or "veq" in want):
        result.vc = _stage(result.errors, "vctrend", vc_trend, used, result.distances_m)
        if result.vc is not None and "veq" in want:
            result.veq = veq_comparison(result.vc, result.distances_m)

    if "residual" in want:
        if config.nu_p_source == "far_steps":
            result.nu_p = _stage(result.errors, "nu_p", nu_p_from_far_steps, used)
        else:
            result.nu_p = cfg.nu_p
        if result.nu_p is not None:
            if config.residual_method == "joint":
                result.residual = _stage(
                    result.errors, "residual", residual_analysis_joint, used, cfg.beta, result.nu_p,
                    config.primary_mode, config.sigma_floor, polarity, settings=config.lm,
                )
            elif result.distances_m is not None:
                result.residual = _stage(
                    result.errors, "residual", residual_analysis, used, result.distances_m, result.nu_p,
                    settings=config.lm,
                )
    return result


# -- serialization -------------------------------------------------------------------

def parabola_dict(entry: ParabolaFit | SweepFailure) -> dict:
    if isinstance(entry, SweepFailure):
        return {"v_pzt": entry.v_pzt, "status": "failed", "reason": entry.reason, "detail": entry.error}
    return {
        "v_pzt": entry.v_pzt,
        "status": "ok" if entry.valid else "invalid",
        "flags": list(entry.flags),
        "nu0_sq": entry.nu0_sq,
        "k_el": entry.k_el,
        "v_c": entry.v_c,
        "errors": entry.errors,
        "cov": entry.cov,
        "chi2_red": entry.chi2_red,
        "n_points": entry.n_points,
    }


def powerlaw_dict(fit: PowerLawFit) -> dict:
    names = ["alpha", "v0_pzt"] + ([] if fit.gamma_fixed else ["gamma"])
    return {
        "mode": str(fit.mode),
        "alpha": fit.alpha,
        "v0_pzt": fit.v0_pzt,
        "gamma": fit.gamma,
        "gamma_fixed": fit.gamma_fixed,
        "sigma_alpha": fit.sigma_alpha,
        "sigma_v0": fit.sigma_v0,
        "sigma_gamma": fit.sigma_gamma,
        "cov_parameters": names,
        "cov": fit.cov,
        "chi2_red": fit.chi2_red,
        "n_points": fit.n_points,
        "converged": fit.converged,
        "iterations": fit.iterations,
        "v0_text": fit.v0_text(),
        "gamma_text": fit.gamma_text(),
        "alpha_units": f"Hz^2 V^-2 V_pzt^{-fit.gamma:g}",
    }


def stability_dict(trace: StabilityTrace) -> dict:
    return {
        "exponent_used": "free" if trace.exponent_used is None else trace.exponent_used,
        "spread_alpha": trace.spread_alpha,
        "spread_v0": trace.spread_v0,
        "window_start_n": trace.entries[trace.window_start].n_included,
        "entries": [
            {"n_included": e.n_included, "fit": None if e.fit is None else powerlaw_dict(e.fit), "error": e.error}
            for e in trace.entries
        ],
    }


def distance_dict(rep: DistanceReport) -> dict:
    return {
        "max_discrepancy": rep.max_discrepancy,
        "mean_discrepancy": rep.mean_discrepancy,
        "records": [
            {
                "v_pzt": r.v_pzt,
                "d_linear_m": r.d_linear,
                "d_linear_nm": r.d_linear * 1e9,
                "d_curvature_m": r.d_curvature,
                "d_curvature_nm": r.d_curvature * 1e9,
                "rel_discrepancy": r.rel_discrepancy,
                "error": r.error,
            }
            for r in rep.records
        ],
    }


def vc_dict(trend: VcTrend) -> dict:
    c, lin = trend.model_constant, trend.model_linear
    return {
        "preferred": trend.preferred,
        "selection": trend.selection,
        "constant": {"v_c": c.v_c, "sigma": c.sigma, "chi2_red": c.chi2_red},
        "linear": {
            "intercept": lin.intercept,
            "slope_V_per_m": lin.slope,
            "sigma_intercept": lin.sigma_intercept,
            "sigma_slope": lin.sigma_slope,
            "cov": lin.cov,
            "chi2_red": lin.chi2_red,
            "slope_significance": lin.slope_significance,
        },
        "n_points": len(trend.distances),
    }


def residual_dict(rep: ResidualReport) -> dict:
    out = {
        "nu_p": rep.nu_p,
        "detected": rep.detected,
        "zero_model_pvalue": rep.zero_model_pvalue,
        "casimir_expected_exponent": rep.casimir_expected_exponent,
        "powerlaw": None,
    }
    if rep.powerlaw is not None:
        pl = rep.powerlaw
        out["powerlaw"] = {
            "amplitude": pl.amplitude,
            "exponent": pl.exponent,
            "sigma_amplitude": pl.sigma_amplitude,
            "sigma_exponent": pl.sigma_exponent,
            "cov": pl.cov,
            "chi2_red": pl.chi2_red,
            "converged": pl.converged,
        }
        out["casimir_z"] = rep.casimir_z
        out["consistent_with_casimir_2sigma"] = rep.consistent_with_casimir(2.0)
    return out


def report_document(result: PipelineResult) -> dict:
    run = result.run
    doc: dict = {
        "generator": f"spcalib {__version__}",
        "run": {"run_id": run.run_id, "created": run.created, "n_sweeps": len(run.sweeps)},
        "apparatus": result.apparatus.to_dict(),
        "config": result.config.to_dict(),
        "parabolas": [parabola_dict(e) for e in result.series.entries],
        "gaps": [
            {"index": i, "v_pzt": e.v_pzt, "reason": e.reason if isinstance(e, SweepFailure) else ",".join(e.flags)}
            for i, e in result.series.gaps
        ],
        "powerlaw_fits": [],
        "errors": dict(result.errors),
    }
    if run.provenance is not None:
        doc["run"]["provenance"] = run.provenance
    for mr in result.modes:
        entry: dict = {"mode": str(mr.mode), "errors": dict(mr.errors)}
        entry["fit"] = None if mr.fit is None else powerlaw_dict(mr.fit)
        if mr.stability is not None:
            entry["stability"] = stability_dict(mr.stability)
        if mr.distances is not None:
            entry["distances"] = distance_dict(mr.distances)
        doc["powerlaw_fits"].append(entry)
    if result.vc is not None:
        doc["vc_trend"] = vc_dict(result.vc)
    if result.veq is not None:
        doc["veq"] = [r.__dict__ for r in result.veq]
    if result.residual is not None:
        doc["residual"] = residual_dict(result.residual)
    return doc


def _slug(mode: FitMode) -> str:
    return str(mode).replace(":", "_")


def report_tables(result: PipelineResult) -> dict[str, str]:
    """Flat CSV tables keyed by file name."""
    tables: dict[str, str] = {}
    pts = result.points
    fitted = [mr for mr in result.modes if mr.fit is not None]
    cols = ["v_pzt", "k_el", "sigma_k"] + [f"fit_{_slug(mr.mode)}" for mr in fitted]
    rows = [[p.v_pzt, p.k_el, p.sigma_k] + [float(mr.fit.predict(p.v_pzt)) for mr in fitted] for p in pts]
    tables["kel_vs_vpzt.csv"] = format_table(cols, rows)

    if pts and fitted:
        v = np.array([p.v_pzt for p in pts])
        grid = np.linspace(v.min(), v.max(), 200)
        cols = ["v_pzt"] + [f"fit_{_slug(mr.mode)}" for mr in fitted]
        rows = [[g] + [float(mr.fit.predict(g)) for mr in fitted] for g in grid]
        tables["kel_fit_curves.csv"] = format_table(cols, rows)

    for mr in result.modes:
        if mr.stability is not None:
            cols = ["n_included", "alpha", "sigma_alpha", "v0_pzt", "sigma_v0", "gamma", "sigma_gamma", "chi2_red", "converged"]
            rows = []
            for e in mr.stability.entries:
                f = e.fit
                if f is None:
                    rows.append([e.n_included] + [float("nan")] * 7 + [False])
                else:
                    rows.append([e.n_included, f.alpha, f.sigma_alpha, f.v0_pzt, f.sigma_v0, f.gamma, f.sigma_gamma, f.chi2_red, f.converged])
            tables[f"stability_{_slug(mr.mode)}.csv"] = format_table(cols, rows)
        if mr.distances is not None:
            cols = ["v_pzt", "d_linear_m", "d_linear_nm", "d_curvature_m", "d_curvature_nm", "rel_discrepancy"]
            rows = [[r.v_pzt, r.d_linear, r.d_linear * 1e9, r.d_curvature, r.d_curvature * 1e9, r.rel_discrepancy]
                    for r in mr.distances.records]
            tables[f"distances_{_slug(mr.mode)}.csv"] = format_table(cols, rows)

    if result.vc is not None:
        t = result.vc
        cols = ["d_m", "d_nm", "v_c", "sigma_vc", "model_preferred"]
        rows = [[d, d * 1e9, vc, s, t.predict(d)] for d, vc, s in zip(t.distances, t.v_c, t.sigma_vc)]
        tables["vc_vs_distance.csv"] = format_table(cols, rows)
    if result.veq is not None:
        cols = ["d_m", "d_nm", "v_eq", "miscompensation", "ratio", "exceeds"]
        rows = [[r.d, r.d * 1e9, r.v_eq, r.miscompensation, r.ratio, r.exceeds] for r in result.veq]
        tables["veq.csv"] = format_table(cols, rows)
    if result.residual is not None:
        r = result.residual
        cols = ["d_m", "d_nm", "delta_nu_r_sq", "sigma"]
        rows = [[d, d * 1e9, y, s] for d, y, s in zip(r.d, r.delta_nu_r_sq, r.sigma)]
        tables["residual.csv"] = format_table(cols, rows)
    return tables


def write_report(result: PipelineResult, out_dir) -> list[Path]:
    """Write ``report.json`` and the CSV tables into ``out_dir``; return the paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    path = out / "report.json"
    path.write_text(dumps_report(report_document(result)), encoding="utf-8")
    written.append(path)
    for name, text in report_tables(result).items():
        p = out / name
        p.write_text(text, encoding="utf-8")
        written.append(p)
    return written


def with_apparatus(config: AnalysisConfig, apparatus: ApparatusConfig) -> AnalysisConfig:
    return replace(config, apparatus=apparatus)
