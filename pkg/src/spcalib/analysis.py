"""
Diagnostics built on the curvature series and its power-law fits.

* :func:`stability_scan` refits growing prefixes (largest gaps first).
* :func:`distance_report` compares the two absolute-distance estimators,
  beta*(V0 - V) and beta*(k_el/alpha)**(1/gamma).
* :func:`vc_trend` fits constant and linear contact-potential models.
* :func:`residual_analysis` fits nu_p^2 - nu0^2 to a power law in distance.
* :func:`veq_comparison` tabulates the Casimir-equivalent voltage against the
  modeled contact-potential miscompensation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import stats

from . import physics
from .errors import CalibrationError, InsufficientPoints, NonPositiveResiduals, V0Collision
from .lm import LMSettings, lm_minimize, normal_matrix_inverse
from .parabola import CalibrationSeries, ParabolaFit
from .scaling import FREE, CurvaturePoint, FitMode, Fixed, PowerLawFit, curvature_points, fit_power_law

CASIMIR_EXPONENT = -4.0


# -- stability scan ---------------------------------------------------------------

@dataclass(frozen=True)
class StabilityEntry:
    n_included: int
    fit: PowerLawFit | None
    error: str | None = None


@dataclass(frozen=True)
class StabilityTrace:
    """Prefix fits and their spread over the final half of the trace.

    Spreads are the largest relative deviation of alpha (or V0) within the
    window from the value fitted to the complete series.
    """

    exponent_used: float | None
    entries: tuple[StabilityEntry, ...]
    spread_alpha: float
    spread_v0: float
    window_start: int

    @property
    def fits(self) -> list[tuple[int, PowerLawFit]]:
        return [(e.n_included, e.fit) for e in self.entries if e.fit is not None]


def _spread(values: np.ndarray, reference: float) -> float:
    if values.size == 0 or not np.isfinite(reference) or reference == 0:
        return math.nan
    return float(np.max(np.abs(values / reference - 1.0)))


def stability_scan(
    series: Sequence[CurvaturePoint],
    mode: FitMode,
    min_points: int = 4,
    settings: LMSettings | None = None,
) -> StabilityTrace:
    """Fit prefixes of length ``min_points .. N`` of a largest-gap-first series.

    A failing prefix is recorded with its error and the scan continues.

    Raises
    ------
    InsufficientPoints
        ``min_points < 4`` or the series yields fewer than three prefixes.
    """
    n = len(series)
    if min_points < 4:
        raise InsufficientPoints("min_points must be >= 4")
    if n - min_points + 1 < 3:
        raise InsufficientPoints(f"{n} points give fewer than 3 prefixes from {min_points}")

    entries = []
    for m in range(min_points, n + 1):
        try:
            entries.append(StabilityEntry(m, fit_power_law(series[:m], mode, settings)))
        except CalibrationError as exc:
            entries.append(StabilityEntry(m, None, f"{type(exc).__name__}: {exc}"))

    window_start = len(entries) // 2
    window = [e.fit for e in entries[window_start:] if e.fit is not None]
    final = entries[-1].fit
    if final is None or not window:
        spread_alpha = spread_v0 = math.nan
    else:
        spread_alpha = _spread(np.array([f.alpha for f in window]), final.alpha)
        spread_v0 = _spread(np.array([f.v0_pzt for f in window]), final.v0_pzt)
    return StabilityTrace(
        exponent_used=mode.gamma if isinstance(mode, Fixed) else None,
        entries=tuple(entries),
        spread_alpha=spread_alpha,
        spread_v0=spread_v0,
        window_start=window_start,
    )


# -- absolute distances --------------------------------------------------------------

@dataclass(frozen=True)
class DistanceRecord:
    v_pzt: float
    d_linear: float
    d_curvature: float
    rel_discrepancy: float
    error: str | None = None


@dataclass(frozen=True)
class DistanceReport:
    records: tuple[DistanceRecord, ...]
    max_discrepancy: float
    mean_discrepancy: float

    def distances(self, estimator: str = "curvature") -> np.ndarray:
        key = {"curvature": "d_curvature", "linear": "d_linear"}[estimator]
        return np.array([getattr(r, key) for r in self.records])


def distance_report(fit: PowerLawFit, series: Sequence[CurvaturePoint], beta: float) -> DistanceReport:
    """Gap from the contact bias versus gap from the measured curvature.

    Points at or beyond the fitted contact bias are kept with NaN distances
    and an error tag.

    Raises
    ------
    V0Collision
        No point lies before the fitted contact bias.
    """
    if not beta > 0:
        raise ValueError("beta must be > 0")
    records = []
    for p in series:
        x = fit.v0_pzt - p.v_pzt
        if not x > 0:
            records.append(DistanceRecord(p.v_pzt, math.nan, math.nan, math.nan, "V0Collision"))
            continue
        d_lin = beta * x
        d_curv = beta * (p.k_el / fit.alpha) ** (1.0 / fit.gamma)
        records.append(DistanceRecord(p.v_pzt, d_lin, d_curv, abs(d_lin - d_curv) / d_lin))
    disc = np.array([r.rel_discrepancy for r in records if r.error is None])
    if disc.size == 0:
        raise V0Collision(f"every point lies at or beyond V0={fit.v0_pzt}")
    return DistanceReport(tuple(records), float(disc.max()), float(disc.mean()))


# -- contact potential trend -----------------------------------------------------------

@dataclass(frozen=True)
class ConstantModel:
    v_c: float
    sigma: float
    chi2_red: float


@dataclass(frozen=True)
class LinearModel:
    intercept: float
    slope: float
    sigma_intercept: float
    sigma_slope: float
    cov: tuple[tuple[float, float], tuple[float, float]]
    chi2_red: float

    @property
    def slope_significance(self) -> float:
        return abs(self.slope) / self.sigma_slope


@dataclass(frozen=True)
class VcTrend:
    distances: tuple[float, ...]
    v_c: tuple[float, ...]
    sigma_vc: tuple[float, ...]
    model_constant: ConstantModel
    model_linear: LinearModel
    preferred: str
    selection: str

    def predict(self, d, model: str | None = None):
        model = model or self.preferred
        d = np.asarray(d, dtype=float)
        if model == "constant":
            out = np.full_like(d, self.model_constant.v_c)
        else:
            out = self.model_linear.intercept + self.model_linear.slope * d
        return float(out) if out.ndim == 0 else out


def _vc_inputs(series: CalibrationSeries | Sequence[ParabolaFit], distances):
    fits = series.fits if isinstance(series, CalibrationSeries) else list(series)
    d = np.asarray(distances, dtype=float)
    if d.size != len(fits):
        raise ValueError(f"{len(fits)} valid fits but {d.size} distances")
    v = np.array([f.v_c for f in fits])
    s = np.array([f.sigma_vc for f in fits])
    ok = np.isfinite(v) & np.isfinite(s) & (s > 0) & np.isfinite(d) & (d > 0)
    return d[ok], v[ok], s[ok]


def vc_trend(series: CalibrationSeries | Sequence[ParabolaFit], distances) -> VcTrend:
    """Weighted constant and straight-line fits of V_c against distance.

    The linear model is preferred only when its reduced chi-square is lower
    and its slope differs from zero by more than 3 sigma.

    Raises
    ------
    InsufficientPoints
        Fewer than three steps with a finite, positive V_c uncertainty.
    """
    d, v, s = _vc_inputs(series, distances)
    n = d.size
    if n < 3:
        raise InsufficientPoints(f"need >= 3 steps with valid V_c uncertainty, got {n}")
    w = 1.0 / s**2

    mean = float(np.sum(w * v) / np.sum(w))
    chi2_c = float(np.sum(w * (v - mean) ** 2))
    constant = ConstantModel(mean, float(1.0 / np.sqrt(np.sum(w))), chi2_c / (n - 1))

    # center distances for conditioning, then move the intercept back to d=0
    d0 = float(np.sum(w * d) / np.sum(w))
    a = np.column_stack([np.ones(n), d - d0]) / s[:, None]
    coef, *_ = np.linalg.lstsq(a, v / s, rcond=None)
    cov_c = np.linalg.inv(a.T @ a)
    t = np.array([[1.0, -d0], [0.0, 1.0]])
    cov = t @ cov_c @ t.T
    intercept = float(coef[0] - coef[1] * d0)
    slope = float(coef[1])
    resid = v - (intercept + slope * d)
    chi2_l = float(np.sum(w * resid**2))
    linear = LinearModel(
        intercept,
        slope,
        float(np.sqrt(cov[0, 0])),
        float(np.sqrt(cov[1, 1])),
        ((float(cov[0, 0]), float(cov[0, 1])), (float(cov[1, 0]), float(cov[1, 1]))),
        chi2_l / (n - 2) if n > 2 else math.nan,
    )
    z = linear.slope_significance
    if z > 3.0 and linear.chi2_red < constant.chi2_red:
        preferred = "linear"
    else:
        preferred = "constant"
    selection = (
        f"slope {z:.1f} sigma from zero; chi2_red constant={constant.chi2_red:.3g}, "
        f"linear={linear.chi2_red:.3g}"
    )
    return VcTrend(tuple(d), tuple(v), tuple(s), constant, linear, preferred, selection)


# -- residual force gradient ------------------------------------------------------------

@dataclass(frozen=True)
class ResidualPowerLaw:
    """dnu_r^2 = amplitude * d**exponent (amplitude in Hz^2 m^-exponent)."""

    amplitude: float
    exponent: float
    sigma_amplitude: float
    sigma_exponent: float
    cov: np.ndarray
    chi2_red: float
    converged: bool
    d_offset: float = 0.0
    sigma_d_offset: float = 0.0


@dataclass(frozen=True)
class ResidualReport:
    d: tuple[float, ...]
    delta_nu_r_sq: tuple[float, ...]
    sigma: tuple[float, ...]
    nu_p: float
    detected: bool
    zero_model_pvalue: float
    powerlaw: ResidualPowerLaw | None
    casimir_expected_exponent: float = CASIMIR_EXPONENT

    @property
    def casimir_z(self) -> float:
        """Signed distance of the fitted exponent from -4 in units of its error."""
        if self.powerlaw is None:
            return math.nan
        return (self.powerlaw.exponent - CASIMIR_EXPONENT) / self.powerlaw.sigma_exponent

    def consistent_with_casimir(self, n_sigma: float = 2.0) -> bool:
        return self.powerlaw is not None and abs(self.casimir_z) <= n_sigma


def nu_p_from_far_steps(series: CalibrationSeries | Sequence[ParabolaFit], n_steps: int = 3) -> float:
    """Free frequency estimated as sqrt(mean nu0^2) over the largest-gap steps."""
    fits = series.fits if isinstance(series, CalibrationSeries) else list(series)
    if len(fits) < n_steps:
        raise InsufficientPoints(f"need >= {n_steps} fits")
    return float(np.sqrt(np.mean([f.nu0_sq for f in fits[:n_steps]])))


def _residual_seed(d, y, s, d_ref):
    sig = y > 2.0 * s
    if np.count_nonzero(sig) >= 2 and np.ptp(np.log(d[sig])) > 0:
        p, la = np.polyfit(np.log(d[sig] / d_ref), np.log(y[sig]), 1, w=y[sig] / s[sig])
        if np.isfinite(p) and np.isfinite(la):
            return float(la), float(p)
    p = CASIMIR_EXPONENT
    scaled = (d / d_ref) ** p
    amp = np.sum(y * scaled / s**2) / np.sum(scaled**2 / s**2)
    return float(np.log(max(amp, 1e-300))), p


def residual_analysis(
    series: CalibrationSeries | Sequence[ParabolaFit],
    distances,
    nu_p: float,
    offset_sigma: float | None = None,
    detection_pvalue: float = 1e-3,
    settings: LMSettings | None = None,
) -> ResidualReport:
    """Fit the distance dependence of nu_p^2 - nu0^2 with A * d**p.

    ``offset_sigma`` (m), when given, adds a common gap offset as a nuisance
    parameter with a Gaussian prior of that width, so the uncertainty of the
    distance scale propagates into the exponent error.

    If the residuals are statistically compatible with zero (chi-square
    p-value above ``detection_pvalue``) no power law is fitted and the report
    declares a null detection.

    Raises
    ------
    InsufficientPoints
        Fewer than five steps.
    """
    fits = series.fits if isinstance(series, CalibrationSeries) else list(series)
    d = np.asarray(distances, dtype=float)
    if d.size != len(fits):
        raise ValueError(f"{len(fits)} valid fits but {d.size} distances")
    y = np.array([nu_p**2 - f.nu0_sq for f in fits])
    s = np.array([f.sigma_nu0_sq for f in fits])
    ok = np.isfinite(d) & (d > 0) & np.isfinite(y) & np.isfinite(s) & (s > 0)
    d, y, s = d[ok], y[ok], s[ok]
    if d.size < 5:
        raise InsufficientPoints(f"residual analysis needs >= 5 steps, got {d.size}")

    chi2_zero = float(np.sum((y / s) ** 2))
    pvalue = float(stats.chi2.sf(chi2_zero, d.size))
    base = dict(d=tuple(d), delta_nu_r_sq=tuple(y), sigma=tuple(s), nu_p=float(nu_p), zero_model_pvalue=pvalue)
    if pvalue > detection_pvalue:
        return ResidualReport(detected=False, powerlaw=None, **base)
    try:
        law = _fit_residual_power_law(d, y, s, offset_sigma, settings)
    except NonPositiveResiduals:
        return ResidualReport(detected=False, powerlaw=None, **base)
    return ResidualReport(detected=True, powerlaw=law, **base)


def _fit_residual_power_law(d, y, s, offset_sigma, settings) -> ResidualPowerLaw:
    d_ref = float(np.exp(np.mean(np.log(d))))
    la0, p0 = _residual_seed(d, y, s, d_ref)
    if not np.any(y > 0):
        raise NonPositiveResiduals("all residuals are non-positive")
    with_offset = offset_sigma is not None and offset_sigma > 0
    d_min = float(d.min())

    def fun(params):
        la, p = params[0], params[1]
        delta = params[2] if with_offset else 0.0
        u = (d + delta) / d_ref
        lu = np.log(u)
        model = np.exp(la + p * lu)
        r = (model - y) / s
        cols = [model / s, model * lu / s]
        if with_offset:
            cols.append(p * model / (d + delta) / s)
            r = np.append(r, delta / offset_sigma)
            jac = np.vstack([np.column_stack(cols), [0.0, 0.0, 1.0 / offset_sigma]])
            return r, jac
        return r, np.column_stack(cols)

    def feasible(params):
        return (not with_offset) or params[2] > -0.9 * d_min

    start = [la0, p0, 0.0] if with_offset else [la0, p0]
    res = lm_minimize(fun, start, settings or LMSettings(), feasible=feasible)
    cov_log = normal_matrix_inverse(res.jacobian)
    la, p = res.params[0], res.params[1]
    amp = float(np.exp(la) * d_ref ** (-p))
    # (log A', p) -> (A, p) with A = exp(la) d_ref^-p
    jac = np.zeros((2, len(res.params)))
    jac[0, 0] = amp
    jac[0, 1] = -amp * np.log(d_ref)
    jac[1, 1] = 1.0
    cov = jac @ cov_log @ jac.T
    dof = d.size - 2
    chi2 = float(np.sum(res.residuals[: d.size] ** 2))
    return ResidualPowerLaw(
        amplitude=amp,
        exponent=float(p),
        sigma_amplitude=float(np.sqrt(cov[0, 0])),
        sigma_exponent=float(np.sqrt(cov[1, 1])),
        cov=cov,
        chi2_red=chi2 / dof if dof > 0 else math.nan,
        converged=res.converged,
        d_offset=float(res.params[2]) if with_offset else 0.0,
        sigma_d_offset=float(np.sqrt(cov_log[2, 2])) if with_offset else 0.0,
    )


def _step_covariances(fits, nu_p: float, rel_floor: float | None):
    k = np.array([f.k_el for f in fits])
    y = np.array([nu_p**2 - f.nu0_sq for f in fits])
    covs = np.empty((len(fits), 2, 2))
    for i, f in enumerate(fits):
        var_k, var_n, c_kn = f.cov[1, 1], f.cov[0, 0], f.cov[0, 1]
        scale = 1.0
        if rel_floor:
            floor = rel_floor * f.k_el
            if floor**2 > var_k:
                scale = floor / np.sqrt(var_k)
        # y = nu_p^2 - nu0_sq flips the sign of the cross term
        covs[i] = [[var_k * scale**2, -c_kn * scale], [-c_kn * scale, var_n]]
    return k, y, covs


def residual_analysis_joint(
    series: CalibrationSeries | Sequence[ParabolaFit],
    beta: float,
    nu_p: float,
    mode: FitMode | None = None,
    rel_floor: float | None = 0.04,
    polarity: int = 1,
    detection_pvalue: float = 1e-3,
    settings: LMSettings | None = None,
) -> ResidualReport:
    """Residual power law fitted jointly with the curvature law.

    Each step contributes (k_el, nu_p^2 - nu0^2) with its 2x2 parabola-fit
    covariance, so the correlation between curvature and vertex errors and
    the uncertainty of the contact bias both reach the exponent error. Gaps
    are beta*(V0 - V) with V0 shared by the two laws. ``rel_floor`` inflates
    the k_el variance as in :func:`scaling.curvature_points`.
    """
    mode = mode or FREE
    fits = series.fits if isinstance(series, CalibrationSeries) else list(series)
    fits = [f for f in fits if np.all(np.isfinite(f.cov))]
    if len(fits) < 5:
        raise InsufficientPoints(f"residual analysis needs >= 5 steps, got {len(fits)}")
    v = polarity * np.array([f.v_pzt for f in fits])
    k, y, covs = _step_covariances(fits, nu_p, rel_floor)
    s_y = np.sqrt(covs[:, 1, 1])

    curve = fit_power_law(curvature_points(fits_as_series(fits), rel_floor, polarity), mode, settings)
    d_lin = beta * (curve.v0_pzt - v)
    chi2_zero = float(np.sum((y / s_y) ** 2))
    pvalue = float(stats.chi2.sf(chi2_zero, y.size))
    base = dict(d=tuple(d_lin), delta_nu_r_sq=tuple(y), sigma=tuple(s_y), nu_p=float(nu_p), zero_model_pvalue=pvalue)
    if pvalue > detection_pvalue or not np.any(y > 0):
        return ResidualReport(detected=False, powerlaw=None, **base)

    seed_law = _fit_residual_power_law(d_lin, y, s_y, None, settings)
    gamma_fixed = mode.gamma if isinstance(mode, Fixed) else None
    x_ref = float(np.exp(np.mean(np.log(curve.v0_pzt - v))))
    whiten = np.linalg.inv(np.linalg.cholesky(covs))  # (n, 2, 2), lower-triangular inverses
    v_max = float(v.max())

    def unpack(p):
        if gamma_fixed is None:
            la, v0, g, lb, pw = p
        else:
            la, v0, lb, pw = p
            g = gamma_fixed
        return la, v0, g, lb, pw

    def fun(p):
        la, v0, g, lb, pw = unpack(p)
        x = v0 - v
        lx = np.log(x)
        mk = np.exp(la + g * lx)
        my = np.exp(lb + pw * (lx - np.log(x_ref)))
        resid = np.stack([mk - k, my - y], axis=1)
        zero = np.zeros_like(x)
        dk = [mk, g * mk / x]
        dy = [zero, pw * my / x]
        if gamma_fixed is None:
            dk.append(mk * lx)
            dy.append(zero)
        dk += [zero, zero]
        dy += [my, my * (lx - np.log(x_ref))]
        jac = np.stack([np.column_stack(dk), np.column_stack(dy)], axis=1)  # (n, 2, P)
        r = np.einsum("nij,nj->ni", whiten, resid).ravel()
        j = np.einsum("nij,njp->nip", whiten, jac).reshape(2 * x.size, -1)
        return r, j

    def feasible(p):
        _, v0, g, _, _ = unpack(p)
        return v0 > v_max + 1e-6 and g < 0

    la0 = np.log(curve.alpha)
    lb0 = np.log(seed_law.amplitude) + seed_law.exponent * np.log(beta * x_ref)
    if gamma_fixed is None:
        start = [la0, curve.v0_pzt, curve.gamma, lb0, seed_law.exponent]
    else:
        start = [la0, curve.v0_pzt, lb0, seed_law.exponent]
    res = lm_minimize(fun, start, settings or LMSettings(), feasible=feasible)
    cov_p = normal_matrix_inverse(res.jacobian)
    la, v0, g, lb, pw = unpack(res.params)
    ib, ip = len(res.params) - 2, len(res.params) - 1
    amp = float(np.exp(lb) * (beta * x_ref) ** (-pw))
    t = np.zeros((2, len(res.params)))
    t[0, ib] = amp
    t[0, ip] = -amp * np.log(beta * x_ref)
    t[1, ip] = 1.0
    cov_ap = t @ cov_p @ t.T
    dof = 2 * v.size - len(res.params)
    chi2_red = float(res.cost / dof)
    law = ResidualPowerLaw(
        amplitude=amp,
        exponent=float(pw),
        sigma_amplitude=float(np.sqrt(cov_ap[0, 0])),
        sigma_exponent=float(np.sqrt(cov_ap[1, 1])),
        cov=cov_ap,
        chi2_red=chi2_red,
        converged=res.converged,
    )
    base["d"] = tuple(beta * (v0 - v))
    return ResidualReport(detected=True, powerlaw=law, **base)


def fits_as_series(fits: Sequence[ParabolaFit], run_id: str = "") -> CalibrationSeries:
    return CalibrationSeries(run_id, tuple(fits))


# -- equivalent voltage comparison ------------------------------------------------------------

@dataclass(frozen=True)
class VeqRow:
    d: float
    v_eq: float
    miscompensation: float
    ratio: float
    exceeds: bool


def veq_comparison(trend: VcTrend, distances) -> list[VeqRow]:
    """Casimir-equivalent voltage versus |V_c(d) - V_c(d_min)| from the preferred trend."""
    d = np.asarray(distances, dtype=float)
    d = d[np.isfinite(d) & (d > 0)]  # points beyond the fitted contact bias carry NaN
    if d.size == 0:
        return []
    d_min = float(d.min())
    v_ref = trend.predict(d_min)
    rows = []
    for di in d:
        v_eq = physics.equivalent_voltage(di)
        mis = abs(trend.predict(di) - v_ref)
        ratio = mis / v_eq
        rows.append(VeqRow(float(di), v_eq, float(mis), float(ratio), bool(mis > v_eq)))
    return rows


__all__ = [
    "CASIMIR_EXPONENT",
    "ConstantModel",
    "DistanceRecord",
    "DistanceReport",
    "LinearModel",
    "ResidualPowerLaw",
    "ResidualReport",
    "StabilityEntry",
    "StabilityTrace",
    "VcTrend",
    "VeqRow",
    "distance_report",
    "fits_as_series",
    "nu_p_from_far_steps",
    "residual_analysis",
    "residual_analysis_joint",
    "stability_scan",
    "vc_trend",
    "veq_comparison",
]
