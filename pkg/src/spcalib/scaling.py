"""
Power-law fits of the curvature series against PZT bias.

Model::

    k_el(V) = alpha * (V0 - V)**gamma

with ``gamma`` either held fixed (-2 for a Coulombic sphere-plane gap) or
left free. PZT biases are polarity-normalized so that the gap shrinks as V
grows. The optimizer works on (log alpha, V0[, gamma]); covariances are
reported in (alpha, V0[, gamma]).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np

from .errors import DegenerateSeries, InsufficientPoints, V0Collision
from .lm import LMSettings, gauss_newton_polish, lm_minimize, normal_matrix_inverse

V0_BARRIER = 1e-6  # V


@dataclass(frozen=True)
class CurvaturePoint:
    v_pzt: float
    k_el: float
    sigma_k: float

    def __post_init__(self):
        if not (self.sigma_k > 0 and math.isfinite(self.sigma_k)):
            raise ValueError(f"sigma_k must be finite and > 0, got {self.sigma_k}")
        if not (self.k_el > 0 and math.isfinite(self.k_el)):
            raise ValueError(f"k_el must be finite and > 0, got {self.k_el}")


@dataclass(frozen=True)
class Fixed:
    gamma: float = -2.0

    def __str__(self) -> str:
        return f"fixed:{self.gamma:g}"


@dataclass(frozen=True)
class Free:
    def __str__(self) -> str:
        return "free"


FitMode = Union[Fixed, Free]
FREE = Free()


def parse_mode(text: str) -> FitMode:
    """Parse ``"free"`` or ``"fixed:<gamma>"``."""
    text = text.strip().lower()
    if text == "free":
        return FREE
    if text.startswith("fixed:"):
        try:
            return Fixed(float(text.split(":", 1)[1]))
        except ValueError:
            pass
    raise ValueError(f"mode must be 'free' or 'fixed:<gamma>', got {text!r}")


@dataclass(frozen=True, eq=False)
class PowerLawFit:
    """Result of :func:`fit_power_law`.

    ``alpha`` carries units of Hz^2 V^-2 (PZT V)^-gamma. ``cov`` is 2x2 over
    (alpha, v0_pzt) for a fixed exponent, 3x3 over (alpha, v0_pzt, gamma)
    otherwise; errors are 1-sigma from the final linearization, not scaled by
    chi2_red.
    """

    alpha: float
    v0_pzt: float
    gamma: float
    gamma_fixed: bool
    cov: np.ndarray
    chi2_red: float
    n_points: int
    converged: bool
    iterations: int

    @property
    def n_free(self) -> int:
        return 2 if self.gamma_fixed else 3

    @property
    def sigma_alpha(self) -> float:
        return float(np.sqrt(self.cov[0, 0]))

    @property
    def sigma_v0(self) -> float:
        return float(np.sqrt(self.cov[1, 1]))

    @property
    def sigma_gamma(self) -> float:
        return 0.0 if self.gamma_fixed else float(np.sqrt(self.cov[2, 2]))

    @property
    def mode(self) -> FitMode:
        return Fixed(self.gamma) if self.gamma_fixed else FREE

    def predict(self, v_pzt):
        x = self.v0_pzt - np.asarray(v_pzt, dtype=float)
        return self.alpha * x**self.gamma

    def v0_text(self) -> str:
        return format_value_error(self.v0_pzt, self.sigma_v0, "V")

    def gamma_text(self) -> str:
        if self.gamma_fixed:
            return f"{self.gamma:g} (fixed)"
        return format_value_error(self.gamma, self.sigma_gamma)


def format_value_error(value: float, error: float, unit: str = "") -> str:
    """``43.1234, 0.0123, 'V'`` -> ``'43.12±0.01 V'`` (error to one significant digit)."""
    suffix = f" {unit}" if unit else ""
    if not (error > 0 and math.isfinite(error)):
        return f"{value:g}{suffix}"
    decimals = -int(math.floor(math.log10(error)))
    err = round(error, decimals)
    if err >= 10.0 ** (1 - decimals):  # rounding bumped a digit, e.g. 0.096 -> 0.1
        decimals -= 1
        err = round(error, decimals)
    if decimals > 0:
        return f"{value:.{decimals}f}±{err:.{decimals}f}{suffix}"
    return f"{round(value, decimals):.0f}±{err:.0f}{suffix}"


def _arrays(series: Sequence[CurvaturePoint]):
    v = np.array([p.v_pzt for p in series], dtype=float)
    k = np.array([p.k_el for p in series], dtype=float)
    s = np.array([p.sigma_k for p in series], dtype=float)
    return v, k, s


def _check_series(series: Sequence[CurvaturePoint], mode: FitMode) -> None:
    need = 4 if isinstance(mode, Fixed) else 5
    if len(series) < need:
        raise InsufficientPoints(f"{mode} fit needs >= {need} points, got {len(series)}")
    v = [p.v_pzt for p in series]
    if len(set(v)) != len(v):
        raise DegenerateSeries("PZT biases must be distinct")


def _extrapolate_v0(v: np.ndarray, k: np.ndarray, gamma: float) -> float:
    """Contact bias from the two closest points assuming k ~ (V0 - V)**gamma."""
    s = k ** (1.0 / gamma)  # proportional to V0 - V
    (v1, v2), (s1, s2) = v[-2:], s[-2:]
    if s1 > s2 and np.isfinite(s1) and np.isfinite(s2):
        return float(v2 + (v2 - v1) * s2 / (s1 - s2))
    # noisy neighbours: straight-line fit of s over the whole series
    slope, intercept = np.polyfit(v, s, 1)
    if slope < 0:
        v0 = -intercept / slope
        if v0 > v[-1]:
            return float(v0)
    return _profile_v0(v, k, gamma)


def _profile_v0(v: np.ndarray, k: np.ndarray, gamma: float) -> float:
    """Coarse scan of V0 minimizing the log-space misfit at fixed exponent."""
    span = float(v[-1] - v[0])
    if not span > 0:
        raise DegenerateSeries("cannot extrapolate a contact bias: zero PZT span")
    candidates = v[-1] + span * np.logspace(-4, 2, 241)
    lk = np.log(k)
    ssr = []
    for v0 in candidates:
        resid = lk - gamma * np.log(v0 - v)
        ssr.append(np.sum((resid - resid.mean()) ** 2))
    ssr = np.asarray(ssr)
    if not np.all(np.isfinite(ssr)):
        raise DegenerateSeries("cannot extrapolate a contact bias beyond the closest point")
    return float(candidates[int(np.argmin(ssr))])


def _loglog(v: np.ndarray, k: np.ndarray, v0: float, gamma: float | None):
    lx = np.log(v0 - v)
    lk = np.log(k)
    if gamma is None:
        gamma, log_alpha = np.polyfit(lx, lk, 1)
    else:
        log_alpha = float(np.mean(lk - gamma * lx))
    return float(log_alpha), float(gamma)


def initial_guess(series: Sequence[CurvaturePoint], mode: FitMode, refinements: int = 1) -> np.ndarray:
    """Starting point ``[log alpha, V0(, gamma)]`` for :func:`fit_power_law`.

    V0 is extrapolated from the two closest points under an inverse-square
    law, then (log alpha, gamma) come from a straight-line fit of log k_el on
    log(V0 - V). Each refinement repeats the extrapolation with the current
    exponent estimate.

    Raises
    ------
    DegenerateSeries
        Fewer than four points, or no contact bias beyond the closest point.
    """
    if len(series) < 4:
        raise DegenerateSeries(f"need >= 4 points to seed a fit, got {len(series)}")
    pts = sorted(series, key=lambda p: p.v_pzt)
    v, k, _ = _arrays(pts)
    fixed_gamma = mode.gamma if isinstance(mode, Fixed) else None
    gamma = fixed_gamma if fixed_gamma is not None else -2.0
    for _ in range(refinements + 1):
        v0 = _extrapolate_v0(v, k, gamma)
        log_alpha, gamma_est = _loglog(v, k, v0, fixed_gamma)
        if fixed_gamma is None:
            if not (np.isfinite(gamma_est) and gamma_est < 0):
                break
            gamma = gamma_est
    if fixed_gamma is not None:
        return np.array([log_alpha, v0])
    return np.array([log_alpha, v0, gamma])


def power_law_residuals(params: np.ndarray, v, k, sigma, gamma_fixed: float | None = None):
    """Weighted residuals ``(model - k)/sigma`` and their analytic Jacobian."""
    log_alpha, v0 = params[0], params[1]
    gamma = gamma_fixed if gamma_fixed is not None else params[2]
    x = v0 - v
    lx = np.log(x)
    model = np.exp(log_alpha + gamma * lx)
    r = (model - k) / sigma
    cols = [model / sigma, gamma * model / x / sigma]
    if gamma_fixed is None:
        cols.append(model * lx / sigma)
    return r, np.column_stack(cols)


def fit_power_law(
    series: Sequence[CurvaturePoint],
    mode: FitMode = FREE,
    settings: LMSettings | None = None,
    p0=None,
) -> PowerLawFit:
    """Weighted least-squares fit of ``alpha * (V0 - V)**gamma``.

    A fit that exhausts its iteration budget is returned with
    ``converged=False`` rather than raised.

    Raises
    ------
    InsufficientPoints
        Fewer than 4 (fixed) or 5 (free) points.
    SingularJacobian
        The final normal matrix cannot be inverted.
    V0Collision
        The contact bias ends pinned against the closest fitted point.
    """
    _check_series(series, mode)
    settings = settings or LMSettings()
    v, k, sigma = _arrays(series)
    v_max = float(v.max())
    gamma_fixed = mode.gamma if isinstance(mode, Fixed) else None
    start = initial_guess(series, mode) if p0 is None else np.asarray(p0, dtype=float)
    if start[1] <= v_max + V0_BARRIER:
        start = start.copy()
        start[1] = v_max + max(V0_BARRIER * 10, 1e-3 * (v_max - v.min()))

    def fun(p):
        return power_law_residuals(p, v, k, sigma, gamma_fixed)

    def feasible(p):
        return p[1] > v_max + V0_BARRIER and (gamma_fixed is not None or p[2] < 0)

    res = lm_minimize(fun, start, settings, feasible=feasible)
    params, jac, cost = res.params, res.jacobian, res.cost
    if res.converged:
        params, _, jac, cost = gauss_newton_polish(fun, params, feasible)
    if params[1] - v_max <= 10 * V0_BARRIER:
        raise V0Collision(f"V0={params[1]} pinned at the closest point V_pzt={v_max}")
    cov_log = normal_matrix_inverse(jac)
    alpha = float(np.exp(params[0]))
    scale = np.ones(len(params))
    scale[0] = alpha
    cov = cov_log * np.outer(scale, scale)
    n = len(series)
    dof = n - len(params)
    return PowerLawFit(
        alpha=alpha,
        v0_pzt=float(params[1]),
        gamma=float(gamma_fixed if gamma_fixed is not None else params[2]),
        gamma_fixed=gamma_fixed is not None,
        cov=0.5 * (cov + cov.T),
        chi2_red=float(cost / dof) if dof > 0 else math.nan,
        n_points=n,
        converged=res.converged,
        iterations=res.iterations,
    )


def curvature_points(series, rel_floor: float | None = 0.04, polarity: int = 1) -> list[CurvaturePoint]:
    """Convert valid parabola fits to curvature points.

    ``sigma_k`` is the parabola-fit error, raised to ``rel_floor * k_el`` when
    a floor is given. PZT biases are multiplied by ``polarity``.
    """
    out = []
    for fit in series.fits:
        sig = fit.sigma_k
        if rel_floor:
            sig = max(sig, rel_floor * fit.k_el)
        if not (sig > 0 and np.isfinite(sig)):
            continue
        out.append(CurvaturePoint(polarity * fit.v_pzt, fit.k_el, sig))
    return out


__all__ = [
    "CurvaturePoint",
    "FREE",
    "Fixed",
    "FitMode",
    "Free",
    "PowerLawFit",
    "curvature_points",
    "fit_power_law",
    "format_value_error",
    "initial_guess",
    "parse_mode",
    "power_law_residuals",
]
