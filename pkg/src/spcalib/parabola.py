"""
Per-step parabola extraction.

Each sweep is fitted in squared-frequency space,

    nu_m^2 = nu0_sq - k_el (V - v_c)^2,

by exact weighted linear least squares on a quadratic in the applied voltage
(centered on the mean voltage for conditioning). Point variances are
var(nu_m^2) = (2 nu_m sigma_nu)^2 and the polynomial covariance is mapped to
(nu0_sq, k_el, v_c) to first order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .data import MeasurementRun, VoltageSweep
from .errors import CalibrationError, DegenerateDesign, EmptyRun, InsufficientPoints

PARAMS = ("nu0_sq", "k_el", "v_c")


@dataclass(frozen=True, eq=False)
class ParabolaFit:
    """Vertex-form parameters of one sweep with their 3x3 covariance.

    ``valid`` is False when the fitted parabola does not open downward
    (k_el <= 0); ``flags`` names the reason.
    """

    v_pzt: float
    nu0_sq: float
    k_el: float
    v_c: float
    cov: np.ndarray
    chi2_red: float
    n_points: int
    valid: bool = True
    flags: tuple[str, ...] = ()

    @property
    def params(self) -> np.ndarray:
        return np.array([self.nu0_sq, self.k_el, self.v_c])

    @property
    def errors(self) -> np.ndarray:
        return np.sqrt(np.clip(np.diag(self.cov), 0.0, None))

    @property
    def sigma_k(self) -> float:
        return float(self.errors[1])

    @property
    def sigma_vc(self) -> float:
        return float(self.errors[2])

    @property
    def sigma_nu0_sq(self) -> float:
        return float(self.errors[0])


@dataclass(frozen=True)
class SweepFailure:
    """Placeholder for a sweep that could not be fitted."""

    v_pzt: float
    reason: str
    error: str


@dataclass(frozen=True)
class CalibrationSeries:
    """One entry per sweep of the parent run, in the run's order."""

    run_id: str
    entries: tuple[ParabolaFit | SweepFailure, ...] = field(default_factory=tuple)

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def fits(self) -> list[ParabolaFit]:
        """Successfully fitted, downward-opening parabolas."""
        return [e for e in self.entries if isinstance(e, ParabolaFit) and e.valid]

    @property
    def gaps(self) -> list[tuple[int, SweepFailure | ParabolaFit]]:
        """Index and record of every entry excluded from :attr:`fits`."""
        return [
            (i, e) for i, e in enumerate(self.entries)
            if not (isinstance(e, ParabolaFit) and e.valid)
        ]


def fit_parabola(sweep: VoltageSweep) -> ParabolaFit:
    """Fit nu_m^2 = nu0_sq - k_el (V - v_c)^2 to a single sweep.

    Raises
    ------
    InsufficientPoints
        Fewer than three distinct applied voltages.
    DegenerateDesign
        Normal equations are singular, or weights are not finite and positive.
    """
    v = sweep.v_applied
    nu = sweep.nu_m
    sigma = sweep.sigma_nu
    if sweep.n_distinct_voltages < 3:
        raise InsufficientPoints(
            f"V_pzt={sweep.v_pzt}: {sweep.n_distinct_voltages} distinct voltages, need >= 3"
        )
    if not (np.all(np.isfinite(nu)) and np.all(np.isfinite(v))):
        raise DegenerateDesign(f"V_pzt={sweep.v_pzt}: non-finite samples")
    if not np.all(sigma > 0) or not np.all(np.isfinite(sigma)):
        raise DegenerateDesign(f"V_pzt={sweep.v_pzt}: sigma_nu must be finite and > 0")

    y = nu * nu
    w_sqrt = 1.0 / (2.0 * nu * sigma)
    center = float(v.mean())
    u = v - center
    design = np.column_stack([np.ones_like(u), u, u * u])
    a = design * w_sqrt[:, None]
    try:
        q, r = np.linalg.qr(a)
        if np.linalg.cond(r) > 1e14:
            raise np.linalg.LinAlgError("ill-conditioned")
        b = np.linalg.solve(r, q.T @ (y * w_sqrt))
        r_inv = np.linalg.inv(r)
    except np.linalg.LinAlgError as exc:
        raise DegenerateDesign(f"V_pzt={sweep.v_pzt}: singular normal equations ({exc})") from None
    cov_b = r_inv @ r_inv.T

    n = y.size
    resid = (y - design @ b) * w_sqrt
    chi2_red = float(resid @ resid / (n - 3)) if n > 3 else math.nan

    b0, b1, b2 = b
    flags: tuple[str, ...] = ()
    if b2 >= 0:
        flags = ("NonConcave",)
        nan3 = np.full((3, 3), np.nan)
        return ParabolaFit(sweep.v_pzt, math.nan, float(-b2), math.nan, nan3, chi2_red, n, False, flags)

    nu0_sq = b0 - b1 * b1 / (4.0 * b2)
    k_el = -b2
    v_c = center - b1 / (2.0 * b2)
    jac = np.array([
        [1.0, -b1 / (2.0 * b2), b1 * b1 / (4.0 * b2 * b2)],
        [0.0, 0.0, -1.0],
        [0.0, -1.0 / (2.0 * b2), b1 / (2.0 * b2 * b2)],
    ])
    cov = jac @ cov_b @ jac.T
    cov = 0.5 * (cov + cov.T)
    return ParabolaFit(sweep.v_pzt, float(nu0_sq), float(k_el), float(v_c), cov, chi2_red, n, True, flags)


def fit_run(run: MeasurementRun) -> CalibrationSeries:
    """Fit every sweep of a run; failures are kept in place as :class:`SweepFailure`.

    Raises
    ------
    EmptyRun
        The run holds no sweeps.
    """
    if not run.sweeps:
        raise EmptyRun(f"run {run.run_id!r} has no sweeps")
    entries: list[ParabolaFit | SweepFailure] = []
    for sweep in run.sweeps:
        try:
            entries.append(fit_parabola(sweep))
        except CalibrationError as exc:
            entries.append(SweepFailure(sweep.v_pzt, type(exc).__name__, str(exc)))
    return CalibrationSeries(run.run_id, tuple(entries))
