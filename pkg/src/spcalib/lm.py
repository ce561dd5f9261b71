"""
Small Levenberg-Marquardt minimizer for weighted least squares.

The caller supplies a function returning the (already weighted) residual
vector and its Jacobian. Steps solve

    (J^T J + lam * diag(J^T J)) dp = -J^T r

and are accepted only when the chi-square |r|^2 does not increase, so the
accepted cost sequence is monotone.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import NonFiniteResidual, NotConverged, SingularJacobian

logger = logging.getLogger(__name__)

ResidualJacobian = Callable[[np.ndarray], tuple[np.ndarray, np.ndarray]]

_MAX_DAMPING = 1e16


@dataclass(frozen=True)
class LMSettings:
    max_iterations: int = 200
    rel_tolerance: float = 1e-10
    initial_damping: float = 1e-3
    damping_up: float = 10.0
    damping_down: float = 0.1

    def __post_init__(self):
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        for name in ("rel_tolerance", "initial_damping", "damping_up", "damping_down"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be > 0")


@dataclass(frozen=True, eq=False)
class LMResult:
    params: np.ndarray
    cost: float  # chi-square, sum of squared residuals
    iterations: int
    damping: float
    converged: bool
    jacobian: np.ndarray
    residuals: np.ndarray
    message: str = ""

    def covariance(self) -> np.ndarray:
        """Inverse of J^T J at the final point.

        Raises
        ------
        SingularJacobian
            If J^T J cannot be inverted.
        """
        return normal_matrix_inverse(self.jacobian)


def normal_matrix_inverse(jac: np.ndarray) -> np.ndarray:
    # SVD keeps the rank check explicit; J^T J = V S^2 V^T
    _, s, vt = np.linalg.svd(jac, full_matrices=False)
    if s.size == 0 or s[-1] <= s[0] * 1e-13 or not np.all(np.isfinite(s)):
        raise SingularJacobian(f"Jacobian is rank deficient (singular values {s})")
    return (vt.T / s**2) @ vt


def lm_minimize(
    fun: ResidualJacobian,
    p0,
    settings: LMSettings | None = None,
    feasible: Callable[[np.ndarray], bool] | None = None,
    raise_on_failure: bool = False,
) -> LMResult:
    """Minimize sum(r(p)**2) from ``p0``.

    Parameters
    ----------
    fun
        ``p -> (r, J)`` with ``J[i, j] = d r_i / d p_j``.
    p0
        Starting parameters; ``fun`` must be finite there.
    settings
        Iteration limits and tolerances.
    feasible
        Optional predicate; trial points failing it are rejected like an
        uphill step (damping increases).
    raise_on_failure
        Raise :class:`NotConverged` instead of returning the best point with
        ``converged=False``.

    Returns
    -------
    LMResult
        Convergence requires the relative step and the relative cost decrease
        to both fall under ``settings.rel_tolerance``.
    """
    settings = settings or LMSettings()
    tol = settings.rel_tolerance
    p = np.array(p0, dtype=float)
    if feasible is not None and not feasible(p):
        raise ValueError("initial parameters are infeasible")
    r, jac = fun(p)
    if not (np.all(np.isfinite(r)) and np.all(np.isfinite(jac))):
        raise NonFiniteResidual(f"non-finite residual or Jacobian at initial point {p}")
    cost = float(r @ r)
    lam = settings.initial_damping
    converged = False
    message = "maximum iterations reached"
    it = 0

    while it < settings.max_iterations:
        it += 1
        jtj = jac.T @ jac
        g = jac.T @ r
        diag = np.diag(jtj).copy()
        diag[diag <= 0] = 1.0
        try:
            step = np.linalg.solve(jtj + lam * np.diag(diag), -g)
        except np.linalg.LinAlgError:
            lam *= settings.damping_up
            if lam > _MAX_DAMPING:
                raise SingularJacobian("damped normal equations stay singular") from None
            continue

        small_step = np.linalg.norm(step) <= tol * (np.linalg.norm(p) + tol)
        trial = p + step
        ok = feasible is None or feasible(trial)
        if ok:
            r_new, jac_new = fun(trial)
            ok = bool(np.all(np.isfinite(r_new)) and np.all(np.isfinite(jac_new)))
        new_cost = float(r_new @ r_new) if ok else np.inf

        if ok and new_cost <= cost:
            small_drop = (cost - new_cost) <= tol * cost
            p, r, jac, cost = trial, r_new, jac_new, new_cost
            lam = max(lam * settings.damping_down, 1e-15)
            if small_step and small_drop:
                converged, message = True, "relative step and cost change below tolerance"
                break
        else:
            if small_step and ok:
                # no representable improvement left near p
                converged, message = True, "step below tolerance at minimum"
                break
            lam *= settings.damping_up
            if lam > _MAX_DAMPING:
                message = "damping exceeded limit without progress"
                break

    if not converged:
        logger.debug("LM stopped without convergence after %d iterations: %s", it, message)
        if raise_on_failure:
            raise NotConverged(message)
    return LMResult(p, cost, it, lam, converged, jac, r, message)


def gauss_newton_polish(
    fun: ResidualJacobian,
    p,
    feasible: Callable[[np.ndarray], bool] | None = None,
    max_steps: int = 3,
) -> tuple[np.ndarray, np.ndarray, np.ndarray, float]:
    """Undamped Gauss-Newton steps from a converged point.

    The stopping rule of :func:`lm_minimize` is relative to the whole parameter
    vector, so a small-magnitude parameter can end up resolved only to about
    ``rel_tolerance * |p|``. Near the minimum a plain Gauss-Newton step
    converges quadratically and removes that residue. A step is kept only if
    it is feasible, finite and does not raise the cost beyond rounding.

    Returns ``(params, residuals, jacobian, cost)``.
    """
    p = np.array(p, dtype=float)
    r, jac = fun(p)
    cost = float(r @ r)
    for _ in range(max_steps):
        step = np.linalg.lstsq(jac, -r, rcond=None)[0]
        trial = p + step
        if feasible is not None and not feasible(trial):
            break
        r_new, jac_new = fun(trial)
        if not (np.all(np.isfinite(r_new)) and np.all(np.isfinite(jac_new))):
            break
        new_cost = float(r_new @ r_new)
        if new_cost > cost * (1.0 + 1e-12) + 1e-300:
            break
        p, r, jac, cost = trial, r_new, jac_new, new_cost
        if np.all(np.abs(step) <= 4 * np.finfo(float).eps * np.maximum(np.abs(p), 1.0)):
            break
    return p, r, jac, cost
