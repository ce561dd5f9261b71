"""
Seeded synthetic sphere-plane apparatus.

``generate_run`` turns a :class:`GroundTruth` and a :class:`SweepPlan` into a
:class:`MeasurementRun` whose frequencies follow

    nu_m^2 = nu_p^2 - k_true(d) (V - V_c(d))^2 - dnu_r^2(d)

with an optionally anomalous curvature law ``k_true ~ d**gamma_true``, a
distance-dependent contact potential, a non-electrostatic residual, gap drift,
PZT nonlinearity and white frequency noise. Random numbers come from numpy's
PCG64 bit generator seeded explicitly, so a (truth, plan, seed) triple always
yields the same run.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Union

import numpy as np

from . import physics
from .data import MeasurementRun, SweepPlan, VoltageSweep
from .errors import InvalidConfig, InvalidPlan, NegativeDistance, NonPositiveDistance, UnstableResonator
from .physics import ApparatusConfig

MAX_DRIFT = 2e-7
# sigma_nu reported for noiseless runs, as a relative k_el resolution
NOISELESS_REL_RESOLUTION = 1e-6
SYNTHETIC_EPOCH = "1970-01-01T00:00:00+00:00"
_PLAN_STREAM = 0x504C414E  # keeps plan draws independent of noise draws for the same seed


# -- contact potential models ------------------------------------------------

@dataclass(frozen=True)
class ConstantVc:
    v0: float = 0.0


@dataclass(frozen=True)
class LinearVc:
    v0: float
    slope: float  # V/m


@dataclass(frozen=True)
class SaturatingLinearVc:
    """``v_near`` inside ``knee``, a linear ramp to ``v_far`` at ``d_far``, flat beyond."""

    v_far: float
    v_near: float
    knee: float
    d_far: float

    def __post_init__(self):
        if not (0 < self.knee < self.d_far):
            raise InvalidConfig("SaturatingLinearVc needs 0 < knee < d_far")


VcModel = Union[ConstantVc, LinearVc, SaturatingLinearVc]


def eval_vc(model: VcModel, d):
    """Contact potential (V) predicted by ``model`` at gap ``d`` (m)."""
    d = np.asarray(d, dtype=float)
    if isinstance(model, ConstantVc):
        out = np.full_like(d, model.v0)
    elif isinstance(model, LinearVc):
        out = model.v0 + model.slope * d
    elif isinstance(model, SaturatingLinearVc):
        t = np.clip((d - model.knee) / (model.d_far - model.knee), 0.0, 1.0)
        out = model.v_near + (model.v_far - model.v_near) * t
    else:
        raise TypeError(f"unknown contact potential model {model!r}")
    return float(out) if out.ndim == 0 else out


def linear_vc_for_span(v_near: float, span: float, d_min: float, d_max: float) -> LinearVc:
    """Linear model with value ``v_near`` at ``d_min`` changing by ``span`` at ``d_max``."""
    slope = span / (d_max - d_min)
    return LinearVc(v0=v_near - slope * d_min, slope=slope)


# -- residual (non-electrostatic) force models --------------------------------

@dataclass(frozen=True)
class CasimirPFA:
    pass


@dataclass(frozen=True)
class PowerLawResidual:
    """dnu_r^2 = amplitude * d**exponent, amplitude in Hz^2 m^-exponent."""

    amplitude: float
    exponent: float


ResidualModel = Union[None, CasimirPFA, PowerLawResidual]


def eval_residual(model: ResidualModel, cfg: ApparatusConfig, d):
    d = np.asarray(d, dtype=float)
    if model is None:
        out = np.zeros_like(d)
    elif isinstance(model, CasimirPFA):
        out = np.asarray(physics.frequency_shift_squared(cfg, physics.casimir_force_gradient_pfa(cfg, d)))
    elif isinstance(model, PowerLawResidual):
        out = model.amplitude * d**model.exponent
    else:
        raise TypeError(f"unknown residual model {model!r}")
    return float(out) if out.ndim == 0 else out


# -- drift models --------------------------------------------------------------

@dataclass(frozen=True)
class LinearTotalDrift:
    """Gap changes by ``extent`` (signed, m) spread uniformly from first to last step."""

    extent: float


@dataclass(frozen=True)
class MonotoneDrift:
    """Smooth monotone ramp (half-cosine) reaching ``extent`` at the last step."""

    extent: float


DriftModel = Union[None, LinearTotalDrift, MonotoneDrift]


def apply_drift(d_nominal: float, step_index: int, total_steps: int, model: DriftModel) -> float:
    """Gap actually realized at acquisition step ``step_index`` of ``total_steps``."""
    if not d_nominal > 0:
        raise NonPositiveDistance(f"nominal distance must be > 0, got {d_nominal!r}")
    if model is None:
        return float(d_nominal)
    t = step_index / (total_steps - 1) if total_steps > 1 else 0.0
    if isinstance(model, LinearTotalDrift):
        shift = model.extent * t
    elif isinstance(model, MonotoneDrift):
        shift = model.extent * 0.5 * (1.0 - np.cos(np.pi * t))
    else:
        raise TypeError(f"unknown drift model {model!r}")
    d = d_nominal + shift
    if not d > 0:
        raise NegativeDistance(f"drift {shift:.3e} m drives gap {d_nominal:.3e} m to {d:.3e} m")
    return float(d)


# -- ground truth --------------------------------------------------------------

@dataclass(frozen=True)
class GroundTruth:
    cfg: ApparatusConfig = field(default_factory=ApparatusConfig)
    gamma_true: float = -2.0
    vc_model: VcModel = field(default_factory=ConstantVc)
    residual_model: ResidualModel = None
    noise_rel_kel: float = 0.0
    drift_model: DriftModel = None
    pzt_nonlinearity: float = 0.0
    allow_large_drift: bool = False

    def __post_init__(self):
        if not self.gamma_true < 0:
            raise InvalidConfig("gamma_true must be negative")
        if not self.noise_rel_kel >= 0:
            raise InvalidConfig("noise_rel_kel must be >= 0")
        if self.drift_model is not None and not self.allow_large_drift:
            if abs(self.drift_model.extent) > MAX_DRIFT:
                raise InvalidConfig(
                    f"drift extent {self.drift_model.extent} m exceeds {MAX_DRIFT} m; "
                    "set allow_large_drift to override"
                )

    def to_dict(self) -> dict:
        return {
            "cfg": self.cfg.to_dict(),
            "gamma_true": self.gamma_true,
            "vc_model": _model_to_dict(self.vc_model),
            "residual_model": _model_to_dict(self.residual_model),
            "noise_rel_kel": self.noise_rel_kel,
            "drift_model": _model_to_dict(self.drift_model),
            "pzt_nonlinearity": self.pzt_nonlinearity,
            "allow_large_drift": self.allow_large_drift,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "GroundTruth":
        return cls(
            cfg=ApparatusConfig.from_dict(data.get("cfg", {})),
            gamma_true=float(data.get("gamma_true", -2.0)),
            vc_model=_model_from_dict(data.get("vc_model")) or ConstantVc(),
            residual_model=_model_from_dict(data.get("residual_model")),
            noise_rel_kel=float(data.get("noise_rel_kel", 0.0)),
            drift_model=_model_from_dict(data.get("drift_model")),
            pzt_nonlinearity=float(data.get("pzt_nonlinearity", 0.0)),
            allow_large_drift=bool(data.get("allow_large_drift", False)),
        )


_MODEL_KINDS = {
    "constant": ConstantVc,
    "linear": LinearVc,
    "saturating_linear": SaturatingLinearVc,
    "casimir_pfa": CasimirPFA,
    "power_law": PowerLawResidual,
    "linear_total": LinearTotalDrift,
    "monotone": MonotoneDrift,
}
_KIND_OF = {v: k for k, v in _MODEL_KINDS.items()}


def _model_to_dict(model) -> dict | None:
    if model is None:
        return None
    out = {"kind": _KIND_OF[type(model)]}
    out.update(model.__dict__)
    return out


def _model_from_dict(data: dict | None):
    if data is None:
        return None
    data = dict(data)
    kind = data.pop("kind")
    try:
        cls = _MODEL_KINDS[kind]
    except KeyError:
        raise InvalidConfig(f"unknown model kind {kind!r}") from None
    return cls(**{k: float(v) for k, v in data.items()})


# -- plans -----------------------------------------------------------------------

def voltage_grid(center: float, half_span: float = 0.25, n: int = 9) -> tuple[float, ...]:
    return tuple(float(v) for v in center + np.linspace(-half_span, half_span, n))


def default_plan(
    truth: GroundTruth,
    v_pzt_steps,
    half_span: float = 0.25,
    n_voltages: int = 9,
    repeats_per_point: int = 1,
) -> SweepPlan:
    """Plan with a 9-point, +-0.25 V grid centered on each step's nominal V_c."""
    cfg = truth.cfg
    grids = []
    for v in v_pzt_steps:
        d = physics.pzt_to_distance(cfg, v)
        grids.append(voltage_grid(eval_vc(truth.vc_model, d), half_span, n_voltages))
    return SweepPlan(tuple(v_pzt_steps), tuple(grids), repeats_per_point)


def random_pzt_steps(
    cfg: ApparatusConfig,
    n_steps: int,
    d_min: float,
    d_max: float,
    seed: int,
) -> tuple[float, ...]:
    """PZT biases at randomly spaced gaps between ``d_min`` and ``d_max``.

    Gaps are drawn uniformly in log-distance (endpoints included) so the
    intervals between consecutive steps are irregular but every decade of
    separation is populated.
    """
    if not 0 < d_min < d_max:
        raise InvalidPlan("need 0 < d_min < d_max")
    if n_steps < 2:
        raise InvalidPlan("need at least two steps")
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, _PLAN_STREAM])))
    inner = rng.uniform(np.log(d_min), np.log(d_max), n_steps - 2)
    log_d = np.concatenate(([np.log(d_max)], np.sort(inner)[::-1], [np.log(d_min)]))
    d = np.exp(log_d)
    return tuple(float(v) for v in physics.distance_to_pzt(cfg, d))


# -- generation --------------------------------------------------------------------

def realized_distance(truth: GroundTruth, v_pzt: float, x_ref: float, step_index: int, total_steps: int) -> float:
    """Gap after PZT nonlinearity and drift are applied to the nominal linear gap."""
    cfg = truth.cfg
    x = physics.pzt_offset(cfg, v_pzt)
    x_eff = x * (1.0 + truth.pzt_nonlinearity * x / x_ref)
    if not x_eff > 0:
        raise NegativeDistance(f"PZT nonlinearity drives V_pzt={v_pzt} beyond contact")
    return apply_drift(cfg.beta * x_eff, step_index, total_steps, truth.drift_model)


def true_curvature(truth: GroundTruth, d, d_ref: float):
    """k_el following d**gamma_true, equal to the Coulomb curvature at ``d_ref``."""
    k_ref = physics.curvature_coefficient(truth.cfg, d_ref)
    if truth.gamma_true == -2.0:
        return physics.curvature_coefficient(truth.cfg, d)
    return k_ref * (np.asarray(d) / d_ref) ** truth.gamma_true


def _noise_sigma(v: np.ndarray, nu: np.ndarray, k: float, rel: float) -> float:
    """Per-step frequency noise giving a relative k_el fit scatter of ``rel``."""
    u = v - v.mean()
    design = np.column_stack([np.ones_like(u), u, u * u]) / (2.0 * nu)[:, None]
    cov_unit = np.linalg.inv(design.T @ design)
    return rel * k / np.sqrt(cov_unit[2, 2])


def generate_run(
    truth: GroundTruth,
    plan: SweepPlan,
    seed: int,
    run_id: str | None = None,
    created: str = SYNTHETIC_EPOCH,
) -> MeasurementRun:
    """Simulate one calibration run.

    Steps are acquired in plan order (which is what the drift model sees) and
    returned sorted largest gap first. The anomalous curvature law is pinned to
    the Coulomb value at the largest nominal separation, so ``gamma_true=-2``
    reproduces :func:`physics.curvature_coefficient` exactly.

    Raises
    ------
    InvalidPlan
        A nominal gap is not positive.
    UnstableResonator
        A noiseless squared frequency is not positive.
    """
    cfg = truth.cfg
    plan.validate_against(cfg)
    rng = np.random.Generator(np.random.PCG64(seed))

    x_nominal = np.asarray(physics.pzt_offset(cfg, np.array(plan.v_pzt_steps)))
    x_ref = float(x_nominal.max())
    d_ref = cfg.beta * x_ref
    n_steps = len(plan.v_pzt_steps)
    rel = truth.noise_rel_kel if truth.noise_rel_kel > 0 else NOISELESS_REL_RESOLUTION

    sweeps = []
    for i, (v_pzt, grid) in enumerate(zip(plan.v_pzt_steps, plan.v_applied_grid)):
        d = realized_distance(truth, v_pzt, x_ref, i, n_steps)
        k = float(true_curvature(truth, d, d_ref))
        v_c = eval_vc(truth.vc_model, d)
        dnu_r = eval_residual(truth.residual_model, cfg, d)

        v = np.repeat(np.asarray(grid, dtype=float), plan.repeats_per_point)
        nu_sq = cfg.nu_p**2 - k * (v - v_c) ** 2 - dnu_r
        if np.any(~(nu_sq > 0)):
            raise UnstableResonator(f"step V_pzt={v_pzt}: noiseless nu_m^2 <= 0")
        nu = np.sqrt(nu_sq)
        sigma = _noise_sigma(v, nu, k, rel)
        if truth.noise_rel_kel > 0:
            nu = nu + sigma * rng.standard_normal(nu.size)
            if np.any(~(nu > 0)):
                raise UnstableResonator(f"step V_pzt={v_pzt}: noise produced a non-positive frequency")
        sweeps.append(VoltageSweep(v_pzt, v, nu, np.full(nu.size, sigma)))

    order = np.argsort(-x_nominal, kind="stable")
    return MeasurementRun(
        run_id=run_id if run_id is not None else f"synth-{seed}",
        created=created,
        sweeps=tuple(sweeps[j] for j in order),
        plan=plan,
        apparatus=cfg,
        provenance={"seed": int(seed), "truth": truth.to_dict()},
    )


# -- Run-1 style presets --------------------------------------------------------------

RUN1_D_MIN = 20e-9
RUN1_D_MAX = 3.7e-6
RUN1_STEPS = 30


def run1_truth(noise_rel_kel: float = 0.04, gamma_true: float = -1.70, **overrides) -> GroundTruth:
    """Anomalous run: exponent -1.70, +90 mV linear V_c drift across the gap range, 4% noise."""
    cfg = overrides.pop("cfg", ApparatusConfig())
    vc = overrides.pop("vc_model", linear_vc_for_span(0.050, 0.090, RUN1_D_MIN, RUN1_D_MAX))
    return GroundTruth(cfg=cfg, gamma_true=gamma_true, vc_model=vc, noise_rel_kel=noise_rel_kel, **overrides)


def run1_plan(truth: GroundTruth, seed: int = 0, n_steps: int = RUN1_STEPS) -> SweepPlan:
    steps = random_pzt_steps(truth.cfg, n_steps, RUN1_D_MIN, RUN1_D_MAX, seed)
    return default_plan(truth, steps)


def simulate_run1(seed: int, noise_rel_kel: float = 0.04, gamma_true: float = -1.70, **overrides) -> MeasurementRun:
    """Convenience: Run-1 analog truth, plan drawn from ``seed`` and noise from ``seed``."""
    truth = run1_truth(noise_rel_kel, gamma_true, **overrides)
    return generate_run(truth, run1_plan(truth, seed), seed)


def with_noise(truth: GroundTruth, noise_rel_kel: float) -> GroundTruth:
    return replace(truth, noise_rel_kel=noise_rel_kel)


def casimir_truth(noise_rel_kel: float = 0.04, **overrides) -> GroundTruth:
    """Coulombic curvature law, constant -150 mV contact potential, PFA Casimir residual."""
    overrides.setdefault("vc_model", ConstantVc(-0.150))
    overrides.setdefault("residual_model", CasimirPFA())
    return run1_truth(noise_rel_kel, -2.0, **overrides)


def ideal_truth(**overrides) -> GroundTruth:
    """Noiseless, drift-free inverse-square truth with zero contact potential."""
    overrides.setdefault("vc_model", ConstantVc(0.0))
    return run1_truth(0.0, -2.0, **overrides)


PRESETS = {"run1": run1_truth, "casimir": casimir_truth, "ideal": ideal_truth}


def preset_truth(name: str, **overrides) -> GroundTruth:
    try:
        factory = PRESETS[name]
    except KeyError:
        raise InvalidConfig(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None
    return factory(**overrides)
