"""Measurement containers: single voltage sweeps, sweep plans and whole runs."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any

import numpy as np

from .errors import InvalidPlan
from .physics import ApparatusConfig

MIN_PLAN_VOLTAGES = 5


@dataclass(frozen=True, eq=False)
class VoltageSweep:
    """Frequencies recorded at one fixed PZT bias while the bias voltage is swept.

    ``v_applied``, ``nu_m`` and ``sigma_nu`` are parallel float arrays.
    Repeated voltages are kept as independent samples.
    """

    v_pzt: float
    v_applied: np.ndarray
    nu_m: np.ndarray
    sigma_nu: np.ndarray

    def __post_init__(self):
        arrays = [np.array(getattr(self, n), dtype=float) for n in ("v_applied", "nu_m", "sigma_nu")]
        if not (arrays[0].shape == arrays[1].shape == arrays[2].shape) or arrays[0].ndim != 1:
            raise ValueError("v_applied, nu_m and sigma_nu must be 1-d arrays of equal length")
        for name, arr in zip(("v_applied", "nu_m", "sigma_nu"), arrays):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "v_pzt", float(self.v_pzt))

    def __len__(self) -> int:
        return self.v_applied.size

    def __eq__(self, other) -> bool:
        if not isinstance(other, VoltageSweep):
            return NotImplemented
        return (
            self.v_pzt == other.v_pzt
            and np.array_equal(self.v_applied, other.v_applied)
            and np.array_equal(self.nu_m, other.nu_m)
            and np.array_equal(self.sigma_nu, other.sigma_nu)
        )

    @property
    def n_distinct_voltages(self) -> int:
        return np.unique(self.v_applied).size


@dataclass(frozen=True)
class SweepPlan:
    """Acquisition schedule: PZT steps (in acquisition order) and per-step voltage grids."""

    v_pzt_steps: tuple[float, ...]
    v_applied_grid: tuple[tuple[float, ...], ...]
    repeats_per_point: int = 1

    def __post_init__(self):
        steps = tuple(float(v) for v in self.v_pzt_steps)
        grid = tuple(tuple(float(v) for v in g) for g in self.v_applied_grid)
        object.__setattr__(self, "v_pzt_steps", steps)
        object.__setattr__(self, "v_applied_grid", grid)
        if not steps:
            raise InvalidPlan("plan has no PZT steps")
        if len(grid) != len(steps):
            raise InvalidPlan(f"{len(steps)} PZT steps but {len(grid)} voltage grids")
        if len(set(steps)) != len(steps):
            raise InvalidPlan("PZT steps must be distinct")
        if self.repeats_per_point < 1:
            raise InvalidPlan("repeats_per_point must be >= 1")
        for v, g in zip(steps, grid):
            if len(set(g)) < MIN_PLAN_VOLTAGES:
                raise InvalidPlan(
                    f"step V_pzt={v}: need >= {MIN_PLAN_VOLTAGES} distinct applied voltages, got {len(set(g))}"
                )

    def validate_against(self, cfg: ApparatusConfig) -> None:
        x = cfg.V_pzt_polarity * (cfg.V0_pzt - np.asarray(self.v_pzt_steps))
        if np.any(x <= 0):
            bad = [v for v, xi in zip(self.v_pzt_steps, x) if xi <= 0]
            raise InvalidPlan(f"PZT steps at or beyond contact: {bad}")

    def to_dict(self) -> dict:
        return {
            "v_pzt_steps": list(self.v_pzt_steps),
            "v_applied_grid": [list(g) for g in self.v_applied_grid],
            "repeats_per_point": self.repeats_per_point,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "SweepPlan":
        return cls(
            v_pzt_steps=tuple(data["v_pzt_steps"]),
            v_applied_grid=tuple(tuple(g) for g in data["v_applied_grid"]),
            repeats_per_point=int(data.get("repeats_per_point", 1)),
        )


@dataclass(frozen=True)
class MeasurementRun:
    """A full calibration run, sweeps ordered largest gap first.

    ``provenance`` holds the ground-truth echo (as a plain dict) for synthetic
    runs and is ``None`` for measured data.
    """

    run_id: str
    created: str
    sweeps: tuple[VoltageSweep, ...]
    plan: SweepPlan | None = None
    apparatus: ApparatusConfig | None = None
    provenance: dict[str, Any] | None = field(default=None, compare=True)

    def __post_init__(self):
        object.__setattr__(self, "sweeps", tuple(self.sweeps))

    def __len__(self) -> int:
        return len(self.sweeps)

    @property
    def v_pzt(self) -> np.ndarray:
        return np.array([s.v_pzt for s in self.sweeps])
