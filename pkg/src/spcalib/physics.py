"""
Closed-form sphere-plane models used by the electrostatic calibration.

All quantities are SI. PZT biases enter only through the actuation
coefficient ``beta`` (m/V) and the contact bias ``V0_pzt``:

    d = beta * s * (V0_pzt - V_pzt),     s = V_pzt_polarity (+1 or -1)

Electrostatic (PFA) force gradient and its frequency signature::

    F'_el = pi eps0 R V^2 / d^2
    nu_m^2 = nu_p^2 - F'/(4 pi^2 m_eff)
    k_el = eps0 R / (4 pi m_eff d^2)

The effective modal mass is an input. For the fundamental flexural mode of a
uniform cantilever m_eff ~ m_p/4 is a common approximation; nothing here
computes it from geometry.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Final

import numpy as np

from .errors import ContactOrBeyond, InvalidConfig, NonPositiveDistance, UnstableResonator

# CODATA 2018
EPSILON0: Final = 8.8541878128e-12  # F/m
HBAR: Final = 1.054571817e-34  # J s
C_LIGHT: Final = 2.99792458e8  # m/s


@dataclass(frozen=True)
class PhysicalConstants:
    epsilon0: float = EPSILON0
    hbar: float = HBAR
    c: float = C_LIGHT


CONSTANTS: Final = PhysicalConstants()


@dataclass(frozen=True)
class ApparatusConfig:
    """Ground-truth geometry and mechanics of the sphere-plane setup.

    Defaults follow the reported apparatus: R = 30.9 mm, physical mass
    1.72e-4 kg (used as the m_eff stand-in), nu_p ~ 894 Hz, beta = 87 nm/V,
    and a contact bias of 43.12 V.
    """

    R: float = 30.9e-3
    m_eff: float = 1.72e-4
    nu_p: float = 894.0
    beta: float = 87e-9
    V0_pzt: float = 43.12
    V_pzt_polarity: int = 1

    def __post_init__(self):
        for name in ("R", "m_eff", "nu_p", "beta"):
            value = getattr(self, name)
            if not (np.isfinite(value) and value > 0):
                raise InvalidConfig(f"{name} must be finite and > 0, got {value!r}")
        if not np.isfinite(self.V0_pzt):
            raise InvalidConfig(f"V0_pzt must be finite, got {self.V0_pzt!r}")
        if self.V_pzt_polarity not in (1, -1):
            raise InvalidConfig("V_pzt_polarity must be +1 or -1")

    def to_dict(self) -> dict:
        return {
            "R": self.R,
            "m_eff": self.m_eff,
            "nu_p": self.nu_p,
            "beta": self.beta,
            "V0_pzt": self.V0_pzt,
            "V_pzt_polarity": self.V_pzt_polarity,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ApparatusConfig":
        known = {k: data[k] for k in cls().to_dict() if k in data}
        if "V_pzt_polarity" in known:
            known["V_pzt_polarity"] = int(known["V_pzt_polarity"])
        return cls(**known)


def _check_distance(d):
    d = np.asarray(d, dtype=float)
    if np.any(~(d > 0)):
        raise NonPositiveDistance(f"distance must be > 0, got {d!r}")
    return d


def _out(x):
    return float(x) if np.ndim(x) == 0 else x


def electrostatic_force_gradient(cfg: ApparatusConfig, v_diff, d):
    """PFA sphere-plane electrostatic force gradient (N/m), pi eps0 R V^2/d^2."""
    d = _check_distance(d)
    v = np.asarray(v_diff, dtype=float)
    return _out(np.pi * EPSILON0 * cfg.R * v * v / (d * d))


def casimir_force_gradient_pfa(cfg: ApparatusConfig, d):
    """Ideal-metal PFA Casimir force gradient magnitude, pi^3 hbar c R / (120 d^4)."""
    d = _check_distance(d)
    return _out(np.pi**3 * HBAR * C_LIGHT * cfg.R / (120.0 * d**4))


def frequency_shift_squared(cfg: ApparatusConfig, f_prime):
    """Squared-frequency shift F'/(4 pi^2 m_eff) produced by a force gradient."""
    return _out(np.asarray(f_prime, dtype=float) / (4.0 * np.pi**2 * cfg.m_eff))


def frequency_squared(cfg: ApparatusConfig, f_prime_total):
    """Squared resonance frequency under a total attractive force gradient.

    Raises
    ------
    UnstableResonator
        If the gradient is large enough to drive nu_m^2 to zero or below.
    """
    nu_sq = cfg.nu_p**2 - np.asarray(frequency_shift_squared(cfg, f_prime_total))
    if np.any(~(nu_sq > 0)):
        raise UnstableResonator(
            f"force gradient {f_prime_total!r} N/m destabilizes the resonator"
        )
    return _out(nu_sq)


def curvature_coefficient(cfg: ApparatusConfig, d):
    """Parabola curvature k_el = eps0 R / (4 pi m_eff d^2) in Hz^2/V^2."""
    d = _check_distance(d)
    return _out(EPSILON0 * cfg.R / (4.0 * np.pi * cfg.m_eff * d * d))


def alpha_factor(cfg: ApparatusConfig) -> float:
    """Calibration factor eps0 R / (4 pi m_eff beta^2), i.e. k_el per PZT-volt^-2."""
    return EPSILON0 * cfg.R / (4.0 * np.pi * cfg.m_eff * cfg.beta**2)


def pzt_offset(cfg: ApparatusConfig, v_pzt):
    """Polarity-normalized distance to contact in PZT volts, s*(V0 - V)."""
    return _out(cfg.V_pzt_polarity * (cfg.V0_pzt - np.asarray(v_pzt, dtype=float)))


def pzt_to_distance(cfg: ApparatusConfig, v_pzt):
    """Gap implied by a linear PZT, beta * s * (V0 - V_pzt).

    Raises
    ------
    ContactOrBeyond
        If the bias reaches or passes the contact bias.
    """
    x = np.asarray(pzt_offset(cfg, v_pzt))
    if np.any(~(x > 0)):
        raise ContactOrBeyond(f"V_pzt={v_pzt!r} is at or beyond contact ({cfg.V0_pzt} V)")
    return _out(cfg.beta * x)


def distance_to_pzt(cfg: ApparatusConfig, d):
    d = _check_distance(d)
    return _out(cfg.V0_pzt - cfg.V_pzt_polarity * d / cfg.beta)


def equivalent_voltage(d):
    """Bias whose electrostatic force equals the PFA Casimir force at gap d.

    Solving pi eps0 R V^2/d = pi^3 hbar c R/(360 d^3) gives
    V_eq = (pi/d) sqrt(hbar c / (360 eps0)); about 9.9 mV at 1 um.
    """
    d = _check_distance(d)
    return _out(np.pi / d * np.sqrt(HBAR * C_LIGHT / (360.0 * EPSILON0)))


def electrostatic_force(cfg: ApparatusConfig, v_diff, d):
    """PFA sphere-plane electrostatic force magnitude pi eps0 R V^2 / d."""
    d = _check_distance(d)
    v = np.asarray(v_diff, dtype=float)
    return _out(np.pi * EPSILON0 * cfg.R * v * v / d)


def casimir_force_pfa(cfg: ApparatusConfig, d):
    d = _check_distance(d)
    return _out(np.pi**3 * HBAR * C_LIGHT * cfg.R / (360.0 * d**3))
