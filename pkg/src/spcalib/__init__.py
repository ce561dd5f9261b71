"""
Electrostatic calibration analysis for sphere-plane force experiments.

Per-distance parabola fits of the squared resonance frequency against the
applied bias, power-law fits of the curvature series, stability and
distance diagnostics, contact-potential trends, residual force-gradient fits,
and a seeded synthetic apparatus to test all of it against.
"""

__version__ = "0.1.0"

from .errors import *  # noqa: F401,F403
from .physics import (  # noqa: F401
    CONSTANTS,
    ApparatusConfig,
    PhysicalConstants,
    alpha_factor,
    casimir_force_gradient_pfa,
    curvature_coefficient,
    electrostatic_force_gradient,
    equivalent_voltage,
    frequency_squared,
    pzt_to_distance,
)
from .data import MeasurementRun, SweepPlan, VoltageSweep  # noqa: F401
from .synth import GroundTruth, apply_drift, eval_vc, generate_run  # noqa: F401
from .parabola import CalibrationSeries, ParabolaFit, fit_parabola, fit_run  # noqa: F401
from .lm import LMResult, LMSettings, lm_minimize  # noqa: F401
from .scaling import FREE, CurvaturePoint, Fixed, Free, PowerLawFit, fit_power_law, initial_guess  # noqa: F401
from .analysis import (  # noqa: F401
    distance_report,
    residual_analysis,
    residual_analysis_joint,
    stability_scan,
    vc_trend,
    veq_comparison,
)
from .fileio import read_run, write_run  # noqa: F401
