import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from spcalib import physics, synth
from spcalib.errors import DegenerateSeries, InsufficientPoints, V0Collision
from spcalib.parabola import fit_run
from spcalib.scaling import (
    FREE,
    CurvaturePoint,
    Fixed,
    curvature_points,
    fit_power_law,
    format_value_error,
    initial_guess,
    parse_mode,
)

ALPHA = physics.alpha_factor(physics.ApparatusConfig())
V0 = 43.12


def model_points(gamma=-2.0, alpha=ALPHA, v0=V0, n=30, seed=1, noise=0.0, rel_sigma=0.04):
    rng = np.random.default_rng(seed)
    v = np.sort(rng.uniform(0.0, v0 - 0.3, n))
    k = alpha * (v0 - v) ** gamma
    obs = k * (1 + noise * rng.standard_normal(n))
    return [CurvaturePoint(float(a), float(b), float(rel_sigma * c)) for a, b, c in zip(v, obs, k)]


def test_curvature_point_validation():
    with pytest.raises(ValueError):
        CurvaturePoint(1.0, 1.0, 0.0)
    with pytest.raises(ValueError):
        CurvaturePoint(1.0, -1.0, 0.1)


def test_parse_mode():
    assert parse_mode("free") == FREE
    assert parse_mode("fixed:-2") == Fixed(-2.0)
    assert parse_mode(" Fixed:-1.7 ") == Fixed(-1.7)
    assert str(Fixed(-2.0)) == "fixed:-2" and str(FREE) == "free"
    for bad in ("fixed", "fixed:abc", "loose"):
        with pytest.raises(ValueError):
            parse_mode(bad)


def test_noiseless_free_recovery():
    fit = fit_power_law(model_points(), FREE)
    assert fit.converged
    assert abs(fit.alpha / ALPHA - 1) < 1e-8
    assert abs(fit.v0_pzt / V0 - 1) < 1e-8
    assert abs(fit.gamma / -2.0 - 1) < 1e-8
    assert fit.chi2_red < 1e-12
    assert fit.cov.shape == (3, 3) and np.allclose(fit.cov, fit.cov.T)
    assert np.all(np.linalg.eigvalsh(fit.cov) > 0)


@pytest.mark.parametrize("gamma", [-2.0, -1.7, -1.54])
def test_fixed_and_free_agree_noiseless(gamma):
    pts = model_points(gamma)
    free, fixed = fit_power_law(pts, FREE), fit_power_law(pts, Fixed(gamma))
    assert abs(free.alpha / fixed.alpha - 1) < 1e-8
    assert abs(free.v0_pzt / fixed.v0_pzt - 1) < 1e-8
    assert fixed.cov.shape == (2, 2) and fixed.gamma_fixed and fixed.sigma_gamma == 0.0
    assert free.v0_pzt > max(p.v_pzt for p in pts)


@settings(max_examples=25, deadline=None)
@given(c=st.floats(1e-3, 1e3), seed=st.integers(0, 10_000))
def test_scale_equivariance(c, seed):
    pts = model_points(-1.7, seed=seed, noise=0.04)
    scaled = [CurvaturePoint(p.v_pzt, c * p.k_el, c * p.sigma_k) for p in pts]
    f0, f1 = fit_power_law(pts, FREE), fit_power_law(scaled, FREE)
    assert abs(f1.alpha / (c * f0.alpha) - 1) < 1e-9
    assert abs(f1.gamma / f0.gamma - 1) < 1e-9
    assert abs(f1.v0_pzt / f0.v0_pzt - 1) < 1e-9


@settings(max_examples=25, deadline=None)
@given(delta=st.floats(-30.0, 30.0), seed=st.integers(0, 10_000))
def test_shift_equivariance(delta, seed):
    pts = model_points(-1.7, seed=seed, noise=0.04)
    moved = [CurvaturePoint(p.v_pzt + delta, p.k_el, p.sigma_k) for p in pts]
    f0, f1 = fit_power_law(pts, FREE), fit_power_law(moved, FREE)
    assert abs((f1.v0_pzt - delta) - f0.v0_pzt) < 1e-9 * abs(f0.v0_pzt)
    assert abs(f1.alpha / f0.alpha - 1) < 1e-9
    assert abs(f1.gamma / f0.gamma - 1) < 1e-9


def test_minimum_points():
    pts = model_points(n=4)
    fit_power_law(pts, Fixed(-2.0))
    with pytest.raises(InsufficientPoints):
        fit_power_law(pts, FREE)
    with pytest.raises(InsufficientPoints):
        fit_power_law(pts[:3], Fixed(-2.0))


def test_distinct_biases_required():
    pts = model_points(n=6)
    pts[1] = CurvaturePoint(pts[0].v_pzt, pts[1].k_el, pts[1].sigma_k)
    with pytest.raises(DegenerateSeries):
        fit_power_law(pts, FREE)


def test_v0_collision():
    # curvature diverging right at the last point forces V0 onto it
    v = np.array([0.0, 5.0, 10.0, 15.0, 20.0, 25.0])
    k = np.array([1.0, 1.0, 1.0, 1.0, 1.0, 1e12])
    pts = [CurvaturePoint(a, b, 0.01 * b) for a, b in zip(v, k)]
    with pytest.raises((V0Collision, DegenerateSeries)):
        fit_power_law(pts, Fixed(-2.0))


def test_initial_guess_exact_inverse_square():
    p = initial_guess(model_points(), FREE)
    assert abs(np.exp(p[0]) / ALPHA - 1) < 0.05
    assert abs(p[1] / V0 - 1) < 0.05
    assert abs(p[2] / -2.0 - 1) < 0.05
    assert initial_guess(model_points(), Fixed(-2.0)).shape == (2,)


def test_initial_guess_iterates_to_anomalous_slope():
    pts = model_points(-1.7)
    assert abs(initial_guess(pts, FREE, refinements=2)[2] + 1.7) < 0.01
    assert abs(initial_guess(pts, FREE, refinements=25)[2] + 1.7) < 1e-9


def test_initial_guess_too_short():
    with pytest.raises(DegenerateSeries):
        initial_guess(model_points(n=2), FREE)


@pytest.mark.parametrize("value,error,unit,text", [
    (43.1234, 0.0123, "V", "43.12±0.01 V"),
    (56.77, 0.02, "V", "56.77±0.02 V"),
    (-1.7012, 0.0098, "", "-1.70±0.01"),
    (1234.5, 56.0, "", "1230±60"),
])
def test_format_value_error(value, error, unit, text):
    assert format_value_error(value, error, unit) == text


def test_curvature_points_floor_and_polarity(run1_seed7):
    series = fit_run(run1_seed7)
    raw = curvature_points(series, None)
    floored = curvature_points(series, 0.04)
    assert all(f.sigma_k >= 0.04 * f.k_el * (1 - 1e-15) for f in floored)
    assert all(f.sigma_k >= r.sigma_k for f, r in zip(floored, raw))
    flipped = curvature_points(series, 0.04, polarity=-1)
    assert [p.v_pzt for p in flipped] == [-p.v_pzt for p in floored]


def test_run1_analog_single_seed(run1_seed7):
    pts = curvature_points(fit_run(run1_seed7))
    free, fixed = fit_power_law(pts, FREE), fit_power_law(pts, Fixed(-2.0))
    assert abs(free.gamma + 1.70) < 0.05 and 0.5 <= free.chi2_red <= 1.5
    assert fixed.chi2_red > 5
    assert free.v0_text().endswith(" V") and "±" in free.v0_text()


@pytest.mark.slow
def test_gamma_coverage_and_covariance():
    truth = synth.run1_truth()
    plan = synth.run1_plan(truth, 0)
    est, err = [], []
    for seed in range(500):
        fit = fit_power_law(curvature_points(fit_run(synth.generate_run(truth, plan, 10_000 + seed))), FREE)
        est.append([fit.alpha, fit.v0_pzt, fit.gamma])
        err.append([fit.sigma_alpha, fit.sigma_v0, fit.sigma_gamma])
    est, err = np.array(est), np.array(err)
    coverage = np.mean(np.abs(est[:, 2] + 1.70) <= err[:, 2])
    assert 0.60 <= coverage <= 0.75
    ratio = est.std(axis=0, ddof=1) / np.sqrt(np.mean(err**2, axis=0))
    assert np.all(np.abs(ratio - 1) < 0.15), ratio
