import math

import numpy as np
import pytest

from spcalib import physics
from spcalib.errors import ContactOrBeyond, NonPositiveDistance, UnstableResonator
from spcalib.physics import ApparatusConfig

EPS0, HBAR, C = 8.8541878128e-12, 1.054571817e-34, 2.99792458e8


def test_constants_codata():
    k = physics.CONSTANTS
    assert (k.epsilon0, k.hbar, k.c) == (EPS0, HBAR, C)


@pytest.mark.parametrize("field,value", [("R", 0.0), ("m_eff", -1.0), ("nu_p", 0.0), ("beta", -1e-9)])
def test_config_rejects_nonpositive(field, value):
    with pytest.raises(ValueError):
        ApparatusConfig(**{field: value})


def test_config_dict_round_trip(cfg):
    assert ApparatusConfig.from_dict(cfg.to_dict()) == cfg


def test_force_gradient_zero_bias(cfg):
    assert physics.electrostatic_force_gradient(cfg, 0.0, 1e-6) == 0.0


def test_force_gradient_even_in_voltage(cfg):
    assert physics.electrostatic_force_gradient(cfg, 0.3, 2e-7) == physics.electrostatic_force_gradient(cfg, -0.3, 2e-7)


def test_force_gradient_hand_value(cfg):
    expected = math.pi * 8.8541878128e-12 * 0.0309 * 0.01 / 1e-14
    assert physics.electrostatic_force_gradient(cfg, 0.1, 1e-7) == pytest.approx(expected, rel=1e-14)


@pytest.mark.parametrize("fn", [
    lambda c, d: physics.electrostatic_force_gradient(c, 1.0, d),
    physics.casimir_force_gradient_pfa,
    physics.curvature_coefficient,
])
@pytest.mark.parametrize("d", [0.0, -1e-9])
def test_nonpositive_distance(cfg, fn, d):
    with pytest.raises(NonPositiveDistance):
        fn(cfg, d)


def test_casimir_scaling(cfg):
    d = 3.3e-7
    assert physics.casimir_force_gradient_pfa(cfg, d) / physics.casimir_force_gradient_pfa(cfg, 2 * d) == pytest.approx(16, rel=1e-13)
    assert physics.casimir_force_gradient_pfa(cfg, d) / physics.casimir_force_gradient_pfa(cfg, 10 * d) == pytest.approx(1e4, rel=1e-13)


def test_casimir_value_at_one_micron(cfg):
    expected = math.pi**3 * HBAR * C * 0.0309 / (120 * 1e-24)
    got = physics.casimir_force_gradient_pfa(cfg, 1e-6)
    assert got == pytest.approx(expected, rel=1e-14)
    assert got == pytest.approx(2.524e-4, rel=1e-3)  # 31.006 * 3.1615e-26 * 0.0309 / 1.2e-22


def test_frequency_squared_basics(cfg):
    assert physics.frequency_squared(cfg, 0.0) == 894.0**2
    f_prime = 4 * math.pi**2 * cfg.m_eff  # shift of exactly 1 Hz^2
    assert physics.frequency_squared(cfg, f_prime) == pytest.approx(894.0**2 - 1, rel=1e-15)


def test_frequency_squared_unstable(cfg):
    with pytest.raises(UnstableResonator):
        physics.frequency_squared(cfg, 4 * math.pi**2 * cfg.m_eff * cfg.nu_p**2 * 1.01)


def test_frequency_identity_grid(cfg):
    v = np.linspace(-0.5, 0.5, 11)[:, None]
    d = np.geomspace(2e-8, 4e-6, 13)[None, :]
    lhs = physics.frequency_squared(cfg, physics.electrostatic_force_gradient(cfg, v, d))
    rhs = cfg.nu_p**2 - physics.curvature_coefficient(cfg, d) * v**2
    assert np.max(np.abs(lhs / rhs - 1)) < 1e-12


def test_curvature_value_and_scaling(cfg):
    k = physics.curvature_coefficient(cfg, 1e-6)
    assert k == pytest.approx(EPS0 * 0.0309 / (4 * math.pi * 1.72e-4 * 1e-12), rel=1e-14)
    assert k == pytest.approx(1.27e2, rel=0.01)
    assert k / physics.curvature_coefficient(cfg, 2e-6) == pytest.approx(4, rel=1e-14)
    ks = physics.curvature_coefficient(cfg, np.geomspace(1e-8, 1e-5, 50))
    assert np.all(np.diff(ks) < 0)


def test_alpha_dependencies(cfg):
    from dataclasses import replace
    a = physics.alpha_factor(cfg)
    assert a / physics.alpha_factor(replace(cfg, beta=2 * cfg.beta)) == pytest.approx(4, rel=1e-14)
    assert a / physics.alpha_factor(replace(cfg, m_eff=2 * cfg.m_eff)) == pytest.approx(2, rel=1e-14)


def test_alpha_substitution_identity(cfg):
    v = np.linspace(0.0, 43.0, 40)
    d = physics.pzt_to_distance(cfg, v)
    lhs = physics.curvature_coefficient(cfg, d)
    rhs = physics.alpha_factor(cfg) * (cfg.V0_pzt - v) ** -2
    assert np.max(np.abs(lhs / rhs - 1)) < 1e-12


def test_pzt_to_distance(cfg):
    assert physics.pzt_to_distance(cfg, 33.12) == pytest.approx(8.70e-7, rel=1e-12)
    assert physics.pzt_to_distance(cfg, cfg.V0_pzt - 1e-3) == pytest.approx(cfg.beta * 1e-3, rel=1e-9)
    with pytest.raises(ContactOrBeyond):
        physics.pzt_to_distance(cfg, cfg.V0_pzt)
    with pytest.raises(ContactOrBeyond):
        physics.pzt_to_distance(cfg, cfg.V0_pzt + 1)


def test_pzt_polarity():
    cfg = ApparatusConfig(V0_pzt=-10.0, V_pzt_polarity=-1)
    assert physics.pzt_to_distance(cfg, -5.0) == pytest.approx(5 * cfg.beta)
    assert physics.distance_to_pzt(cfg, 5 * cfg.beta) == pytest.approx(-5.0)
    with pytest.raises(ContactOrBeyond):
        physics.pzt_to_distance(cfg, -11.0)


def test_equivalent_voltage():
    v1 = physics.equivalent_voltage(1e-6)
    assert 9.4e-3 <= v1 <= 10.4e-3
    assert v1 == pytest.approx(9.9e-3, rel=0.01)
    assert physics.equivalent_voltage(2e-6) == pytest.approx(v1 / 2, rel=1e-14)
    with pytest.raises(NonPositiveDistance):
        physics.equivalent_voltage(0.0)


@pytest.mark.parametrize("d", np.geomspace(1e-8, 1e-5, 17))
def test_equivalent_voltage_force_identity(cfg, d):
    v = physics.equivalent_voltage(d)
    lhs = math.pi * EPS0 * cfg.R * v**2 / d
    rhs = math.pi**3 * HBAR * C * cfg.R / (360 * d**3)
    assert abs(lhs / rhs - 1) < 1e-12
    assert abs(physics.electrostatic_force(cfg, v, d) / physics.casimir_force_pfa(cfg, d) - 1) < 1e-12


def test_outputs_finite(cfg):
    d = np.geomspace(1e-9, 1e-3, 100)
    for arr in (physics.curvature_coefficient(cfg, d), physics.casimir_force_gradient_pfa(cfg, d),
                physics.equivalent_voltage(d), physics.electrostatic_force_gradient(cfg, 1.0, d)):
        assert np.all(np.isfinite(arr))
