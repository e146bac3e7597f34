"""Parameter schedules, limit constants, test functions, serialization."""
import math

import numpy as np
import pytest

from slfvlab.core import (
    Event,
    FixedRadius,
    ScalingParams,
    TabulatedAntiderivative,
    VariableRadius,
    ball_normalized_kappa,
    ball_volume,
    default_battery,
    finite_ratios_fixed,
    finite_ratios_variable,
    fixed_ladder,
    from_jsonable,
    gaussian_hump,
    limit_params_fixed,
    limit_params_variable,
    power_law_mass,
    quartic_bump,
    replicate_stream,
    stable_kappa0,
    to_jsonable,
    validate_fixed_radius_conditions,
    validate_variable_radius_conditions,
    variable_ladder,
)


def test_ball_volumes():
    assert ball_volume(1, 1.0) == 2.0
    assert ball_volume(2, 1.0) == pytest.approx(math.pi, rel=1e-15)
    assert ball_volume(3, 2.0) == pytest.approx(4.0 / 3.0 * math.pi * 8.0,
                                                rel=1e-15)


def test_stable_kappa0_closed_forms():
    # int_0^inf (e^-v - 1 + v) v^(-2-b) dv = Gamma(1-b) / (b (1+b))
    assert stable_kappa0(0.5) == pytest.approx(4.0 * math.sqrt(math.pi) / 3.0,
                                               rel=1e-12)
    assert stable_kappa0(0.25) == pytest.approx(
        math.gamma(0.75) / (0.25 * 1.25), rel=1e-12)


def test_power_law_mass_handles_log_case():
    assert power_law_mass(2.0, 0.5, 1.0) == pytest.approx((1 - 0.125) / 3.0)
    assert power_law_mass(-1.0, 0.25, 1.0) == pytest.approx(math.log(4.0))


def test_fixed_limit_params_match_hand_computation():
    law = FixedRadius(radius=1.0, impact=0.8)
    lp = limit_params_fixed(1.0, 2.0, law, 1)
    # m = 2 C1 u r^(d+2) C(d) with C(1) = 2/3; kappa = C2 u^2 |B_r|^2 / 2.
    assert lp.m_diff == pytest.approx(2.0 * 1.0 * 0.8 * (2.0 / 3.0), rel=1e-14)
    assert lp.kappa == pytest.approx(0.5 * 2.0 * 0.64 * 4.0, rel=1e-14)
    assert lp.beta == 1.0


def test_variable_limit_params_match_hand_computation():
    law = VariableRadius(alpha=2.5, gamma=3.0)
    beta = 0.75
    lp = limit_params_variable(0.3, 0.2, law, 1, beta)
    # m = 2 C1 C(d) int_0^1 r^(alpha+d+2-gamma) dr, with C(1) = 2/3.
    want_m = 2.0 * 0.3 * (2.0 / 3.0) / (2.5 + 1.0 + 3.0 - 3.0)
    assert lp.m_diff == pytest.approx(want_m, rel=1e-14)
    want_kappa = 0.2 / (3.0 - 1.0) * stable_kappa0(beta)
    assert lp.kappa == pytest.approx(want_kappa, rel=1e-14)
    assert lp.beta == beta


def test_ball_normalized_kappa_scales_by_ball_volume_power():
    law = VariableRadius(alpha=2.5, gamma=3.0)
    lp = limit_params_variable(0.3, 0.2, law, 1, 0.75)
    assert ball_normalized_kappa(lp, 1) == pytest.approx(
        lp.kappa * 2.0 ** 1.75, rel=1e-14)


def test_fixed_ladder_keeps_ratios_constant():
    law = FixedRadius(radius=1.0, impact=0.8)
    rungs = fixed_ladder([3.0, 5.0, 8.0], 1.3, 0.7, law, 1)
    for rung in rungs:
        c1, c2 = finite_ratios_fixed(rung.params)
        assert c1 == pytest.approx(1.3, rel=1e-12)
        assert c2 == pytest.approx(0.7, rel=1e-12)


def test_variable_ladder_keeps_ratios_and_grows_k():
    law = VariableRadius(alpha=2.5, gamma=3.0)
    beta = 0.75
    rungs = variable_ladder([2.0, 2.83, 4.0], 4.5, 0.3, 0.2, law, beta, 1)
    ks = []
    for rung in rungs:
        c1, c2 = finite_ratios_variable(rung.params, beta)
        assert c1 == pytest.approx(0.3, rel=1e-12)
        assert c2 == pytest.approx(0.2, rel=1e-12)
        ks.append(rung.params.k_density)
    assert ks[0] < ks[1] < ks[2]


def test_condition_validators_flag_good_and_bad_schedules():
    law = FixedRadius(radius=1.0, impact=0.8)
    good = fixed_ladder([10.0], 1.0, 1.0, law, 1)[0].params
    rep = validate_fixed_radius_conditions(good, law, 1.0, 1.0)
    assert rep.ok
    bad = ScalingParams(n_rate=good.n_rate, m_space=good.m_space,
                        j_impact=good.j_impact * 7.0,
                        k_density=good.k_density, dimension=1)
    rep = validate_fixed_radius_conditions(bad, law, 1.0, 1.0)
    assert not rep.ok

    vlaw = VariableRadius(alpha=2.5, gamma=3.0)
    vgood = variable_ladder([4.0], 4.5, 0.3, 0.2, vlaw, 0.75, 1)[0].params
    vrep = validate_variable_radius_conditions(vgood, vlaw, 0.75, 0.3, 0.2)
    assert vrep.ok
    assert vrep.ratios["c2_stable"] == pytest.approx(0.2, rel=1e-12)
    wrong_tie = VariableRadius(alpha=2.0, gamma=3.0)
    vbad = validate_variable_radius_conditions(vgood, wrong_tie, 0.75)
    assert not vbad.flags["alpha_tie"]


def test_variable_radius_impact_and_cutoff():
    law = VariableRadius(alpha=2.5, gamma=3.0)
    params = ScalingParams(n_rate=10.0, m_space=2.0, j_impact=8.0,
                           k_density=1.0, dimension=1)
    assert law.lower_radius(params) == pytest.approx(0.5)
    assert law.impact_at(0.5) == pytest.approx(8.0)
    # scaled impact at the cutoff radius is exactly 1
    assert law.impact_at(law.lower_radius(params)) / params.j_impact == \
        pytest.approx(1.0)


def test_quartic_bump_calculus_consistency():
    phi = quartic_bump(center=0.3, radius=0.7, amplitude=2.0)
    xs = np.linspace(-0.5, 1.1, 23)
    eps = 1e-6
    d1_num = (phi.value(xs + eps) - phi.value(xs - eps)) / (2 * eps)
    assert np.allclose(phi.d1(xs), d1_num, atol=1e-7)
    d2_num = (phi.d1(xs + eps) - phi.d1(xs - eps)) / (2 * eps)
    assert np.allclose(phi.d2(xs), d2_num, atol=1e-6)
    a1_num = (phi.a1(xs + eps) - phi.a1(xs - eps)) / (2 * eps)
    assert np.allclose(phi.value(xs), a1_num, atol=1e-7)
    a2_num = (phi.a2(xs + eps) - phi.a2(xs - eps)) / (2 * eps)
    assert np.allclose(phi.a1(xs), a2_num, atol=1e-7)
    # compact support and positivity
    assert phi.value(0.3 - 0.7) == 0.0
    assert phi.value(0.3 + 0.71) == 0.0
    assert float(np.min(phi.value(xs))) >= 0.0


def test_gaussian_hump_matches_closed_form():
    phi = gaussian_hump(center=0.0, sigma=0.25, amplitude=1.5)
    assert phi.value(0.1) == pytest.approx(1.5 * math.exp(-0.01 / 0.125),
                                           rel=1e-12)
    # a1 difference integrates the density: total integral = A sigma sqrt(2 pi)
    total = phi.a1(1e3) - phi.a1(-1e3)
    assert total == pytest.approx(1.5 * 0.25 * math.sqrt(2 * math.pi),
                                  rel=1e-10)


def test_battery_has_three_distinct_functions():
    batt = default_battery()
    assert len(batt) == 3
    sups = [f.sup_norm() for f in batt]
    assert len({round(s, 6) for s in sups}) >= 2
    for f in batt:
        assert f.c3_norm() < math.inf


def test_tabulated_antiderivative_matches_quadrature():
    phi = quartic_bump()
    tab = TabulatedAntiderivative(lambda x: np.asarray(phi.value(x)) ** 2,
                                  -0.5, 0.5)
    # int_{-0.5}^{0.2} phi^2 via dense trapezoid
    xs = np.linspace(-0.5, 0.2, 200001)
    want = np.trapezoid(phi.value(xs) ** 2, xs)
    got = tab(0.2) - tab(-0.5)
    assert got == pytest.approx(want, abs=1e-9)


def test_replicate_streams_are_keyed_not_sequential():
    a = replicate_stream(7, "x", 0).random(4)
    b = replicate_stream(7, "x", 0).random(4)
    c = replicate_stream(7, "x", 1).random(4)
    d = replicate_stream(7, "y", 0).random(4)
    e = replicate_stream(8, "x", 0).random(4)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)
    assert not np.array_equal(a, d)
    assert not np.array_equal(a, e)


def test_event_json_round_trip():
    ev = Event(time=1.25, center=(0.3, -0.7), radius=0.1, impact=0.55)
    back = from_jsonable(to_jsonable(ev))
    assert back == ev


def test_scaling_params_validation():
    with pytest.raises(ValueError):
        ScalingParams(n_rate=-1.0, m_space=2.0, j_impact=2.0, k_density=1.0,
                      dimension=1)
    with pytest.raises(ValueError):
        FixedRadius(radius=1.0, impact=1.5)
    with pytest.raises(ValueError):
        VariableRadius(alpha=2.5, gamma=-1.0)
