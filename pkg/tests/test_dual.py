import math

import numpy as np
import pytest
from scipy import stats

from slfvlab.core import (Event, FixedRadius, ScalingParams, VariableRadius,
                          limit_params_fixed, power_law_mass)
from slfvlab.dual import (GapReport, LineageSet, MarkedEventStream,
                          apply_marks, batch_pair_coalescence,
                          batch_single_displacement, coalescence_bound_shape,
                          coalescence_probability, duality_gap, hazard_bound,
                          initial_value_at, make_lineages, run_dual)
from slfvlab.events import lineage_jump_rate
from slfvlab.forward import two_level_step
from slfvlab.stats import MeanReport

FPARAMS = ScalingParams(n_rate=50.0, m_space=2.0, j_impact=2.0,
                        k_density=1.0, dimension=1)
FLAW = FixedRadius(radius=1.0, impact=1.0)   # scaled impact 0.5


def test_make_lineages_and_validation():
    ls = make_lineages([0.0, 0.5, -0.5], 1)
    assert ls.count == 3
    assert ls.positions.shape == (3, 1)
    assert ls.ids == (0, 1, 2)
    with pytest.raises(ValueError):
        make_lineages(np.zeros((2, 3)), 2)
    bad = LineageSet(positions=np.zeros((2, 1)), ids=(0,))
    with pytest.raises(ValueError):
        bad.validate()


def test_apply_marks_merges_to_smallest_id():
    ls = make_lineages([0.0, 0.1, 5.0], 1)
    ev = Event(time=0.3, center=(0.05,), radius=0.5, impact=0.5)
    rng = np.random.default_rng(0)
    out = apply_marks(ls, ev, [0, 1], rng)
    assert out.count == 2
    assert set(out.ids) == {0, 2}
    assert len(out.merge_log) == 1
    rec = out.merge_log[0]
    assert rec.merged == (0, 1) and rec.survivor == 0
    assert abs(rec.position[0] - 0.05) <= 0.5
    out.validate()
    # single marks move a lineage but do not log a merge
    solo = apply_marks(ls, ev, [2], rng)
    assert solo.count == 3 and solo.merge_log == []


def test_merge_log_invariants_along_a_run():
    rng = np.random.default_rng(8)
    ls = run_dual([-0.2, 0.0, 0.2, 0.4], 2.0, FLAW, FPARAMS, rng)
    ls.validate()
    assert 1 <= ls.count <= 4
    assert ls.count == 4 - sum(len(m.merged) - 1 for m in ls.merge_log)
    for rec in ls.merge_log:
        assert rec.survivor == min(rec.merged)
    assert ls.time == 2.0
    with pytest.raises(ValueError):
        run_dual([0.0], 1.0, FLAW, FPARAMS, rng, engine="nope")


def test_single_lineage_jump_rate_and_engines_agree():
    """Both dual engines are exact, so endpoint laws must match."""
    t = 0.2
    lam = lineage_jump_rate(FPARAMS, FLAW)
    ends = {}
    for engine in ("marked", "covering"):
        rng = np.random.default_rng(123)
        pts = [run_dual([0.0], t, FLAW, FPARAMS, rng,
                        engine=engine).positions[0, 0]
               for _ in range(1200)]
        ends[engine] = np.asarray(pts)
    ks = stats.ks_2samp(ends["marked"], ends["covering"])
    assert ks.pvalue > 1e-3
    # batch route gives the same law again, plus cheap moments
    rng = np.random.default_rng(7)
    batch = batch_single_displacement(FPARAMS, FLAW, t, 200_000, rng)[:, 0]
    ks2 = stats.ks_2samp(ends["marked"], batch)
    assert ks2.pvalue > 1e-3
    # displacement variance per unit time = lam * 2 a^2 / 3 exactly
    a = FLAW.radius / FPARAMS.m_space
    target = lam * t * 2.0 * a * a / 3.0
    sq = batch * batch
    z = (sq.mean() - target) / (sq.std(ddof=1) / math.sqrt(len(sq)))
    assert abs(z) < 4.0


def test_displacement_variance_equals_limit_diffusion_constant():
    """Along a fixed-radius rung the finite-rung variance rate is exactly m.

    The rate is lam * (2/3) a^2 = (4/3) (N/(J M^2)) u r^(d+2)/r^d ... which
    collapses to the limit m because m only involves C1 = N/(J M^2), exact
    at every rung.
    """
    lam = lineage_jump_rate(FPARAMS, FLAW)
    a = FLAW.radius / FPARAMS.m_space
    rate = lam * 2.0 * a * a / 3.0
    c1 = FPARAMS.n_rate / (FPARAMS.j_impact * FPARAMS.m_space ** 2)
    lp = limit_params_fixed(c1, 1.0, FLAW, 1)
    assert rate == pytest.approx(lp.m_diff, rel=1e-12)


def test_marked_stream_mark_statistics_for_coincident_pair():
    """Two coincident lineages: P(both marked | marked event) = u/(2-u)."""
    params = FPARAMS
    law = FLAW
    u = law.impact / params.j_impact
    stream = MarkedEventStream(params, law)
    rng = np.random.default_rng(3)
    pos = np.array([[0.0], [0.0]])
    both = 0
    n = 4000
    for _ in range(n):
        _, covered, marked = stream.next_event(pos, rng)
        assert len(covered) == 2
        assert len(marked) in (1, 2)
        both += len(marked) == 2
    target = u / (2.0 - u)
    se = math.sqrt(target * (1.0 - target) / n)
    assert abs(both / n - target) < 4.0 * se


def test_variable_law_marked_radius_moments():
    params = ScalingParams(n_rate=100.0, m_space=4.0, j_impact=16.0,
                           k_density=1.0, dimension=1)
    law = VariableRadius(alpha=2.5, gamma=3.0)
    lo = law.lower_radius(params)
    rng = np.random.default_rng(12)
    disp = batch_single_displacement(params, law, 0.5, 300_000, rng)[:, 0]
    lam = lineage_jump_rate(params, law)
    # E a^2 under the size-biased radius law r^(alpha+d-gamma)
    e_r2 = power_law_mass(2.5 + 1 - 3.0 + 2.0, lo, 1.0) \
        / power_law_mass(2.5 + 1 - 3.0, lo, 1.0)
    target = lam * 0.5 * (2.0 / 3.0) * e_r2 / params.m_space ** 2
    sq = disp * disp
    z = (sq.mean() - target) / (sq.std(ddof=1) / math.sqrt(len(sq)))
    assert abs(z) < 4.0


def test_pair_coalescence_certain_at_full_impact():
    # scaled impact 1 and coincident starts: every accepted proposal merges
    params = ScalingParams(n_rate=20.0, m_space=2.0, j_impact=1.0,
                           k_density=1.0, dimension=1)
    law = FixedRadius(radius=1.0, impact=1.0)
    rng = np.random.default_rng(2)
    res = batch_pair_coalescence(params, law, 5.0, 2000, rng,
                                 initial_radius=1e-9)
    assert res.p_hat == 1.0
    assert res.mean_events >= 1.0


def test_pair_coalescence_rate_shrinks_with_j():
    rows = coalescence_probability(
        [(ScalingParams(50.0, 2.0, j, 1.0, 1), FixedRadius(1.0, 1.0), 0.5)
         for j in (5.0, 20.0)],
        replicates=4000, seed=5)
    assert rows[0]["p_hat"] > rows[1]["p_hat"]
    assert rows[0]["hits"] > 0
    for row in rows:
        assert row["ci_lo"] <= row["p_hat"] <= row["ci_hi"]
        assert row["scaled_p"] == pytest.approx(
            row["p_hat"] / row["bound_shape_value"])


def test_coalescence_bound_shapes():
    p1 = ScalingParams(50.0, 10.0, 100.0, 1.0, 1)
    assert coalescence_bound_shape(p1, FixedRadius(1.0, 1.0)) \
        == pytest.approx(0.1)
    vlaw = VariableRadius(alpha=2.5, gamma=3.0)
    expected = 100.0 ** ((1.0 - 0.5) * 2.0 / 3.0) * 100.0 / 100.0
    assert coalescence_bound_shape(p1, vlaw, beta=0.5) \
        == pytest.approx(expected)
    with pytest.raises(ValueError):
        coalescence_bound_shape(p1, vlaw)
    p2 = ScalingParams(50.0, 10.0, 100.0, 1.0, 2)
    assert coalescence_bound_shape(p2, FixedRadius(1.0, 1.0)) \
        == pytest.approx(math.log(10.0) / 100.0)
    p3 = ScalingParams(50.0, 10.0, 100.0, 1.0, 3)
    assert coalescence_bound_shape(p3, FixedRadius(1.0, 1.0)) \
        == pytest.approx(0.01)


def test_hazard_bound_frozen_value_and_guards():
    params = ScalingParams(n_rate=1.0, m_space=10.0, j_impact=100.0,
                           k_density=1.0, dimension=1)
    law = VariableRadius(alpha=2.5, gamma=3.0)
    # separation below the cutoff radius J^(-1/3): base = 100^(-1/3),
    # exponent gamma - beta (gamma - d) = 2, so the bound is 100^(2/3)
    assert hazard_bound(0.1, params, law, beta=0.5) \
        == pytest.approx(21.544346900318832, rel=1e-12)
    assert hazard_bound(0.5, params, law, beta=0.5) \
        == pytest.approx(4.0, rel=1e-12)
    with pytest.raises(ValueError):
        hazard_bound(-1.0, params, law, beta=0.5)
    with pytest.raises(TypeError):
        hazard_bound(0.1, params, FixedRadius(1.0, 1.0), beta=0.5)


def test_gap_report_arithmetic():
    rep = GapReport(forward=MeanReport(0.5, 0.03, 100),
                    dual=MeanReport(0.46, 0.04, 100))
    assert rep.gap == pytest.approx(0.04)
    assert rep.pooled_stderr == pytest.approx(0.05)
    assert rep.z == pytest.approx(0.8)
    degenerate = GapReport(forward=MeanReport(0.5, 0.0, 1),
                           dual=MeanReport(0.5, 0.0, 1))
    assert degenerate.z == 0.0


def test_initial_value_at_step_profile():
    w0 = two_level_step(0.7, 0.3)
    assert initial_value_at(w0, -0.25) == 0.7
    assert initial_value_at(w0, 0.25) == 0.3
    assert initial_value_at(w0, 0.5) == 0.0
    assert initial_value_at(w0, -0.6) == 0.0


def test_duality_gap_small_monte_carlo():
    params = ScalingParams(n_rate=30.0, m_space=2.0, j_impact=6.0,
                           k_density=1.0, dimension=1)
    law = FixedRadius(radius=1.0, impact=1.0)
    w0 = two_level_step(0.7, 0.3)
    rep = duality_gap(1, w0, [0.1], 0.25, 400, law, params, seed=4)
    assert 0.0 < rep.forward.mean < 1.0
    assert abs(rep.z) < 4.0
    rep2 = duality_gap(2, w0, [-0.1, 0.15], 0.25, 400, law, params, seed=4,
                       engine="covering")
    assert abs(rep2.z) < 4.0
    with pytest.raises(ValueError):
        duality_gap(2, w0, [0.0], 0.25, 10, law, params, seed=0)
