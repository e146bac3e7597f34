"""Tests for the branching-particle oracle and total-mass references."""
import math

import numpy as np
import pytest

from slfvlab.analytic import Grid1D, grid_from_function, heat_semigroup
from slfvlab.oracle import (
    CriticalBinary,
    ParticleCloud,
    StableOffspring,
    batch_total_mass,
    binary_rate,
    feller_exponent,
    laplace_functional,
    point_cloud,
    run_sbm_particles,
    solve_fkpp,
    stable_csbp_exponent,
    stable_offspring_pmf,
    stable_rate,
    stable_total_mass_reference,
)


class AlwaysFive:
    """Deterministic offspring stub: every branch event produces five."""

    rate = 50.0

    def sample(self, rng, size=None):
        return 5 if size is None else np.full(size, 5, dtype=np.int64)


class AlwaysZero:
    """Deterministic offspring stub: every branch event is a death."""

    rate = 200.0

    def sample(self, rng, size=None):
        return 0 if size is None else np.zeros(size, dtype=np.int64)


# ---------------------------------------------------------------------------
# Offspring pmf
# ---------------------------------------------------------------------------

def test_stable_offspring_pmf_leading_terms():
    # Binomial-series coefficients of s + c(1-s)^(1+beta) at beta = c = 1/2:
    # p1 = 1 - c(1+beta), p2 = c(1+beta)beta/2, p3 = p2 (2-1-beta)/3.
    p = stable_offspring_pmf(0.5, 0.5)
    assert p[1] == 0.25
    assert p[2] == 0.1875
    assert p[3] == pytest.approx(0.03125, rel=1e-12)
    # p0 gives up a sliver of mass to the folded tail so the mean stays 1.
    assert 0.5 - 1e-5 < p[0] < 0.5
    assert np.all(p >= 0.0)
    assert math.fsum(p.tolist()) == pytest.approx(1.0, abs=1e-13)


@pytest.mark.parametrize("beta, c", [(0.5, 0.5), (0.25, 0.7), (0.9, 0.5)])
def test_stable_offspring_pmf_mean_is_one(beta, c):
    p = stable_offspring_pmf(beta, c)
    mean = math.fsum((np.arange(p.size) * p).tolist())
    assert mean == pytest.approx(1.0, abs=1e-12)


def test_stable_offspring_pmf_generating_function_identity():
    # With a long enough tail the truncation and recentering shifts are
    # below 1e-10, so the pgf must reproduce s + c(1-s)^(1+beta).
    beta, c = 0.5, 0.5
    p = stable_offspring_pmf(beta, c, k_max=5_000_000)
    ks = np.arange(3000)
    for s in (0.3, 0.7):
        pgf = float(p[:3000] @ np.power(s, ks))
        assert abs(pgf - (s + c * (1.0 - s) ** (1.0 + beta))) <= 1e-10


def test_stable_offspring_pmf_beta_one_is_critical_binary():
    p = stable_offspring_pmf(1.0, 0.5, k_max=2)
    assert p.tolist() == [0.5, 0.0, 0.5]
    p = stable_offspring_pmf(1.0, 0.5, k_max=50)
    assert p[0] == 0.5 and p[2] == 0.5
    assert math.fsum(p[3:].tolist()) == 0.0 and p[1] == 0.0


def test_stable_offspring_pmf_validation():
    with pytest.raises(ValueError, match="beta"):
        stable_offspring_pmf(0.0, 0.5)
    with pytest.raises(ValueError, match="beta"):
        stable_offspring_pmf(1.2, 0.5)
    with pytest.raises(ValueError, match="pmf"):
        stable_offspring_pmf(0.5, 0.8)
    with pytest.raises(ValueError, match="k_max"):
        stable_offspring_pmf(0.5, 0.5, k_max=1)


def test_offspring_samplers_follow_their_pmfs():
    rng = np.random.default_rng(7)
    law = StableOffspring(0.5, 0.5, rate=1.0, k_max=200)
    assert law.pmf is law.pmf
    draws = law.sample(rng, size=100_000)
    for k in range(4):
        freq = float(np.mean(draws == k))
        pk = law.pmf[k]
        assert abs(freq - pk) < 5.0 * math.sqrt(pk * (1.0 - pk) / draws.size)
    assert isinstance(law.sample(rng), int)

    binary = CriticalBinary(3.0)
    vals = binary.sample(rng, size=50_000)
    assert set(np.unique(vals).tolist()) <= {0, 2}
    assert abs(float(np.mean(vals)) - 1.0) < 5.0 / math.sqrt(vals.size)
    assert binary.sample(rng) in (0, 2)
    with pytest.raises(ValueError, match="rate"):
        CriticalBinary(0.0)
    with pytest.raises(ValueError, match="rate"):
        StableOffspring(0.5, 0.5, rate=-1.0)


def test_branch_rate_calibrations():
    assert binary_rate(0.8, 0.04) == pytest.approx(40.0, rel=1e-15)
    assert stable_rate(1.0, 0.01, 0.5, 0.5) == pytest.approx(20.0, rel=1e-12)
    assert stable_rate(2.0, 0.25, 1.0, 0.5) == pytest.approx(16.0, rel=1e-12)


# ---------------------------------------------------------------------------
# Particle clouds
# ---------------------------------------------------------------------------

def test_point_cloud_and_pairing():
    cloud = point_cloud(5, 0.2, center=1.5)
    assert cloud.count == 5
    assert cloud.total_mass == pytest.approx(1.0, rel=1e-15)
    assert cloud.pair_with(lambda x: x ** 2) == pytest.approx(
        0.2 * 5 * 2.25, rel=1e-14)
    empty = ParticleCloud(positions=np.zeros((0, 1)), particle_mass=0.2)
    assert empty.total_mass == 0.0
    assert empty.pair_with(lambda x: x ** 2) == 0.0


def test_diffusion_only_spread():
    # Branch rate low enough that no event fires: pure Brownian spread.
    rng = np.random.default_rng(42)
    paths = run_sbm_particles(point_cloud(4000, 0.005), 2.0,
                              CriticalBinary(1e-12), 0.25, rng, n_records=3)
    assert [c.time for c in paths] == pytest.approx([0.0, 0.125, 0.25])
    last = paths[-1]
    assert last.count == 4000
    assert last.total_mass == pytest.approx(20.0, rel=1e-12)
    sq = last.positions[:, 0] ** 2
    target = 2.0 * 0.25
    stderr = float(np.std(sq, ddof=1)) / math.sqrt(sq.size)
    assert abs(float(np.mean(sq)) - target) < 4.0 * stderr


def test_all_deaths_leave_an_empty_cloud():
    rng = np.random.default_rng(3)
    paths = run_sbm_particles(point_cloud(8, 0.1), 1.0, AlwaysZero(), 5.0,
                              rng, n_records=4)
    assert len(paths) == 4
    assert paths[-1].count == 0
    assert paths[-1].total_mass == 0.0
    assert paths[-1].pair_with(lambda x: x) == 0.0


def test_population_explosion_budget():
    rng = np.random.default_rng(0)
    with pytest.raises(RuntimeError, match="explosion"):
        run_sbm_particles(point_cloud(10, 0.1), 1.0, AlwaysFive(), 10.0,
                          rng, max_particles=20)
    with pytest.raises(ValueError, match="nonnegative"):
        run_sbm_particles(point_cloud(10, 0.1), 1.0, AlwaysFive(), -1.0, rng)


def test_laplace_functional_picks_nearest_snapshot():
    def cloud(ts, xs):
        return ParticleCloud(np.asarray(xs, float).reshape(-1, 1), 0.5, ts)

    ensemble = [
        [cloud(0.0, [0.0]), cloud(0.5, [1.0]), cloud(1.0, [1.0, 2.0])],
        [cloud(0.0, [0.0]), cloud(0.5, [3.0]), cloud(1.0, [1.0])],
    ]
    rep = laplace_functional(ensemble, lambda x: x ** 2, 0.8)
    expected = 0.5 * (math.exp(-0.5 * 5.0) + math.exp(-0.5 * 1.0))
    assert rep.mean == pytest.approx(expected, rel=1e-14)

    class Phi:
        value = staticmethod(lambda x: np.abs(x))

    rep = laplace_functional(ensemble, Phi(), 0.4)
    expected = 0.5 * (math.exp(-0.5) + math.exp(-1.5))
    assert rep.mean == pytest.approx(expected, rel=1e-14)


# ---------------------------------------------------------------------------
# Total-mass laws
# ---------------------------------------------------------------------------

def test_csbp_and_feller_exponents():
    # beta = 1/2, kappa = theta = t = 1: u = (1 + 1/2)^(-2) = 4/9.
    assert stable_csbp_exponent(0.5, 1.0, 1.0, 1.0) == pytest.approx(
        4.0 / 9.0, rel=1e-15)
    assert stable_csbp_exponent(0.5, 1.0, 0.0, 3.0) == 0.0
    assert stable_csbp_exponent(1.0, 0.7, 2.0, 1.5) == pytest.approx(
        feller_exponent(0.7, 2.0, 1.5), rel=1e-15)
    with pytest.raises(ValueError, match="theta"):
        stable_csbp_exponent(0.5, 1.0, -0.1, 1.0)
    # The closed form solves du/dt = -kappa u^(1+beta).
    beta, kappa, theta = 0.4, 1.3, 0.9
    h = 1e-5
    up = stable_csbp_exponent(beta, kappa, theta, 0.5 + h)
    dn = stable_csbp_exponent(beta, kappa, theta, 0.5 - h)
    mid = stable_csbp_exponent(beta, kappa, theta, 0.5)
    assert (up - dn) / (2.0 * h) == pytest.approx(
        -kappa * mid ** (1.0 + beta), rel=1e-6)


def test_binary_total_mass_matches_galton_watson_flow():
    kappa, eps, z0, t, theta = 0.8, 0.04, 1.0, 0.5, 1.0
    lam = binary_rate(kappa, eps)
    n0 = int(round(z0 / eps))
    rng = np.random.default_rng(11)
    finals = batch_total_mass(n0, CriticalBinary(lam), t, 4000, rng)
    mass = eps * finals

    # Criticality: total mass is a martingale with the exact Feller
    # variance 2 kappa z0 t at every particle mass.
    mean_rep = np.mean(mass)
    se_mean = np.std(mass, ddof=1) / math.sqrt(mass.size)
    assert abs(mean_rep - z0) < 4.0 * se_mean
    sq = (mass - z0) ** 2
    se_sq = np.std(sq, ddof=1) / math.sqrt(sq.size)
    assert abs(float(np.mean(sq)) - 2.0 * kappa * z0 * t) < 4.0 * se_sq

    # The Laplace transform matches the exact binary Galton-Watson flow
    # F_t(s) = 1 - (1-s)/(1 + lam t (1-s)/2) applied to s = e^(-theta eps),
    # which tends to the Feller exponent as eps shrinks.
    s = math.exp(-theta * eps)
    exact = (1.0 - (1.0 - s) / (1.0 + 0.5 * lam * t * (1.0 - s))) ** n0
    lap = np.exp(-theta * mass)
    se_lap = np.std(lap, ddof=1) / math.sqrt(lap.size)
    assert abs(float(np.mean(lap)) - exact) < 4.0 * se_lap
    assert abs(exact - math.exp(-z0 * feller_exponent(kappa, theta, t))) < 0.03


def test_batch_total_mass_round_budget():
    rng = np.random.default_rng(5)
    with pytest.raises(RuntimeError, match="budget"):
        batch_total_mass(5, CriticalBinary(0.001), 1e6, 4, rng, max_rounds=3)


def test_stable_total_mass_reference_hits_csbp_anchor():
    rows = stable_total_mass_reference(0.5, 1.0, 1.0, 1.0, 3000,
                                       thetas=(1.0,), epsilon=0.01, seed=3)
    assert len(rows) == 1
    row = rows[0]
    assert row["reference"] == pytest.approx(math.exp(-4.0 / 9.0), rel=1e-12)
    assert abs(row["z"]) < 4.0
    assert row["estimate"] == pytest.approx(row["reference"],
                                            abs=4.0 * row["stderr"])
    assert row["replicates"] == 3000 and row["epsilon"] == 0.01
    with pytest.raises(ValueError, match="beta"):
        stable_total_mass_reference(1.0, 1.0, 1.0, 1.0, 10)


# ---------------------------------------------------------------------------
# Reaction-diffusion exponent
# ---------------------------------------------------------------------------

def test_fkpp_flat_initial_matches_feller_decay():
    # A flat profile far from the boundary feels no Laplacian, so the
    # center must follow the pure-reaction solution theta/(1 + kappa theta t).
    theta, kappa, m_diff, t = 0.8, 0.9, 1.3, 0.3
    grid = Grid1D(-8.0, 0.02, np.full(801, theta))
    sol = solve_fkpp(grid, t, m_diff, kappa, dt=4e-3)
    assert sol.values[400] == pytest.approx(
        feller_exponent(kappa, theta, t), rel=5e-4)
    assert float(np.max(sol.values)) <= theta + 1e-12
    assert float(np.min(sol.values)) >= 0.0
    assert np.allclose(sol.values, sol.values[::-1], atol=1e-12)


def test_fkpp_zero_reaction_reduces_to_heat_flow():
    theta = 0.6
    grid = Grid1D(-8.0, 0.02, np.full(801, theta))
    sol = solve_fkpp(grid, 0.3, 1.3, 0.0, dt=4e-3)
    assert sol.values[400] == pytest.approx(theta, abs=1e-12)


def test_fkpp_sits_below_heat_flow():
    phi = grid_from_function(lambda x: 1.6 * np.exp(-x ** 2 / 0.18),
                             -6.0, 6.0, 1201)
    t, m_diff, kappa = 0.15, 1.0, 1.5
    fk = solve_fkpp(phi, t, m_diff, kappa, dt=2e-3)
    # Against the identically discretized zero-reaction flow the quadratic
    # sink can only lower the profile, cell by cell.
    heat0 = solve_fkpp(phi, t, m_diff, 0.0, dt=2e-3)
    assert np.all(fk.values <= heat0.values + 1e-14)
    assert heat0.values[600] - fk.values[600] > 1e-3
    assert float(np.min(fk.values)) >= 0.0
    # The composed steps agree with a single smoothing where mass lives.
    heat1 = heat_semigroup(phi, t, m_diff)
    assert heat1.values[600] == pytest.approx(heat0.values[600], rel=3e-3)


def test_fkpp_sweep_budget():
    grid = Grid1D(-2.0, 0.05, np.full(81, 0.9))
    with pytest.raises(RuntimeError, match="Picard"):
        solve_fkpp(grid, 0.3, 1.0, 5.0, dt=0.05, picard_tol=1e-14,
                   max_sweeps=1)
