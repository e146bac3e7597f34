"""Branching-particle reference approximations of the limit processes.

The limits under test are superBrownian motions: finite-variance when the
event impact is uniformly small, stable-branching (index 1 + beta) under
the power-law radius schedule. Both are classical limits of branching
random walks, which this module simulates directly, so the scaling
experiments can compare the rescaled interacting field against an oracle
that shares no code or mechanism with it. Total-mass laws (Feller
diffusion, stable CSBP) have closed-form Laplace transforms, giving an
exact anchor for calibrating and validating the particle systems
themselves.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field as dc_field

import numpy as np

from .analytic import Grid1D, heat_semigroup
from .core import replicate_stream
from .stats import MeanReport, mean_report


# ---------------------------------------------------------------------------
# Offspring laws
# ---------------------------------------------------------------------------

def stable_offspring_pmf(beta: float, c: float, k_max: int = 10_000) -> np.ndarray:
    """Offspring probabilities of the generating function s + c(1-s)^(1+b).

    p0 = c, p1 = 1 - c(1+beta), and for k >= 2 the binomial-series terms
    c |binom(1+beta, k)|, all nonnegative when c <= 1/(1+beta). The tail
    beyond k_max is folded into the last entry and a small mass transfer
    from p0 to p_k_max restores mean exactly 1, which keeps the particle
    system critical rather than slightly subcritical.
    """
    if not (0.0 < beta <= 1.0):
        raise ValueError("beta must lie in (0, 1]")
    if not (0.0 < c <= 1.0 / (1.0 + beta)):
        raise ValueError("need 0 < c <= 1/(1+beta) for a valid pmf")
    if k_max < 2:
        raise ValueError("k_max must be at least 2")
    p = np.zeros(k_max + 1)
    p[0] = c
    p[1] = 1.0 - c * (1.0 + beta)
    p[2] = c * (1.0 + beta) * beta / 2.0
    ks = np.arange(2, k_max, dtype=float)
    p[3:] = p[2] * np.cumprod((ks - 1.0 - beta) / (ks + 1.0))
    tail = 1.0 - math.fsum(p[:-1].tolist()) - p[-1]
    p[k_max] += tail
    mean = math.fsum((np.arange(k_max + 1) * p).tolist())
    shift = (1.0 - mean) / k_max
    p[0] -= shift
    p[k_max] += shift
    if p[0] < 0.0 or p[k_max] < 0.0:
        raise ValueError("k_max too small to recenter the folded tail")
    return p


class CriticalBinary:
    """Branch at the given rate into 0 or 2 offspring, equally likely."""

    def __init__(self, rate: float):
        if rate <= 0.0:
            raise ValueError("branch rate must be positive")
        self.rate = rate

    def sample(self, rng, size: int | None = None):
        if size is None:
            return 2 * int(rng.integers(2))
        return 2 * rng.integers(2, size=size)


class StableOffspring:
    """Branch at the given rate with the heavy-tailed critical pmf."""

    def __init__(self, beta: float, c: float, rate: float,
                 k_max: int = 10_000):
        if rate <= 0.0:
            raise ValueError("branch rate must be positive")
        self.beta = beta
        self.c = c
        self.rate = rate
        self.k_max = k_max
        self._cdf = None

    @property
    def pmf(self) -> np.ndarray:
        if self._cdf is None:
            p = stable_offspring_pmf(self.beta, self.c, self.k_max)
            self._cdf = (p, np.cumsum(p))
        return self._cdf[0]

    def sample(self, rng, size: int | None = None):
        self.pmf
        cdf = self._cdf[1]
        if size is None:
            return int(np.searchsorted(cdf, rng.random(), side="right"))
        return np.searchsorted(cdf, rng.random(size), side="right")


def binary_rate(kappa: float, epsilon: float) -> float:
    """Branch rate making binary branching match Feller variance 2 kappa Z t."""
    return 2.0 * kappa / epsilon

def stable_rate(kappa: float, epsilon: float, beta: float, c: float) -> float:
    """Branch rate matching the stable CSBP drift kappa Z theta^(1+beta).

    From the pgf jump e^(theta eps) f(e^(-theta eps)) - 1 ~ c (theta eps)^(1+beta):
    per-particle rate kappa / (c eps^beta) makes the Laplace drift agree to
    O(theta eps), which vanishes along the epsilon ladder.
    """
    return kappa / (c * epsilon ** beta)


# ---------------------------------------------------------------------------
# Particle clouds
# ---------------------------------------------------------------------------

@dataclass
class ParticleCloud:
    """A snapshot of the branching random walk: atoms of equal mass."""

    positions: np.ndarray
    particle_mass: float
    time: float = 0.0

    @property
    def count(self) -> int:
        return self.positions.shape[0]

    @property
    def total_mass(self) -> float:
        return self.count * self.particle_mass

    def pair_with(self, fn) -> float:
        """<X, fn> for the atomic measure, fn applied to each position."""
        if self.count == 0:
            return 0.0
        vals = np.asarray(fn(self.positions[:, 0] if self.positions.shape[1] == 1
                             else self.positions))
        return self.particle_mass * float(np.sum(vals))


def point_cloud(n: int, epsilon: float, dimension: int = 1,
                center=0.0) -> ParticleCloud:
    pos = np.full((n, dimension), center, dtype=float)
    return ParticleCloud(positions=pos, particle_mass=epsilon, time=0.0)


def run_sbm_particles(initial: ParticleCloud, m_diff: float, offspring,
                      t_end: float, rng, *, n_records: int = 2,
                      max_particles: int = 2_000_000) -> list:
    """Branching Brownian particles, recorded on a uniform time grid.

    Between branch events each particle diffuses with variance m_diff per
    unit time; at rate `offspring.rate` a uniformly chosen particle is
    replaced by its offspring at its current position. Positions update
    lazily (only the branching particle and record-time snapshots touch
    the arrays), so the cost is events plus records, not events times
    population.
    """
    if t_end < 0.0:
        raise ValueError("time must be nonnegative")
    d = initial.positions.shape[1]
    eps = initial.particle_mass
    lam = offspring.rate
    cap = max(64, 2 * initial.count)
    pos = np.empty((cap, d))
    pos[: initial.count] = initial.positions
    upd = np.zeros(cap)
    n = initial.count
    record_times = np.linspace(0.0, t_end, max(2, n_records))
    out = []
    t = 0.0
    rec = 0

    def snapshot(at: float):
        live = pos[:n].copy()
        if m_diff > 0.0 and n > 0:
            dt = at - upd[:n]
            live += rng.standard_normal((n, d)) * np.sqrt(m_diff * dt)[:, None]
        out.append(ParticleCloud(positions=live, particle_mass=eps, time=at))

    while True:
        t_next = t + (rng.exponential(1.0 / (n * lam)) if n else math.inf)
        while rec < len(record_times) and record_times[rec] <= min(t_next, t_end):
            snapshot(record_times[rec])
            rec += 1
        if rec >= len(record_times) or t_next > t_end:
            break
        t = t_next
        i = int(rng.integers(n))
        if m_diff > 0.0:
            pos[i] += rng.standard_normal(d) * math.sqrt(m_diff * (t - upd[i]))
        upd[i] = t
        k = offspring.sample(rng)
        if k == 0:
            n -= 1
            pos[i] = pos[n]
            upd[i] = upd[n]
        elif k >= 2:
            new_n = n + k - 1
            if new_n > max_particles:
                raise RuntimeError("population explosion budget exceeded")
            while new_n > cap:
                cap *= 2
                pos = np.vstack([pos, np.empty_like(pos)])
                upd = np.concatenate([upd, np.zeros_like(upd)])
            pos[n:new_n] = pos[i]
            upd[n:new_n] = t
            n = new_n
    return out


def laplace_functional(ensemble, phi, t: float) -> MeanReport:
    """Monte Carlo estimate of E exp(-<X_t, phi>) over a path ensemble.

    ensemble is a list of paths as returned by run_sbm_particles; the
    snapshot closest to t (they sit on a shared uniform grid) is used.
    phi may be a callable of position or a test-function object.
    """
    fn = phi.value if hasattr(phi, "value") else phi
    vals = []
    for path in ensemble:
        times = np.array([c.time for c in path])
        cloud = path[int(np.argmin(np.abs(times - t)))]
        vals.append(math.exp(-cloud.pair_with(fn)))
    return mean_report(vals)


# ---------------------------------------------------------------------------
# Total-mass references (no spatial content)
# ---------------------------------------------------------------------------

def stable_csbp_exponent(beta: float, kappa: float, theta: float,
                         t: float) -> float:
    """u_t(theta) solving du/dt = -kappa u^(1+beta), u_0 = theta."""
    if theta < 0.0:
        raise ValueError("theta must be nonnegative")
    if theta == 0.0:
        return 0.0
    return theta * (1.0 + kappa * beta * theta ** beta * t) ** (-1.0 / beta)


def feller_exponent(kappa: float, theta: float, t: float) -> float:
    """u_t(theta) for the Feller diffusion dZ = sqrt(2 kappa Z) dW."""
    return theta / (1.0 + kappa * theta * t)


def batch_total_mass(n0: int, offspring, t_end: float, replicates: int,
                     rng, *, max_rounds: int = 10_000_000) -> np.ndarray:
    """Final particle counts of the pure branching process, vectorized.

    Positions never matter for total mass, so all replicates advance one
    branch event per round on compressed arrays; dead or expired paths
    drop out as they finish.
    """
    counts = np.full(replicates, n0, dtype=np.int64)
    times = np.zeros(replicates)
    final = np.empty(replicates, dtype=np.int64)
    idx = np.arange(replicates)
    lam = offspring.rate
    for _ in range(max_rounds):
        if idx.size == 0:
            return final
        times = times + rng.exponential(1.0, idx.size) / (lam * counts)
        expired = times > t_end
        if expired.any():
            final[idx[expired]] = counts[expired]
            keep = ~expired
            idx, counts, times = idx[keep], counts[keep], times[keep]
            if idx.size == 0:
                return final
        counts = counts + offspring.sample(rng, idx.size) - 1
        dead = counts == 0
        if dead.any():
            final[idx[dead]] = 0
            keep = ~dead
            idx, counts, times = idx[keep], counts[keep], times[keep]
    raise RuntimeError("total-mass round budget exhausted")


def stable_total_mass_reference(beta: float, kappa: float, z0: float,
                                t: float, replicates: int, *,
                                thetas=(0.5, 1.0, 2.0), epsilon: float = 0.005,
                                c: float = 0.5, seed: int = 0,
                                label: str = "csbp") -> list[dict]:
    """Closed-form CSBP Laplace values next to the particle estimates.

    One batch of count-only branching paths at mass epsilon serves every
    theta; rows carry the exact reference exp(-z0 u_t(theta)), the Monte
    Carlo mean of exp(-theta Z_t), its stderr, and the z-score.
    """
    if not (0.0 < beta < 1.0):
        raise ValueError("beta must lie strictly between 0 and 1")
    law = StableOffspring(beta, c, stable_rate(kappa, epsilon, beta, c))
    rng = replicate_stream(seed, label, 0)
    n0 = int(round(z0 / epsilon))
    finals = batch_total_mass(n0, law, t, replicates, rng)
    rows = []
    for theta in thetas:
        ref = math.exp(-z0 * stable_csbp_exponent(beta, kappa, theta, t))
        est = mean_report(np.exp(-theta * epsilon * finals))
        rows.append({
            "theta": theta,
            "reference": ref,
            "estimate": est.mean,
            "stderr": est.stderr,
            "z": est.z_against(ref),
            "epsilon": epsilon,
            "replicates": replicates,
        })
    return rows


# ---------------------------------------------------------------------------
# Finite-variance reaction-diffusion oracle
# ---------------------------------------------------------------------------

def solve_fkpp(phi: Grid1D, t_end: float, m_diff: float, kappa: float, *,
               dt: float = 1e-3, picard_tol: float = 1e-10,
               max_sweeps: int = 60) -> Grid1D:
    """u(t) = P_t phi - int_0^t P_(t-s) kappa u(s)^2 ds by mild Picard.

    The finite-variance log-Laplace equation du/dt = (m/2) Lap u - kappa u^2;
    same trapezoid-recursion scheme as the dual exponent solver, with the
    heat semigroup in place of the jump semigroup.
    """
    n_t = max(1, round(t_end / dt))
    step = t_end / n_t

    def apply_p(arr):
        return heat_semigroup(phi.with_values(arr), step, m_diff).values

    p_phi = [phi.values]
    for _ in range(n_t):
        p_phi.append(apply_p(p_phi[-1]))
    traj = [v.copy() for v in p_phi]
    for _ in range(max_sweeps):
        b_vals = [kappa * np.clip(v, 0.0, None) ** 2 for v in traj]
        new = [phi.values]
        q = np.zeros_like(phi.values)
        for i in range(n_t):
            q = apply_p(q + (0.5 * step) * b_vals[i]) + (0.5 * step) * b_vals[i + 1]
            new.append(p_phi[i + 1] - q)
        change = max(float(np.max(np.abs(a - b))) for a, b in zip(new, traj))
        traj = new
        if change < picard_tol:
            return phi.with_values(np.clip(traj[-1], 0.0, None))
    raise RuntimeError("Picard iteration did not converge in budget")
