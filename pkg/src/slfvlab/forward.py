"""Forward simulation of the rescaled SLFV field in one dimension.

The allele frequency w is piecewise constant at all times (events set it to
an affine image of itself on an interval), so the d=1 field is represented
exactly by breakpoints and values. All pairings <X, f> with X = K w dx are
maintained incrementally through closed-form antiderivatives: an event with
ball B, impact rho and parent type alpha changes <X, f> by exactly

    rho * (alpha * K * int_B f  -  K * int_B w f),

and both integrals are antiderivative differences at segment boundaries.

The key identity behind the martingale ledgers: the full generator applied
to X -> <X, phi> equals <X, ell> where ell = lam (P phi - phi) is the
generator of a single dual lineage (jump to a uniform point of a ball whose
center is uniform in a ball around the current position). That makes the
drift compensator of <X_t, phi> an exact running quantity, with no state
dependence beyond the field itself, and it is what SingleLineageGenerator
computes (closed form for a fixed radius, radial quadrature for the
power-law law).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field as dc_field

import numpy as np

from .core import (FixedRadius, MultiHermiteTable, ScalingParams,
                   TabulatedAntiderivative, TestFunction, VariableRadius)
from .events import EventStream, lineage_jump_rate, write_event_log


class Interval1DField:
    """Exact piecewise-constant field on the line.

    xs holds n+1 breakpoints, vs the n values; w equals vs[i] on
    [xs[i], xs[i+1]) and zero outside [xs[0], xs[-1]]. k_density converts
    frequencies to mass density: X = k_density * w dx.
    """

    def __init__(self, breaks, values, k_density: float):
        xs = np.asarray(breaks, dtype=float)
        vs = np.asarray(values, dtype=float)
        if xs.ndim != 1 or vs.ndim != 1 or len(xs) != len(vs) + 1:
            raise ValueError("need n+1 breakpoints for n values")
        if not np.all(np.diff(xs) > 0):
            raise ValueError("breakpoints must be strictly increasing")
        if np.any(vs < 0) or np.any(vs > 1):
            raise ValueError("frequencies must lie in [0, 1]")
        self.xs = xs.copy()
        self.vs = vs.copy()
        self.k_density = float(k_density)

    def copy(self) -> "Interval1DField":
        return Interval1DField(self.xs, self.vs, self.k_density)

    def support_window(self) -> tuple[float, float]:
        """Hull of {w > 0}; falls back to the representation hull if empty."""
        pos = np.nonzero(self.vs > 0)[0]
        if len(pos) == 0:
            return (float(self.xs[0]), float(self.xs[-1]))
        return (float(self.xs[pos[0]]), float(self.xs[pos[-1] + 1]))

    def value_at(self, x: float) -> float:
        if x < self.xs[0] or x >= self.xs[-1]:
            return 0.0
        idx = int(np.searchsorted(self.xs, x, side="right")) - 1
        return float(self.vs[min(idx, len(self.vs) - 1)])

    def total_mass(self) -> float:
        return self.k_density * float(np.dot(self.vs, np.diff(self.xs)))

    def pair_with(self, a1) -> float:
        """<X, f> where a1 is the antiderivative of f."""
        return self.k_density * float(np.dot(self.vs,
                                             np.diff(np.asarray(a1(self.xs)))))

    def ball_points(self, blo: float, bhi: float):
        """Segment boundaries and values of w inside [blo, bhi] (clipped).

        Returns (pts, vals) with len(pts) = len(vals) + 1, or None when the
        ball misses the represented support entirely.
        """
        lo = max(blo, float(self.xs[0]))
        hi = min(bhi, float(self.xs[-1]))
        if hi <= lo:
            return None
        i0 = int(np.searchsorted(self.xs, lo, side="right")) - 1
        i1 = int(np.searchsorted(self.xs, hi, side="left"))
        pts = np.empty(i1 - i0 + 1)
        pts[0] = lo
        pts[-1] = hi
        pts[1:-1] = self.xs[i0 + 1:i1]
        return pts, self.vs[i0:i1]

    def ball_profile(self, blo: float, bhi: float, a1_fns):
        """(int_B w, [int_B w f_k]) for the ball [blo, bhi].

        The w integrals see only the represented part; w is zero outside, so
        clipping is exact.
        """
        bp = self.ball_points(blo, bhi)
        if bp is None:
            return 0.0, [0.0] * len(a1_fns)
        pts, vals = bp
        s_w = float(np.dot(vals, np.diff(pts)))
        ints = [float(np.dot(vals, np.diff(np.asarray(f(pts))))) for f in a1_fns]
        return s_w, ints

    @staticmethod
    def _splice(arr: np.ndarray, idx: int, value: float) -> np.ndarray:
        # np.insert carries too much generic-axis overhead for a hot loop;
        # two slice copies do the same thing.
        out = np.empty(len(arr) + 1)
        out[:idx] = arr[:idx]
        out[idx] = value
        out[idx + 1:] = arr[idx:]
        return out

    def _ensure_boundary(self, x: float) -> int:
        idx = int(np.searchsorted(self.xs, x, side="left"))
        if idx < len(self.xs) and self.xs[idx] == x:
            return idx
        self.xs = self._splice(self.xs, idx, x)
        self.vs = self._splice(self.vs, idx, self.vs[idx - 1])
        return idx

    def apply_event(self, blo: float, bhi: float, rho: float,
                    alpha: bool) -> None:
        """w <- (1-rho) w + rho alpha on [blo, bhi]."""
        if alpha:
            if blo < self.xs[0]:
                self.xs = self._splice(self.xs, 0, blo)
                self.vs = self._splice(self.vs, 0, 0.0)
            if bhi > self.xs[-1]:
                self.xs = np.append(self.xs, bhi)
                self.vs = np.append(self.vs, 0.0)
        else:
            blo = max(blo, float(self.xs[0]))
            bhi = min(bhi, float(self.xs[-1]))
            if bhi <= blo:
                return
        i = self._ensure_boundary(blo)
        j = self._ensure_boundary(bhi)
        self.vs[i:j] *= 1.0 - rho
        if alpha:
            self.vs[i:j] += rho

    def prefix_function(self, a1):
        """Antiderivative of w * f given the antiderivative a1 of f."""
        xs = self.xs
        vs = self.vs
        bases = np.asarray(a1(xs))
        prefix = np.concatenate([[0.0], np.cumsum(vs * np.diff(bases))])

        def anti(q):
            q = np.asarray(q, dtype=float)
            scalar = q.ndim == 0
            qc = np.clip(q, xs[0], xs[-1])
            idx = np.clip(np.searchsorted(xs, qc, side="right") - 1,
                          0, len(vs) - 1)
            out = prefix[idx] + vs[idx] * (np.asarray(a1(qc)) - bases[idx])
            return float(out) if scalar else out

        return anti


@dataclass(frozen=True)
class PiecewiseInitial:
    """Initial frequency profile as breakpoints plus values."""

    breaks: tuple
    values: tuple

    def as_field(self, k_density: float) -> Interval1DField:
        return Interval1DField(self.breaks, self.values, k_density)


def uniform_block(level: float, lo: float = 0.0, hi: float = 1.0) -> PiecewiseInitial:
    return PiecewiseInitial((float(lo), float(hi)), (float(level),))


def two_level_step(left: float, right: float, lo: float = -0.5,
                   mid: float = 0.0, hi: float = 0.5) -> PiecewiseInitial:
    return PiecewiseInitial((float(lo), float(mid), float(hi)),
                            (float(left), float(right)))


def density_block(x0: float, k_density: float, lo: float = 0.0,
                  hi: float = 1.0) -> PiecewiseInitial:
    """Block with X_0 = x0 on [lo, hi]: frequency x0 / K (must be <= 1)."""
    level = x0 / k_density
    if not 0.0 <= level <= 1.0:
        raise ValueError(f"x0/K = {level:g} outside [0, 1]")
    return uniform_block(level, lo, hi)


# ---------------------------------------------------------------------------
# The single-lineage generator ell = L phi and its antiderivative
# ---------------------------------------------------------------------------

def _panel_nodes(lo: float, hi: float, panels: int, order: int):
    """Gauss-Legendre nodes/weights on geometrically spaced panels."""
    gx, gw = np.polynomial.legendre.leggauss(order)
    edges = np.geomspace(lo, hi, panels + 1)
    mids = 0.5 * (edges[:-1] + edges[1:])
    halves = 0.5 * np.diff(edges)
    nodes = (mids[:, None] + halves[:, None] * gx[None, :]).ravel()
    weights = (halves[:, None] * gw[None, :]).ravel()
    return nodes, weights


class SingleLineageGenerator:
    """ell = lam (P phi - phi) for the dual single-lineage jump motion.

    P is the two-ball composition kernel: from x, move to a uniform point of
    the ball of radius a = r/M centered at a uniform point within a of x.
    In d=1 its action is a second difference of the second antiderivative:
    (P_a phi)(x) = [a2(x+2a) - 2 a2(x) + a2(x-2a)] / (4 a^2), and the
    radius measure enters as a weighted sum over quadrature nodes (a single
    term for a fixed radius). psi is the antiderivative of ell, exact up to
    the radial quadrature, which lets field pairings against ell be computed
    the same way as against phi.
    """

    def __init__(self, params: ScalingParams, law, phi: TestFunction,
                 r_panels: int = 24, r_order: int = 8):
        if params.dimension != 1:
            raise ValueError("closed-form lineage generator is d=1 only")
        self.params = params
        self.law = law
        self.phi = phi
        if isinstance(law, FixedRadius):
            radii = np.array([law.radius])
            # jump rate per radius: events covering a point arrive at
            # 2 N r mu(dr), each marking the lineage with probability u(r)/J
            rates = np.array([2.0 * params.n_rate * law.radius
                              * law.impact / params.j_impact])
        else:
            lo = law.lower_radius(params)
            nodes, weights = _panel_nodes(lo, 1.0, r_panels, r_order)
            radii = nodes
            rates = (2.0 * params.n_rate / params.j_impact
                     * weights * nodes ** (1.0 + law.alpha - law.gamma))
        self.radii = radii
        self.rates = rates
        self.scaled = radii / params.m_space
        self.lam = float(np.sum(rates))
        check = lineage_jump_rate(params, law)
        if not math.isclose(self.lam, check, rel_tol=1e-9):
            raise RuntimeError("quadrature jump rate drifted from closed form")

    def _second_diff(self, anti, x):
        x = np.asarray(x, dtype=float)
        a = self.scaled
        shape = x.shape
        xb = x.reshape((1,) + shape)
        ab = a.reshape((-1,) + (1,) * max(len(shape), 1))
        num = (np.asarray(anti(xb + 2.0 * ab)) - 2.0 * np.asarray(anti(xb))
               + np.asarray(anti(xb - 2.0 * ab)))
        return num / (4.0 * ab * ab)

    def smoothed(self, x):
        """(P phi)(x) averaged over the radius measure, rate-weighted."""
        mats = self._second_diff(self.phi.a2, x)
        w = self.rates.reshape((-1,) + (1,) * (mats.ndim - 1))
        return np.sum(w * mats, axis=0) / self.lam

    def ell(self, x):
        x = np.asarray(x, dtype=float)
        scalar = x.ndim == 0
        mats = self._second_diff(self.phi.a2, x)
        w = self.rates.reshape((-1,) + (1,) * (mats.ndim - 1))
        out = np.sum(w * mats, axis=0) - self.lam * np.asarray(self.phi.value(x))
        return float(out) if scalar else out

    def psi(self, x):
        """Antiderivative of ell, vanishing at -inf."""
        x = np.asarray(x, dtype=float)
        scalar = x.ndim == 0
        mats = self._second_diff(self.phi.a3, x)
        w = self.rates.reshape((-1,) + (1,) * (mats.ndim - 1))
        out = np.sum(w * mats, axis=0) - self.lam * np.asarray(self.phi.a1(x))
        return float(out) if scalar else out


# ---------------------------------------------------------------------------
# Forward runs with martingale ledgers
# ---------------------------------------------------------------------------

@dataclass
class ForwardLedger:
    """Path functionals of one forward run, snapshotted at record times.

    All time integrals are exact given the event times (every integrand is
    constant between events). cond_qv accumulates the conditional expected
    squared jump given the event geometry; real_qv the realized squared
    jumps. Both have the same expectation as the predictable quadratic
    variation of the <X, phi> martingale; cond_qv has less Monte Carlo
    variance.
    """

    record_times: list
    value: list = dc_field(default_factory=list)        # <X_t, phi>
    mass: list = dc_field(default_factory=list)         # <X_t, 1>
    compensator: list = dc_field(default_factory=list)  # int <X_s, ell> ds
    cond_qv: list = dc_field(default_factory=list)
    real_qv: list = dc_field(default_factory=list)
    int_phi2: list = dc_field(default_factory=list)     # int <X_s, phi^2> ds
    int_exp_lap: list = dc_field(default_factory=list)  # int e^-V <X_s, phi''> ds
    int_exp_stab: list = dc_field(default_factory=list)  # int e^-V <X_s, phi^(1+b)> ds
    probe_values: list = dc_field(default_factory=list)
    events: int = 0
    final_field: object = None

    def martingale(self, idx: int = -1) -> float:
        return self.value[idx] - self.value[0] - self.compensator[idx]


class ForwardKernel:
    """Per-configuration precomputation shared across forward replicates.

    Holds the single-lineage generator and the multi-row Hermite table of
    every tracked antiderivative. Building it costs a radial quadrature on a
    dense grid, so reuse one kernel for all paths of a Monte Carlo run.
    """

    def __init__(self, params: ScalingParams, law, phi: TestFunction,
                 *, beta: float | None = None, track_qv: bool = False,
                 track_phi2: bool = False, track_exp: bool = False):
        self.params = params
        self.law = law
        self.phi = phi
        self.track_qv = track_qv
        self.track_phi2 = track_phi2
        self.track_exp = track_exp
        self.gen = SingleLineageGenerator(params, law, phi)
        # All tracked antiderivatives are constant outside the dilated
        # support of phi, so one shared Hermite table (exact values and
        # derivatives at the nodes, O(h^4) in between) evaluates every
        # pairing in the event loop at a fraction of the closed-form cost.
        if isinstance(law, FixedRadius):
            pad = 2.0 * law.radius / params.m_space
        else:
            pad = 2.0 / params.m_space
        lo_ext = phi.support_center - phi.support_radius - pad
        hi_ext = phi.support_center + phi.support_radius + pad
        value_fns = [phi.a1, self.gen.psi]
        deriv_fns = [phi.value, self.gen.ell]
        fill_left = [0.0, 0.0]
        fill_right = [float(phi.a1(hi_ext)), 0.0]
        self.idx_of = {"phi": 0, "ell": 1}
        lo = phi.support_center - phi.support_radius
        hi = phi.support_center + phi.support_radius
        if track_phi2:
            def phi2(x):
                return np.asarray(phi.value(x)) ** 2
            tab2 = TabulatedAntiderivative(phi2, lo, hi)
            self.idx_of["phi2"] = len(value_fns)
            value_fns.append(tab2)
            deriv_fns.append(phi2)
            fill_left.append(0.0)
            fill_right.append(tab2.total)
        if track_exp:
            if beta is None:
                raise ValueError("exponential ledgers need beta")
            self.idx_of["lap"] = len(value_fns)
            value_fns.append(phi.d1)  # antiderivative of the 2nd derivative
            deriv_fns.append(phi.d2)
            fill_left.append(0.0)
            fill_right.append(0.0)

            def stab(x):
                return np.asarray(phi.value(x)) ** (1.0 + beta)
            tabs = TabulatedAntiderivative(stab, lo, hi)
            self.idx_of["stab"] = len(value_fns)
            value_fns.append(tabs)
            deriv_fns.append(stab)
            fill_left.append(0.0)
            fill_right.append(tabs.total)
        self.value_fns = value_fns
        self.table = MultiHermiteTable(lo_ext, hi_ext, value_fns, deriv_fns,
                                       fill_left, fill_right)

    def initial_totals(self, field: Interval1DField) -> np.ndarray:
        return np.array([field.pair_with(fn) for fn in self.value_fns])


def run_forward(params: ScalingParams, law, initial: PiecewiseInitial,
                phi: TestFunction | None, record_times, rng,
                *, beta: float | None = None, track_qv: bool = False,
                track_phi2: bool = False, track_exp: bool = False,
                probes=(), max_events: int = 20_000_000,
                event_sink: list | None = None,
                kernel: ForwardKernel | None = None) -> ForwardLedger:
    """Simulate one forward path, recording ledgers at the given times.

    record_times must be strictly increasing and positive (a leading 0.0 is
    allowed and snapshots the initial state). track_exp requires beta and
    adds the exponential-drift integrals used by the stable-limit martingale
    diagnostics. probes are positions whose frequency w(x) is recorded at
    each record time; event_sink, if given, collects applied events. Pass a
    prebuilt ForwardKernel when running many replicates of one setup.
    """
    record_times = [float(t) for t in record_times]
    if any(b <= a for a, b in zip(record_times, record_times[1:])):
        raise ValueError("record times must be strictly increasing")
    if phi is None and (track_qv or track_phi2 or track_exp):
        raise ValueError("ledger tracking needs a test function")
    field = initial.as_field(params.k_density)
    k = params.k_density
    stream = EventStream(params, law, [field.support_window()])

    gen = None
    table = None
    idx_of = {}
    if phi is not None:
        if kernel is None:
            kernel = ForwardKernel(params, law, phi, beta=beta,
                                   track_qv=track_qv, track_phi2=track_phi2,
                                   track_exp=track_exp)
        elif kernel.phi is not phi or kernel.params != params:
            raise ValueError("kernel was built for a different setup")
        track_qv = track_qv or kernel.track_qv
        track_phi2 = kernel.track_phi2
        track_exp = kernel.track_exp
        gen = kernel.gen
        table = kernel.table
        idx_of = kernel.idx_of
        totals = kernel.initial_totals(field)
    else:
        totals = np.zeros(0)
    i_phi = idx_of.get("phi", -1)
    i_ell = idx_of.get("ell", -1)
    i_phi2 = idx_of.get("phi2", -1)
    i_lap = idx_of.get("lap", -1)
    i_stab = idx_of.get("stab", -1)
    mass = field.total_mass()
    comp = 0.0
    iphi2 = 0.0
    ilap = 0.0
    istab = 0.0
    cqv = 0.0
    rqv = 0.0
    t_last = 0.0
    ledger = ForwardLedger(record_times=record_times)

    def advance(to_t: float) -> None:
        nonlocal comp, iphi2, ilap, istab, t_last
        dt = to_t - t_last
        if dt <= 0.0:
            return
        if gen is not None:
            comp += totals[i_ell] * dt
            if track_phi2:
                iphi2 += totals[i_phi2] * dt
            if track_exp:
                damp = math.exp(-totals[i_phi]) * dt
                ilap += totals[i_lap] * damp
                istab += totals[i_stab] * damp
        t_last = to_t

    def snapshot() -> None:
        ledger.value.append(float(totals[i_phi]) if gen is not None else 0.0)
        ledger.mass.append(mass)
        ledger.compensator.append(comp)
        ledger.cond_qv.append(cqv)
        ledger.real_qv.append(rqv)
        ledger.int_phi2.append(iphi2)
        ledger.int_exp_lap.append(ilap)
        ledger.int_exp_stab.append(istab)
        if probes:
            ledger.probe_values.append([field.value_at(p) for p in probes])

    sup_lo, sup_hi = field.support_window()
    rec_idx = 0
    applied = 0
    while rec_idx < len(record_times):
        ev = stream.next_event(rng)
        while rec_idx < len(record_times) and record_times[rec_idx] <= ev.time:
            advance(record_times[rec_idx])
            snapshot()
            rec_idx += 1
        if rec_idx >= len(record_times):
            break
        advance(ev.time)

        blo = ev.center[0] - ev.radius
        bhi = ev.center[0] + ev.radius
        bp = field.ball_points(blo, bhi)
        if bp is None:
            # Ball misses the support: parent type is 0 and nothing moves,
            # but the type draw is consumed so paths do not depend on how
            # the support happened to be represented.
            rng.random()
            applied += 1
            continue
        pts, seg_vals = bp
        s_w = float(np.dot(seg_vals, pts[1:] - pts[:-1]))
        pbar = s_w / (2.0 * ev.radius)
        if pbar > 1.0 + 1e-9:
            raise RuntimeError(f"parent probability {pbar} above 1")
        pbar = min(pbar, 1.0)
        alpha = bool(rng.random() < pbar)
        rho = ev.impact

        if gen is not None and bhi > table.lo and blo < table.hi:
            # Every tracked integrand vanishes outside the table extent, so
            # only the part of the ball inside it matters; one shared table
            # call covers both the full-ball integrals (rows 0:2) and the
            # per-segment integrals against w (rows 2:).
            tp = field.ball_points(max(blo, table.lo), min(bhi, table.hi))
            if tp is None:
                vals = table(np.array([blo, bhi]))
                f_ball = vals[1] - vals[0]
                int_wf = np.zeros(table.rows)
            else:
                tpts, tvals = tp
                pts_all = np.empty(len(tpts) + 2)
                pts_all[0] = blo
                pts_all[1] = bhi
                pts_all[2:] = tpts
                vals = table(pts_all)
                f_ball = vals[1] - vals[0]
                int_wf = tvals @ (vals[3:] - vals[2:-1])
            if alpha:
                totals += rho * k * (f_ball - int_wf)
            else:
                totals -= rho * k * int_wf
            if track_qv:
                g = k * float(int_wf[i_phi])
                up = k * float(f_ball[i_phi]) - g
                cqv += rho * rho * (pbar * up * up + (1.0 - pbar) * g * g)
                jump = rho * up if alpha else -rho * g
                rqv += jump * jump
        mass += rho * ((k * 2.0 * ev.radius if alpha else 0.0) - k * s_w)

        field.apply_event(blo, bhi, rho, alpha)
        if event_sink is not None:
            event_sink.append(ev)
        if alpha and (blo < sup_lo or bhi > sup_hi):
            sup_lo = min(sup_lo, blo)
            sup_hi = max(sup_hi, bhi)
            stream.set_window([(sup_lo, sup_hi)])
        applied += 1
        if applied > max_events:
            raise RuntimeError("event budget exhausted; shrink the run")

    ledger.events = applied
    ledger.final_field = field
    return ledger


def run_forward_plain(params: ScalingParams, law, initial: PiecewiseInitial,
                      record_times, rng, probes=(),
                      max_events: int = 20_000_000):
    """Evolve the d=1 field with no martingale bookkeeping.

    Returns (field, probe_values) where probe_values[i][j] is the frequency
    w at probes[j] when record_times[i] is reached. This is the cheap path
    for duality experiments, which only need field values at a few points.
    """
    record_times = [float(t) for t in record_times]
    if any(b <= a for a, b in zip(record_times, record_times[1:])):
        raise ValueError("record times must be strictly increasing")
    field = initial.as_field(params.k_density)
    stream = EventStream(params, law, [field.support_window()])
    sup_lo, sup_hi = field.support_window()
    probe_values = []
    rec_idx = 0
    applied = 0
    while rec_idx < len(record_times):
        ev = stream.next_event(rng)
        while rec_idx < len(record_times) and record_times[rec_idx] <= ev.time:
            probe_values.append([field.value_at(p) for p in probes])
            rec_idx += 1
        if rec_idx >= len(record_times):
            break
        blo = ev.center[0] - ev.radius
        bhi = ev.center[0] + ev.radius
        bp = field.ball_points(blo, bhi)
        if bp is None:
            rng.random()
            applied += 1
            continue
        pts, seg_vals = bp
        s_w = float(np.dot(seg_vals, pts[1:] - pts[:-1]))
        pbar = min(s_w / (2.0 * ev.radius), 1.0)
        alpha = bool(rng.random() < pbar)
        field.apply_event(blo, bhi, ev.impact, alpha)
        if alpha and (blo < sup_lo or bhi > sup_hi):
            sup_lo = min(sup_lo, blo)
            sup_hi = max(sup_hi, bhi)
            stream.set_window([(sup_lo, sup_hi)])
        applied += 1
        if applied > max_events:
            raise RuntimeError("event budget exhausted; shrink the run")
    return field, probe_values


def replay_on_interval(field: Interval1DField, events, rng) -> Interval1DField:
    """Apply logged events to an interval field, drawing parent types."""
    for ev in events:
        blo = ev.center[0] - ev.radius
        bhi = ev.center[0] + ev.radius
        s_w, _ = field.ball_profile(blo, bhi, [])
        pbar = min(s_w / (2.0 * ev.radius), 1.0)
        alpha = bool(rng.random() < pbar)
        field.apply_event(blo, bhi, ev.impact, alpha)
    return field


# ---------------------------------------------------------------------------
# Direct generator quadratures (slow, for cross-checks)
# ---------------------------------------------------------------------------

def _radius_nodes(params: ScalingParams, law, r_panels: int, r_order: int):
    """(radii, mu-weights) discretizing the radius measure."""
    if isinstance(law, FixedRadius):
        return np.array([law.radius]), np.array([1.0])
    lo = law.lower_radius(params)
    nodes, weights = _panel_nodes(lo, 1.0, r_panels, r_order)
    return nodes, weights * nodes ** law.alpha


def _kink_quadrature(field: Interval1DField, a: float, integrand,
                     x_order: int = 10, extra_kinks=()):
    """Integrate integrand(x) over the dilated support hull.

    The profile functionals x -> int_{x-a}^{x+a} (...) are smooth except
    where x +- a crosses a breakpoint of the field or of the test function,
    so panels split at those kinks integrate to near machine accuracy.
    """
    points = [field.xs - a, field.xs + a]
    lo_hull, hi_hull = field.xs[0] - a, field.xs[-1] + a
    for e in extra_kinks:
        for shifted in (e - a, e + a):
            if lo_hull < shifted < hi_hull:
                points.append(np.array([shifted]))
    kinks = np.unique(np.concatenate(points))
    gx, gw = np.polynomial.legendre.leggauss(x_order)
    total = 0.0
    for lo, hi in zip(kinks[:-1], kinks[1:]):
        mid = 0.5 * (lo + hi)
        half = 0.5 * (hi - lo)
        xs = mid + half * gx
        total += half * float(np.dot(gw, integrand(xs)))
    return total


def generator_quadrature(field: Interval1DField, params: ScalingParams, law,
                         phi: TestFunction, r_panels: int = 24,
                         r_order: int = 8) -> float:
    """L(<., phi>)(X) by direct integration over event centers and radii.

    Equals <X, ell> (see SingleLineageGenerator) up to quadrature error;
    the pair is cross-checked in the tests.
    """
    radii, mu_w = _radius_nodes(params, law, r_panels, r_order)
    k = params.k_density
    base = params.n_rate * params.m_space ** params.dimension
    w_anti = field.prefix_function(lambda x: np.asarray(x, dtype=float))
    wphi_anti = field.prefix_function(phi.a1)
    edges = (phi.support_center - phi.support_radius,
             phi.support_center + phi.support_radius)
    total = 0.0
    for r, wgt in zip(radii, mu_w):
        a = r / params.m_space
        rho = law.impact_at(r) / params.j_impact

        def integrand(xs):
            s_w = np.asarray(w_anti(xs + a)) - np.asarray(w_anti(xs - a))
            g = k * (np.asarray(wphi_anti(xs + a)) - np.asarray(wphi_anti(xs - a)))
            phi_b = np.asarray(phi.a1(xs + a)) - np.asarray(phi.a1(xs - a))
            pbar = s_w / (2.0 * a)
            return rho * (pbar * k * phi_b - g)

        total += wgt * _kink_quadrature(field, a, integrand,
                                        extra_kinks=edges)
    return base * total


def exponential_generator(field: Interval1DField, params: ScalingParams, law,
                          phi: TestFunction, r_panels: int = 24,
                          r_order: int = 8) -> float:
    """Generator applied to X -> exp(-<X, phi>), by direct quadrature."""
    radii, mu_w = _radius_nodes(params, law, r_panels, r_order)
    k = params.k_density
    base = params.n_rate * params.m_space ** params.dimension
    w_anti = field.prefix_function(lambda x: np.asarray(x, dtype=float))
    wphi_anti = field.prefix_function(phi.a1)
    edges = (phi.support_center - phi.support_radius,
             phi.support_center + phi.support_radius)
    v0 = field.pair_with(phi.a1)
    total = 0.0
    for r, wgt in zip(radii, mu_w):
        a = r / params.m_space
        rho = law.impact_at(r) / params.j_impact

        def integrand(xs):
            s_w = np.asarray(w_anti(xs + a)) - np.asarray(w_anti(xs - a))
            g = k * (np.asarray(wphi_anti(xs + a)) - np.asarray(wphi_anti(xs - a)))
            phi_b = np.asarray(phi.a1(xs + a)) - np.asarray(phi.a1(xs - a))
            pbar = s_w / (2.0 * a)
            return (pbar * np.expm1(-rho * (k * phi_b - g))
                    + (1.0 - pbar) * np.expm1(rho * g))

        total += wgt * _kink_quadrature(field, a, integrand,
                                        extra_kinks=edges)
    return base * math.exp(-v0) * total


def qv_rate_quadrature(field: Interval1DField, params: ScalingParams, law,
                       phi: TestFunction, r_panels: int = 24,
                       r_order: int = 8) -> float:
    """Instantaneous quadratic-variation rate of <X_t, phi> at the state X.

    Integrates the conditional expected squared jump against the event
    intensity. For a full block (w = 1 on [0, L], phi constant) only events
    straddling the block edges contribute and the rate reduces to
    (8/3) N u^2 c^2 K^2 r^3 / (M^2 J^2); the tests pin that value.
    """
    radii, mu_w = _radius_nodes(params, law, r_panels, r_order)
    k = params.k_density
    base = params.n_rate * params.m_space ** params.dimension
    w_anti = field.prefix_function(lambda x: np.asarray(x, dtype=float))
    wphi_anti = field.prefix_function(phi.a1)
    edges = (phi.support_center - phi.support_radius,
             phi.support_center + phi.support_radius)
    total = 0.0
    for r, wgt in zip(radii, mu_w):
        a = r / params.m_space
        rho = law.impact_at(r) / params.j_impact

        def integrand(xs):
            s_w = np.asarray(w_anti(xs + a)) - np.asarray(w_anti(xs - a))
            g = k * (np.asarray(wphi_anti(xs + a)) - np.asarray(wphi_anti(xs - a)))
            phi_b = np.asarray(phi.a1(xs + a)) - np.asarray(phi.a1(xs - a))
            pbar = s_w / (2.0 * a)
            up = k * phi_b - g
            return rho * rho * (pbar * up * up + (1.0 - pbar) * g * g)

        total += wgt * _kink_quadrature(field, a, integrand,
                                        extra_kinks=edges)
    return base * total


# ---------------------------------------------------------------------------
# Lattice representation (approximate; any dimension)
# ---------------------------------------------------------------------------

class LatticeField:
    """Frequencies on a uniform grid of cell centers, any dimension.

    Event membership is by cell center, so the update is O(h)-approximate in
    the cell spacing; the d=1 tests couple it against the exact interval
    field under a shared event log. This is the only forward representation
    offered for d >= 2.
    """

    def __init__(self, box, spacing: float, k_density: float,
                 values=None):
        self.box = [(float(lo), float(hi)) for lo, hi in box]
        self.h = float(spacing)
        self.k_density = float(k_density)
        axes = [np.arange(lo + 0.5 * self.h, hi, self.h) for lo, hi in self.box]
        self.dimension = len(axes)
        grids = np.meshgrid(*axes, indexing="ij")
        self.centers = np.stack([g.ravel() for g in grids], axis=1)
        if values is None:
            self.w = np.zeros(len(self.centers))
        else:
            self.w = np.asarray(values, dtype=float).ravel().copy()
            if len(self.w) != len(self.centers):
                raise ValueError("values do not match the grid")

    @classmethod
    def from_initial(cls, initial: PiecewiseInitial, box, spacing: float,
                     k_density: float) -> "LatticeField":
        lat = cls(box, spacing, k_density)
        breaks = np.asarray(initial.breaks)
        vals = np.asarray(initial.values)
        idx = np.searchsorted(breaks, lat.centers[:, 0], side="right") - 1
        inside = (idx >= 0) & (idx < len(vals)) \
            & (lat.centers[:, 0] < breaks[-1])
        lat.w[inside] = vals[idx[inside]]
        return lat

    def apply_event(self, center, radius: float, rho: float,
                    uniform: float) -> None:
        """Apply one event; uniform in [0,1) decides the parental type."""
        delta = self.centers - np.asarray(center)[None, :]
        member = np.einsum("ij,ij->i", delta, delta) <= radius * radius
        count = int(member.sum())
        if count == 0:
            return
        pbar = float(self.w[member].mean())
        alpha = uniform < pbar
        self.w[member] *= 1.0 - rho
        if alpha:
            self.w[member] += rho

    def pair_with_callable(self, f) -> float:
        vals = np.asarray(f(self.centers[:, 0]) if self.dimension == 1
                          else f(self.centers))
        return self.k_density * self.h ** self.dimension * float(np.dot(self.w, vals))

    def total_mass(self) -> float:
        return self.k_density * self.h ** self.dimension * float(self.w.sum())


def replay_on_lattice(lat: LatticeField, events, rng) -> LatticeField:
    for ev in events:
        lat.apply_event(np.asarray(ev.center), ev.radius, ev.impact,
                        float(rng.random()))
    return lat


def forward_event_log(params: ScalingParams, law, initial: PiecewiseInitial,
                      horizon: float, rng, path) -> int:
    """Simulate a path and persist its applied events; returns the count."""
    sink: list = []
    run_forward(params, law, initial, None, [horizon], rng, event_sink=sink)
    return write_event_log(path, sink, params.dimension)
