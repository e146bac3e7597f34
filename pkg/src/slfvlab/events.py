"""Rescaled reproduction-event generation and event-log IO.

Events live in rescaled coordinates throughout: a raw event with radius r and
impact u(r) becomes a ball of radius r/M around a center x with impact
u(r)/J, arriving at intensity N M^d dx mu(dr) dt inside the tracked window.

The stream only generates events whose ball intersects the window (the field
is identically zero elsewhere, so those events are almost-sure no-ops). That
restriction couples the radius and the admissible center region, which for a
power-law radius measure turns the radius marginal into a small mixture of
power laws; sampling is by inverse CDF per mixture component, so no rejection
is needed in d=1 and only a geometric rejection against rounded corners in
d >= 2.
"""
from __future__ import annotations

import math
import struct
from dataclasses import dataclass

import numpy as np

from .core import (BALL_VOLUME, Event, EventLaw, FixedRadius, ScalingParams,
                   VariableRadius, power_law_mass)


class PowerLawSampler:
    """Inverse-CDF sampler for densities proportional to r^exponent on [lo, hi].

    Handles the logarithmic exponent -1. Also exposes cdf() so tests can run
    Kolmogorov-Smirnov checks against the sampled radii.
    """

    def __init__(self, exponent: float, lo: float, hi: float):
        if not 0 < lo < hi:
            raise ValueError("need 0 < lo < hi")
        self.exponent = float(exponent)
        self.lo = float(lo)
        self.hi = float(hi)
        self._log_case = abs(self.exponent + 1.0) < 1e-12
        self.mass = power_law_mass(self.exponent, self.lo, self.hi)

    def cdf(self, r):
        r = np.clip(r, self.lo, self.hi)
        if self._log_case:
            return np.log(r / self.lo) / self.mass
        p = self.exponent + 1.0
        return (r ** p - self.lo ** p) / (p * self.mass)

    def ppf(self, q):
        if self._log_case:
            return self.lo * np.exp(np.asarray(q) * self.mass)
        p = self.exponent + 1.0
        return (self.lo ** p + np.asarray(q) * p * self.mass) ** (1.0 / p)

    def sample(self, rng: np.random.Generator, size=None):
        return self.ppf(rng.random(size))


def uniform_in_ball(rng: np.random.Generator, dimension: int, size: int) -> np.ndarray:
    """size points uniform in the unit ball, shape (size, dimension)."""
    if dimension == 1:
        return rng.uniform(-1.0, 1.0, size=(size, 1))
    if dimension == 2:
        radius = np.sqrt(rng.random(size))
        angle = rng.uniform(0.0, 2.0 * math.pi, size)
        return np.stack([radius * np.cos(angle), radius * np.sin(angle)], axis=1)
    if dimension == 3:
        direction = rng.standard_normal((size, 3))
        direction /= np.linalg.norm(direction, axis=1, keepdims=True)
        radius = rng.random(size) ** (1.0 / 3.0)
        return direction * radius[:, None]
    raise ValueError("dimension must be 1, 2 or 3")


def dilation_coefficients(lengths, dimension: int) -> list[float]:
    """Coefficients c_j with |box (+) ball_a| = sum_j c_j a^j (Steiner formula)."""
    ls = [float(x) for x in lengths]
    if dimension == 1:
        (l1,) = ls
        return [l1, 2.0]
    if dimension == 2:
        l1, l2 = ls
        return [l1 * l2, 2.0 * (l1 + l2), math.pi]
    l1, l2, l3 = ls
    return [l1 * l2 * l3,
            2.0 * (l1 * l2 + l1 * l3 + l2 * l3),
            math.pi * (l1 + l2 + l3),
            4.0 * math.pi / 3.0]


def dilated_box_volume(lengths, a: float, dimension: int) -> float:
    return math.fsum(c * a ** j
                     for j, c in enumerate(dilation_coefficients(lengths, dimension)))


@dataclass
class StreamState:
    """Mutable bookkeeping of an EventStream: clock and draw count."""

    time: float = 0.0
    draws: int = 0


class EventStream:
    """Time-ordered rescaled events over an axis-aligned window.

    window is a list of (lo, hi) pairs, one per dimension, in rescaled
    coordinates. In free mode (torus=False) events are generated for every
    ball intersecting the window; call set_window whenever the support of the
    field grows so the intensity stays exact. In torus mode centers are
    uniform on the torus itself and the window never changes.
    """

    def __init__(self, params: ScalingParams, law: EventLaw, window,
                 torus: bool = False):
        self.params = params
        self.law = law
        self.torus = torus
        self.state = StreamState()
        self._base_intensity = params.n_rate * params.m_space ** params.dimension
        self.set_window(window)

    # -- window and rate -----------------------------------------------------
    def set_window(self, window) -> None:
        window = [(float(lo), float(hi)) for lo, hi in window]
        if len(window) != self.params.dimension:
            raise ValueError("window rank does not match dimension")
        for lo, hi in window:
            if not hi > lo:
                raise ValueError("window sides must have positive length")
        self.window = window
        self._lengths = [hi - lo for lo, hi in window]
        self._rebuild_mixture()

    def _rebuild_mixture(self) -> None:
        p, law = self.params, self.law
        d = p.dimension
        if self.torus:
            vol = math.prod(self._lengths)
            if isinstance(law, FixedRadius):
                self._components = [(vol, None)]
            else:
                lo = law.lower_radius(p)
                self._components = [
                    (vol * power_law_mass(law.alpha, lo, 1.0),
                     PowerLawSampler(law.alpha, lo, 1.0))]
        else:
            coeffs = dilation_coefficients(self._lengths, d)
            if isinstance(law, FixedRadius):
                a = law.radius / p.m_space
                self._components = [(dilated_box_volume(self._lengths, a, d), None)]
            else:
                lo = law.lower_radius(p)
                self._components = []
                for j, c in enumerate(coeffs):
                    mass = c * p.m_space ** (-j) * power_law_mass(law.alpha + j, lo, 1.0)
                    self._components.append(
                        (mass, PowerLawSampler(law.alpha + j, lo, 1.0)))
        masses = [m for m, _ in self._components]
        self._mixture_total = math.fsum(masses)
        self._mixture_cdf = np.cumsum(masses) / self._mixture_total
        self.rate = self._base_intensity * self._mixture_total

    # -- sampling ------------------------------------------------------------
    def _sample_radius(self, rng: np.random.Generator) -> float:
        if isinstance(self.law, FixedRadius):
            return self.law.radius
        j = int(np.searchsorted(self._mixture_cdf, rng.random(), side="right"))
        j = min(j, len(self._components) - 1)
        return float(self._components[j][1].sample(rng))

    def _sample_center(self, rng: np.random.Generator, a: float):
        d = self.params.dimension
        if self.torus:
            return tuple(lo + (hi - lo) * rng.random()
                         for lo, hi in self.window)
        if d == 1:
            lo, hi = self.window[0]
            return (rng.uniform(lo - a, hi + a),)
        # Rejection against the rounded-corner dilation in d >= 2.
        lows = np.array([lo - a for lo, _ in self.window])
        highs = np.array([hi + a for _, hi in self.window])
        blo = np.array([lo for lo, _ in self.window])
        bhi = np.array([hi for _, hi in self.window])
        while True:
            x = lows + (highs - lows) * rng.random(d)
            gap = np.maximum(np.maximum(blo - x, x - bhi), 0.0)
            if float(np.dot(gap, gap)) <= a * a:
                return tuple(float(v) for v in x)

    def next_event(self, rng: np.random.Generator) -> Event:
        """Draw the waiting time and geometry of the next event.

        Advances the internal clock. The exponential waiting time uses the
        current rate, which is exact as long as set_window is only called at
        event application times (the intensity is constant in between).
        """
        dt = rng.exponential(1.0 / self.rate)
        new_time = self.state.time + dt
        if not new_time > self.state.time:
            raise RuntimeError("event clock failed to strictly increase")
        self.state.time = new_time
        self.state.draws += 1
        r = self._sample_radius(rng)
        a = r / self.params.m_space
        center = self._sample_center(rng, a)
        impact = self.law.impact_at(r) / self.params.j_impact
        return Event(time=self.state.time, center=center, radius=a, impact=impact)


def lineage_jump_rate(params: ScalingParams, law: EventLaw) -> float:
    """Rate at which a single dual lineage jumps (is hit by a marked event).

    Equals (N/J) |B_1| int r^d u(r) mu(dr): the intensity of events covering a
    fixed point, damped by the per-lineage mark probability u(r)/J.
    """
    p = params
    d = p.dimension
    if isinstance(law, FixedRadius):
        per_radius = law.radius ** d * law.impact
    else:
        lo = law.lower_radius(p)
        per_radius = power_law_mass(law.alpha + d - law.gamma, lo, 1.0)
    return p.n_rate / p.j_impact * BALL_VOLUME[d] * per_radius


def covering_rate(params: ScalingParams, law: EventLaw) -> float:
    """Rate at which events cover a fixed point: N |B_1| int r^d mu(dr)."""
    p = params
    d = p.dimension
    if isinstance(law, FixedRadius):
        per_radius = law.radius ** d
    else:
        lo = law.lower_radius(p)
        per_radius = power_law_mass(law.alpha + d, lo, 1.0)
    return p.n_rate * BALL_VOLUME[d] * per_radius


def marked_radius_sampler(params: ScalingParams, law: VariableRadius) -> PowerLawSampler:
    """Radius law of events that cover and mark a fixed lineage: r^(alpha+d-gamma)."""
    lo = law.lower_radius(params)
    return PowerLawSampler(law.alpha + params.dimension - law.gamma, lo, 1.0)


def covering_radius_sampler(params: ScalingParams, law: VariableRadius) -> PowerLawSampler:
    """Radius law of events that cover a fixed lineage: r^(alpha+d)."""
    lo = law.lower_radius(params)
    return PowerLawSampler(law.alpha + params.dimension, lo, 1.0)


class CoveringEventStream:
    """Events covering at least one tracked point, by exact thinning.

    Proposals come from the superposition of per-point streams: point i
    proposes an event of radius r at rate N |B_1| r^d mu(dr) with center
    uniform in the ball of scaled radius r/M around the point. A proposal
    with center x is accepted with probability 1/k(x), where k(x) counts the
    tracked points within r/M of x. Accepted proposals have exactly the law
    of the full event stream restricted to events covering >= 1 point, so
    the (almost surely no-op) events that miss every point never have to be
    materialized.
    """

    def __init__(self, params: ScalingParams, law: EventLaw):
        self.params = params
        self.law = law
        self.per_point = covering_rate(params, law)
        if isinstance(law, VariableRadius):
            self._radius = covering_radius_sampler(params, law)
        else:
            self._radius = None
        self.time = 0.0

    def next_event(self, positions, rng: np.random.Generator):
        """Next event touching any of positions -> (Event, covered indices).

        positions is a (k, d) array; the internal clock advances through the
        rejected proposals as well, which is what makes the waiting times
        exact.
        """
        pos = np.atleast_2d(np.asarray(positions, dtype=float))
        k = pos.shape[0]
        d = self.params.dimension
        while True:
            wait = rng.exponential(1.0 / (k * self.per_point))
            if not wait > 0.0:
                raise RuntimeError("event clock failed to strictly increase")
            self.time += wait
            i = int(rng.integers(k))
            if self._radius is None:
                r = self.law.radius
            else:
                r = float(self._radius.sample(rng))
            a = r / self.params.m_space
            center = pos[i] + a * uniform_in_ball(rng, d, 1)[0]
            dist2 = np.sum((pos - center) ** 2, axis=1)
            covered = np.flatnonzero(dist2 < a * a)
            if rng.random() * len(covered) < 1.0:
                impact = self.law.impact_at(r) / self.params.j_impact
                ev = Event(time=self.time,
                           center=tuple(float(v) for v in center),
                           radius=a, impact=impact)
                return ev, covered


# ---------------------------------------------------------------------------
# Event-log IO
# ---------------------------------------------------------------------------

_MAGIC = b"SLFVEVT1"


def _record_dtype(dimension: int) -> np.dtype:
    return np.dtype([("time", "<f8"), ("center", "<f8", (dimension,)),
                     ("radius", "<f8"), ("impact", "<f8")])


def write_event_log(path, events, dimension: int) -> int:
    """Write events to a little-endian binary log; returns the record count."""
    events = list(events)
    arr = np.empty(len(events), dtype=_record_dtype(dimension))
    for i, ev in enumerate(events):
        arr[i]["time"] = ev.time
        arr[i]["center"] = ev.center
        arr[i]["radius"] = ev.radius
        arr[i]["impact"] = ev.impact
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<II", 1, dimension))
        fh.write(struct.pack("<Q", len(events)))
        arr.tofile(fh)
    return len(events)


def read_event_log(path) -> tuple[int, list[Event]]:
    """Read a binary event log back into (dimension, events)."""
    with open(path, "rb") as fh:
        magic = fh.read(8)
        if magic != _MAGIC:
            raise ValueError("not an event log (bad magic)")
        version, dimension = struct.unpack("<II", fh.read(8))
        if version != 1:
            raise ValueError(f"unsupported event log version {version}")
        (count,) = struct.unpack("<Q", fh.read(8))
        arr = np.fromfile(fh, dtype=_record_dtype(dimension), count=count)
    if len(arr) != count:
        raise ValueError("event log truncated")
    events = [Event(time=float(rec["time"]),
                    center=tuple(float(v) for v in np.atleast_1d(rec["center"])),
                    radius=float(rec["radius"]), impact=float(rec["impact"]))
              for rec in arr]
    return dimension, events
