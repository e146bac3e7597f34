"""Small statistics helpers shared by the Monte Carlo harnesses.

Everything here reduces with math.fsum over deterministically ordered inputs
so that results are identical for any worker split.
"""
from __future__ import annotations

import math
from dataclasses import dataclass


@dataclass(frozen=True)
class MeanReport:
    """Sample mean with its standard error and count."""

    mean: float
    stderr: float
    n: int

    def z_against(self, target: float) -> float:
        """Signed deviation from target in standard-error units."""
        if self.stderr == 0.0:
            return 0.0 if self.mean == target else math.inf
        return (self.mean - target) / self.stderr


def mean_report(values) -> MeanReport:
    vals = list(values)
    n = len(vals)
    if n == 0:
        raise ValueError("empty sample")
    total = math.fsum(vals)
    mean = total / n
    if n == 1:
        return MeanReport(mean, 0.0, 1)
    ss = math.fsum((v - mean) ** 2 for v in vals)
    stderr = math.sqrt(ss / (n - 1) / n)
    return MeanReport(mean, stderr, n)


def difference_z(a: MeanReport, b: MeanReport) -> float:
    """z-score of mean(a) - mean(b) under independent samples."""
    se = math.hypot(a.stderr, b.stderr)
    if se == 0.0:
        return 0.0 if a.mean == b.mean else math.inf
    return (a.mean - b.mean) / se


@dataclass(frozen=True)
class WilsonInterval:
    """Wilson score interval for a binomial proportion."""

    successes: int
    trials: int
    low: float
    high: float

    @property
    def point(self) -> float:
        return self.successes / self.trials


def wilson_interval(successes: int, trials: int, z: float = 1.96) -> WilsonInterval:
    if trials <= 0:
        raise ValueError("trials must be positive")
    if not 0 <= successes <= trials:
        raise ValueError("successes out of range")
    p = successes / trials
    z2 = z * z
    denom = 1.0 + z2 / trials
    center = (p + z2 / (2.0 * trials)) / denom
    half = z / denom * math.sqrt(p * (1.0 - p) / trials + z2 / (4.0 * trials * trials))
    return WilsonInterval(successes, trials, max(0.0, center - half),
                          min(1.0, center + half))


def fsum_by_key(pairs):
    """Sum values grouped by key with fsum, keys in sorted order.

    pairs is an iterable of (key, value); returns a dict whose insertion
    order is sorted by key, so downstream CSV writers are deterministic.
    """
    buckets: dict = {}
    for k, v in pairs:
        buckets.setdefault(k, []).append(v)
    return {k: math.fsum(buckets[k]) for k in sorted(buckets)}
