"""Estimators linking Monte Carlo samples to the analytic predictions."""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.stats import ks_2samp

from .core import CensorPolicy, DomainError

Z95 = 1.959963984540054
KS_C_1PCT = 1.628

# below these caps a censored run reflects budget, not explosion
SURVIVAL_MIN_PARTICLES = 10**6
SURVIVAL_MIN_TIME = 1e4


@dataclass(frozen=True)
class SampleSummary:
    count: int
    mean: float
    variance: float
    stderr: float
    ci95_low: float
    ci95_high: float
    censored_count: int = 0

    def within(self, target: float, n_stderr: float = 3.0) -> bool:
        return abs(self.mean - target) <= n_stderr * self.stderr

    def as_dict(self) -> dict:
        return {
            "count": self.count,
            "mean": self.mean,
            "variance": self.variance,
            "stderr": self.stderr,
            "ci95_low": self.ci95_low,
            "ci95_high": self.ci95_high,
            "censored_count": self.censored_count,
        }


def summarize(samples, censored_count: int = 0) -> SampleSummary:
    x = np.asarray(samples, dtype=float)
    if x.ndim != 1 or x.size < 2:
        raise DomainError("summarize needs at least two samples")
    # sort so the result does not depend on sample order
    x = np.sort(x)
    mean = float(np.mean(x))
    var = float(np.var(x, ddof=1))
    se = math.sqrt(var / x.size)
    return SampleSummary(int(x.size), mean, var, se, mean - Z95 * se, mean + Z95 * se,
                         int(censored_count))


@dataclass(frozen=True)
class TailEstimate:
    k: int
    gamma_hat: float
    ks: np.ndarray
    curve: np.ndarray


def jitter(samples, rng: np.random.Generator) -> np.ndarray:
    """Add U(0,1) noise to integer samples so log-spacings of ties are not zero."""
    x = np.asarray(samples, dtype=float)
    return x + rng.random(x.size)


def hill_curve(samples, k_max: int | None = None) -> np.ndarray:
    """Hill estimates of the tail index for ``k = 1..k_max``; entry ``k-1`` uses the top ``k``."""
    x = np.asarray(samples, dtype=float)
    n = x.size
    if n < 2:
        raise DomainError("Hill estimator needs at least two samples")
    if np.any(x <= 0):
        raise DomainError("Hill estimator needs positive samples")
    k_max = n - 1 if k_max is None else k_max
    if not 1 <= k_max < n:
        raise DomainError(f"k must satisfy 1 <= k < {n}, got {k_max}")
    top = np.log(np.sort(x)[::-1][: k_max + 1])
    ks = np.arange(1, k_max + 1)
    # mean log-excess of the top k over the (k+1)-th largest
    excess = np.cumsum(top[:-1]) / ks - top[1:]
    with np.errstate(divide="ignore"):
        return 1.0 / excess


def hill(samples, k: int) -> TailEstimate:
    """Hill estimate ``k / sum_i log(X_(n-i+1) / X_(n-k))`` with the per-k curve.

    When the threshold ``X_(n-k)`` is tied with the ``k``-th largest value the
    split between tail and body is ambiguous, so ``k`` is reduced (with a
    warning) to the largest value whose threshold lies strictly below the top
    ``k`` samples.
    """
    curve = hill_curve(samples, k)
    top = np.sort(np.asarray(samples, dtype=float))[::-1][: k + 1]
    clean = np.flatnonzero(top[:-1] > top[1:]) + 1
    if clean.size == 0:
        raise DomainError("top order statistics are all tied; jitter integer samples first")
    k_used = int(clean[-1])
    if k_used != k:
        warnings.warn(f"tied order statistics: Hill k reduced from {k} to {k_used}", stacklevel=2)
    return TailEstimate(k_used, float(curve[k_used - 1]), np.arange(1, k + 1), curve)


def hill_window(samples, k_lo: int, k_hi: int) -> float:
    """Average of the Hill curve over ``k_lo <= k <= k_hi``."""
    if not 1 <= k_lo <= k_hi:
        raise DomainError("need 1 <= k_lo <= k_hi")
    curve = hill_curve(samples, k_hi)
    return float(np.mean(curve[k_lo - 1: k_hi]))


@dataclass(frozen=True)
class KSResult:
    distance: float
    critical_1pct: float

    @property
    def rejects(self) -> bool:
        return self.distance >= self.critical_1pct


def ks_two_sample(a, b) -> KSResult:
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.size == 0 or b.size == 0:
        raise DomainError("two-sample KS needs non-empty samples")
    m, n = a.size, b.size
    d = float(ks_2samp(a, b).statistic)
    return KSResult(d, KS_C_1PCT * math.sqrt((m + n) / (m * n)))


@dataclass(frozen=True)
class SurvivalEstimate:
    survived_fraction: float
    stderr: float
    ci95_low: float
    ci95_high: float
    count: int


def extinction_frequency(outcomes, policy: CensorPolicy) -> SurvivalEstimate:
    """Fraction of censored runs, read as survival (explosion) frequency.

    ``outcomes`` is any sequence of objects with a ``censored`` flag or a
    boolean array.  ``policy`` must be the common censoring policy of the runs
    and at least as generous as (10**6 particles, 10**4 time units).
    """
    if policy.max_particles < SURVIVAL_MIN_PARTICLES or policy.max_time < SURVIVAL_MIN_TIME:
        raise DomainError(
            "censoring caps too small to read censored runs as survival: need "
            f">= {SURVIVAL_MIN_PARTICLES} particles and >= {SURVIVAL_MIN_TIME:g} time units")
    flags = getattr(outcomes, "censored", None)
    if flags is None:
        flags = [o if isinstance(o, (bool, np.bool_)) else o.censored for o in outcomes]
    flags = np.asarray(flags, dtype=bool)
    n = flags.size
    if n == 0:
        raise DomainError("no outcomes")
    p = float(flags.mean())
    se = math.sqrt(p * (1 - p) / n)
    return SurvivalEstimate(p, se, max(0.0, p - Z95 * se), min(1.0, p + Z95 * se), n)
