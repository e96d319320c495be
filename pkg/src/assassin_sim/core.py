"""Shared domain types: model parameters, killing distributions, censoring and seeding."""
from __future__ import annotations

import math
import os
from dataclasses import dataclass
from typing import Union

import numpy as np


class DomainError(ValueError):
    """Input outside the mathematical domain of an operation."""


class InfiniteMomentError(ArithmeticError):
    """Requested moment is infinite.

    ``order`` is the smallest moment order whose finiteness condition fails.
    """

    def __init__(self, message: str, order: int):
        super().__init__(message)
        self.order = order


class NonConvergenceError(ArithmeticError):
    """Fixed-point iteration hit its cap before reaching tolerance."""

    def __init__(self, message: str, residual: float, iterations: int):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations


def _positive(name: str, value: float) -> None:
    if not (isinstance(value, (int, float)) and math.isfinite(value) and value > 0):
        raise DomainError(f"{name} must be a positive finite number, got {value!r}")


# Killing distributions ------------------------------------------------------

# integer codes consumed by the compiled sampler
KIND_EXPONENTIAL = 0
KIND_DETERMINISTIC = 1
KIND_GAMMA = 2


@dataclass(frozen=True)
class Exponential:
    rate: float = 1.0

    def __post_init__(self):
        _positive("rate", self.rate)

    @property
    def mgf_domain(self) -> float:
        return self.rate

    def mgf(self, u: float) -> float:
        if u >= self.rate:
            return math.inf
        return self.rate / (self.rate - u)

    def scaled(self, factor: float) -> "Exponential":
        """Distribution of ``factor * K``."""
        return Exponential(self.rate / factor)

    def kernel_args(self) -> tuple[int, float, float]:
        return KIND_EXPONENTIAL, self.rate, 0.0

    def spec(self) -> str:
        return f"exp:{self.rate!r}"


@dataclass(frozen=True)
class Deterministic:
    value: float = 1.0

    def __post_init__(self):
        _positive("value", self.value)

    @property
    def mgf_domain(self) -> float:
        return math.inf

    def mgf(self, u: float) -> float:
        x = u * self.value
        return math.exp(x) if x < 709.0 else math.inf

    def scaled(self, factor: float) -> "Deterministic":
        return Deterministic(self.value * factor)

    def kernel_args(self) -> tuple[int, float, float]:
        return KIND_DETERMINISTIC, self.value, 0.0

    def spec(self) -> str:
        return f"det:{self.value!r}"


@dataclass(frozen=True)
class Gamma:
    shape: float
    rate: float

    def __post_init__(self):
        _positive("shape", self.shape)
        _positive("rate", self.rate)

    @property
    def mgf_domain(self) -> float:
        return self.rate

    def mgf(self, u: float) -> float:
        if u >= self.rate:
            return math.inf
        return (self.rate / (self.rate - u)) ** self.shape

    def scaled(self, factor: float) -> "Gamma":
        return Gamma(self.shape, self.rate / factor)

    def kernel_args(self) -> tuple[int, float, float]:
        return KIND_GAMMA, self.shape, self.rate

    def spec(self) -> str:
        return f"gamma:{self.shape!r},{self.rate!r}"


KillingDist = Union[Exponential, Deterministic, Gamma]


def mgf(dist: KillingDist, u: float) -> float:
    """Moment generating function ``E exp(u K)``; ``inf`` outside the domain."""
    if not u >= 0:
        raise DomainError(f"mgf argument must be >= 0, got {u!r}")
    return dist.mgf(u)


def parse_killing(text: str) -> KillingDist:
    """Parse ``exp:MU``, ``det:K`` or ``gamma:S,R``."""
    kind, sep, rest = text.partition(":")
    if not sep:
        raise DomainError(f"malformed killing spec {text!r}")
    try:
        values = [float(v) for v in rest.split(",")]
    except ValueError as exc:
        raise DomainError(f"malformed killing spec {text!r}") from exc
    if kind == "exp" and len(values) == 1:
        return Exponential(values[0])
    if kind == "det" and len(values) == 1:
        return Deterministic(values[0])
    if kind == "gamma" and len(values) == 2:
        return Gamma(*values)
    raise DomainError(f"malformed killing spec {text!r}")


# Model, censoring, outcomes -------------------------------------------------


@dataclass(frozen=True)
class ModelParams:
    lam: float
    killing: KillingDist = Exponential(1.0)

    def __post_init__(self):
        _positive("lambda", self.lam)


@dataclass(frozen=True)
class CensorPolicy:
    max_particles: int = 10**6
    max_time: float = 1e4

    def __post_init__(self):
        if not (isinstance(self.max_particles, (int, np.integer)) and self.max_particles > 0):
            raise DomainError(f"max_particles must be a positive integer, got {self.max_particles!r}")
        _positive("max_time", self.max_time)


@dataclass(frozen=True)
class BAOutcome:
    n_born: int
    extinction_time: float | None
    censored: bool
    max_alive: int


@dataclass(frozen=True)
class SeedSpec:
    master_seed: int
    replica_index: int = 0

    def __post_init__(self):
        if not 0 <= self.master_seed < 2**64:
            raise DomainError("master_seed must fit in an unsigned 64-bit integer")
        if self.replica_index < 0:
            raise DomainError("replica_index must be non-negative")

    def generator(self) -> np.random.Generator:
        """Replica-local stream, a pure function of (master_seed, replica_index)."""
        return replica_rng(self.master_seed, self.replica_index)


def replica_rng(master_seed: int, replica_index: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([master_seed, replica_index])))


def scale_to_unit(lam: float, mu: float) -> tuple[float, float]:
    """Map intensities (lam, mu) to (lam/mu, 1); returns ``(lam_unit, time_factor)``.

    Progeny counts are unchanged; times of the unit process are ``mu`` times
    those of the original.
    """
    _positive("lambda", lam)
    _positive("mu", mu)
    return lam / mu, mu


# Worker fan-out -------------------------------------------------------------

THREADS_ENV = "ASSASSIN_SIM_THREADS"


def worker_count(requested: int | None = None) -> int:
    """Number of worker processes; ``ASSASSIN_SIM_THREADS`` overrides, 0 means auto."""
    if requested is None:
        raw = os.environ.get(THREADS_ENV, "1")
        try:
            requested = int(raw)
        except ValueError:
            raise DomainError(f"{THREADS_ENV} must be an integer, got {raw!r}") from None
    if requested < 0:
        raise DomainError("worker count must be >= 0")
    if requested == 0:
        return os.cpu_count() or 1
    return requested


def replica_chunks(replicas: int, workers: int) -> list[tuple[int, int]]:
    """Split ``range(replicas)`` into contiguous ``(start, stop)`` blocks."""
    if replicas <= 0:
        return []
    n = max(1, min(workers * 4, replicas)) if workers > 1 else 1
    bounds = np.linspace(0, replicas, n + 1).round().astype(int)
    return [(int(a), int(b)) for a, b in zip(bounds[:-1], bounds[1:]) if b > a]


def map_chunks(fn, replicas: int, workers: int, *args):
    """Run ``fn(start, stop, *args)`` over replica blocks; results ordered by start.

    Streams are keyed by replica index, so the concatenated result does not
    depend on ``workers``.
    """
    chunks = replica_chunks(replicas, workers)
    if workers <= 1 or len(chunks) <= 1:
        return [fn(a, b, *args) for a, b in chunks]
    from concurrent.futures import ProcessPoolExecutor

    with ProcessPoolExecutor(max_workers=workers) as pool:
        futures = [pool.submit(fn, a, b, *args) for a, b in chunks]
        return [f.result() for f in futures]
