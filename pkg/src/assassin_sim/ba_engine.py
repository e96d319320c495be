"""Exact event-driven sampler of the birth-and-assassination process.

Each particle born at ``b`` and put at risk at ``r`` (its parent's death time)
dies at ``d = r + K`` and gives birth at the points of a rate-``lam`` Poisson
process on ``[b, d]``; its children are at risk from ``d``.  Particles are
expanded in order of at-risk time, so a particle cap truncates the latest
subtrees first.
"""
from __future__ import annotations

import heapq
import math
from dataclasses import dataclass
from typing import Union

import numpy as np
from numba import njit

from .core import (
    BAOutcome,
    CensorPolicy,
    DomainError,
    KIND_DETERMINISTIC,
    KIND_EXPONENTIAL,
    ModelParams,
    SeedSpec,
    map_chunks,
    replica_rng,
    worker_count,
)


# Root conditioning ----------------------------------------------------------

@dataclass(frozen=True)
class Free:
    """Ancestor at risk from time 0 (the unconditioned process, N)."""

    def spec(self) -> str:
        return "free"


@dataclass(frozen=True)
class AtRiskAt:
    """Ancestor cannot die before ``t``; its killing clock starts at ``t`` (X(t))."""

    t: float

    def __post_init__(self):
        if not (math.isfinite(self.t) and self.t >= 0):
            raise DomainError(f"root time must be finite and >= 0, got {self.t!r}")

    def spec(self) -> str:
        return f"at-risk-at={self.t!r}"


@dataclass(frozen=True)
class DiesAt:
    """Ancestor dies exactly at ``t`` (Y(t))."""

    t: float

    def __post_init__(self):
        if not (math.isfinite(self.t) and self.t >= 0):
            raise DomainError(f"root time must be finite and >= 0, got {self.t!r}")

    def spec(self) -> str:
        return f"dies-at={self.t!r}"


RootCondition = Union[Free, AtRiskAt, DiesAt]

_ROOT_FREE, _ROOT_AT_RISK, _ROOT_DIES = 0, 1, 2


def parse_root(text: str) -> RootCondition:
    if text == "free":
        return Free()
    for prefix, cls in (("at-risk-at=", AtRiskAt), ("dies-at=", DiesAt)):
        if text.startswith(prefix):
            try:
                value = float(text[len(prefix):])
            except ValueError:
                break
            return cls(value)
    raise DomainError(f"malformed root condition {text!r}")


def _root_args(root: RootCondition) -> tuple[int, float]:
    if isinstance(root, Free):
        return _ROOT_FREE, 0.0
    if isinstance(root, AtRiskAt):
        return _ROOT_AT_RISK, float(root.t)
    if isinstance(root, DiesAt):
        return _ROOT_DIES, float(root.t)
    raise DomainError(f"unknown root condition {root!r}")


# Compiled kernel ------------------------------------------------------------

@njit(cache=True)
def _draw_killing(gen, kind, p1, p2):
    if kind == KIND_EXPONENTIAL:
        return gen.standard_exponential() / p1
    if kind == KIND_DETERMINISTIC:
        return p1
    return gen.gamma(p1, 1.0 / p2)


@njit(cache=True)
def _explore(gen, lam, kind, p1, p2, root_kind, root_t, max_particles, max_time):
    """Returns (n_born, censored, births, deaths); deaths are nan if unresolved."""
    cap = 64
    births = np.empty(cap)
    deaths = np.empty(cap)
    births[0] = 0.0
    deaths[0] = np.nan
    n_born = 1
    censored = False
    heap = [(root_t if root_kind == _ROOT_AT_RISK else 0.0, 0)]
    while len(heap) > 0:
        at_risk, idx = heapq.heappop(heap)
        if idx == 0 and root_kind == _ROOT_DIES:
            d = root_t
        else:
            d = at_risk + _draw_killing(gen, kind, p1, p2)
        if d > max_time:
            censored = True
            break
        deaths[idx] = d
        t = births[idx]
        while True:
            t += gen.standard_exponential() / lam
            if t > d:
                break
            if n_born >= max_particles:
                censored = True
                break
            if n_born == cap:
                cap *= 2
                nb = np.empty(cap)
                nd = np.empty(cap)
                nb[:n_born] = births[:n_born]
                nd[:n_born] = deaths[:n_born]
                births = nb
                deaths = nd
            births[n_born] = t
            deaths[n_born] = np.nan
            heapq.heappush(heap, (d, n_born))
            n_born += 1
        if censored:
            break
    return n_born, censored, births[:n_born], deaths[:n_born]


@njit(cache=True)
def _event_order(births, deaths):
    """Sorted (times, kinds) of non-root births (kind 0) and resolved deaths (kind 1)."""
    b = np.sort(births[1:])
    d = np.sort(deaths[~np.isnan(deaths)])
    nb, nd = b.shape[0], d.shape[0]
    times = np.empty(nb + nd)
    kinds = np.empty(nb + nd, dtype=np.int8)
    i = j = 0
    for k in range(nb + nd):
        # ties go to the birth
        if j == nd or (i < nb and b[i] <= d[j]):
            times[k] = b[i]
            kinds[k] = 0
            i += 1
        else:
            times[k] = d[j]
            kinds[k] = 1
            j += 1
    return times, kinds


@njit(cache=True)
def _peak_alive(births, deaths):
    times, kinds = _event_order(births, deaths)
    alive = 1
    peak = 1
    for k in kinds:
        if k == 0:
            alive += 1
            if alive > peak:
                peak = alive
        else:
            alive -= 1
    return peak


@njit(cache=True)
def _run_one(gen, lam, kind, p1, p2, root_kind, root_t, max_particles, max_time):
    n_born, censored, births, deaths = _explore(
        gen, lam, kind, p1, p2, root_kind, root_t, max_particles, max_time
    )
    ext = np.nan
    if not censored:
        ext = np.max(deaths)
    return n_born, censored, ext, _peak_alive(births, deaths)


# Public API -----------------------------------------------------------------

def _kernel_args(params: ModelParams, root: RootCondition, policy: CensorPolicy) -> tuple:
    if not isinstance(params, ModelParams):
        raise DomainError("params must be a ModelParams")
    kind, p1, p2 = params.killing.kernel_args()
    root_kind, root_t = _root_args(root)
    return (float(params.lam), kind, p1, p2, root_kind, root_t,
            int(policy.max_particles), float(policy.max_time))


def sample_ba(params: ModelParams, root: RootCondition, policy: CensorPolicy,
              seed: SeedSpec) -> BAOutcome:
    """Draw one realization of the process from the replica stream ``seed``."""
    args = _kernel_args(params, root, policy)
    n_born, censored, ext, peak = _run_one(seed.generator(), *args)
    return BAOutcome(
        n_born=int(n_born),
        extinction_time=None if censored else float(ext),
        censored=bool(censored),
        max_alive=int(peak),
    )


BIRTH = "Birth"
DEATH = "Death"


@dataclass(frozen=True)
class Trajectory:
    """Time-ordered ``(time, kind, alive_after)`` events; the ancestor is alive at start."""

    events: tuple[tuple[float, str, int], ...]

    @property
    def alive_counts(self) -> np.ndarray:
        return np.array([e[2] for e in self.events], dtype=np.int64)


def sample_trajectory(params: ModelParams, root: RootCondition, policy: CensorPolicy,
                      seed: SeedSpec) -> Trajectory:
    """Event log of the realization that :func:`sample_ba` draws for the same seed."""
    args = _kernel_args(params, root, policy)
    _, _, births, deaths = _explore(seed.generator(), *args)
    times, kinds = _event_order(births, deaths)
    alive = 1 + np.cumsum(np.where(kinds == 0, 1, -1))
    events = tuple(
        (float(t), BIRTH if k == 0 else DEATH, int(a)) for t, k, a in zip(times, kinds, alive)
    )
    return Trajectory(events)


@dataclass(frozen=True)
class BABatch:
    """Columnar outcomes of replicas ``0..len-1``; ``extinction_time`` is nan when censored."""

    n_born: np.ndarray
    extinction_time: np.ndarray
    censored: np.ndarray
    max_alive: np.ndarray

    def __len__(self) -> int:
        return len(self.n_born)

    def outcomes(self) -> list[BAOutcome]:
        return [
            BAOutcome(int(n), None if c else float(e), bool(c), int(m))
            for n, e, c, m in zip(self.n_born, self.extinction_time, self.censored, self.max_alive)
        ]


def _batch_chunk(start, stop, args, master_seed):
    m = stop - start
    n_born = np.empty(m, dtype=np.int64)
    ext = np.empty(m)
    cens = np.empty(m, dtype=bool)
    peak = np.empty(m, dtype=np.int64)
    for i in range(m):
        n_born[i], cens[i], ext[i], peak[i] = _run_one(replica_rng(master_seed, start + i), *args)
    return n_born, ext, cens, peak


def sample_batch(params: ModelParams, root: RootCondition, policy: CensorPolicy,
                 master_seed: int, replicas: int, workers: int | None = None) -> BABatch:
    """Replicas ``0..replicas-1`` of :func:`sample_ba`, identical for any worker count."""
    if replicas < 1:
        raise DomainError("replicas must be >= 1")
    SeedSpec(master_seed, 0)
    args = _kernel_args(params, root, policy)
    parts = map_chunks(_batch_chunk, replicas, worker_count(workers), args, master_seed)
    cols = [np.concatenate([p[i] for p in parts]) for i in range(4)]
    return BABatch(*cols)


def sample_Y_mean(params: ModelParams, t: float, replicas: int, policy: CensorPolicy,
                  master_seed: int, workers: int | None = None):
    """Monte Carlo estimate of E Y(t), the progeny count when the ancestor dies at ``t``.

    Returns a :class:`~assassin_sim.stats.SampleSummary`.
    """
    from .stats import summarize

    batch = sample_batch(params, DiesAt(t), policy, master_seed, replicas, workers)
    return summarize(batch.n_born.astype(float), int(batch.censored.sum()))
