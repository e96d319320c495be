"""Exact CTMC simulation of the rumor scotching process.

Vertices are S, I or R.  An I vertex ``i`` infects each adjacent non-R vertex
``j`` at rate ``lam / infection_scale``; the event marks ``j`` as I and adds
``i`` to its blamer set ``A_j`` (re-infecting an I vertex only grows ``A_j``).
An I vertex ``j`` recovers at rate equal to the number of recovered vertices in
``A_j``; on recovery ``A_j`` is emptied.

Vertex 0 is an auxiliary vertex, recovered from the start.  Under the default
initialization vertex 1 is infected with ``A_1 = {0}`` and everything else is
susceptible.
"""
from __future__ import annotations

import enum
import math
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core import CensorPolicy, DomainError, SeedSpec, map_chunks, replica_rng, worker_count

S, I, R = 0, 1, 2
STATUS_NAMES = "SIR"


class InitMode(enum.Enum):
    PAPER = "paper"
    FULL_BLAME = "full-blame"


@dataclass(frozen=True)
class CompletePendant:
    """Complete graph on ``1..n`` plus the pendant edge ``(0, 1)``."""


@dataclass(frozen=True)
class Explicit:
    """Arbitrary graph on vertices ``0..n`` given by adjacency tuples."""

    adjacency: tuple[tuple[int, ...], ...]

    @classmethod
    def from_edges(cls, edges, n_vertices: int | None = None) -> "Explicit":
        edges = [(int(u), int(v)) for u, v in edges]
        if n_vertices is None:
            n_vertices = 1 + max((max(e) for e in edges), default=1)
        nbrs = [set() for _ in range(max(n_vertices, 2))]
        for u, v in edges:
            if u < 0 or v < 0:
                raise DomainError(f"negative vertex id in edge ({u}, {v})")
            if u == v:
                continue
            nbrs[u].add(v)
            nbrs[v].add(u)
        return cls(tuple(tuple(sorted(s)) for s in nbrs))

    @property
    def n_vertices(self) -> int:
        return len(self.adjacency)

    def is_connected(self) -> bool:
        seen = {0}
        queue = deque([0])
        while queue:
            u = queue.popleft()
            for v in self.adjacency[u]:
                if v not in seen:
                    seen.add(v)
                    queue.append(v)
        return len(seen) == self.n_vertices


def read_edge_list(path) -> Explicit:
    """Parse an undirected edge list: one ``u v`` pair per line, 0-based ids.

    Blank lines and ``#`` comments are ignored.
    """
    edges = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 2:
            raise DomainError(f"{path}:{lineno}: expected 'u v', got {line!r}")
        try:
            edges.append((int(parts[0]), int(parts[1])))
        except ValueError:
            raise DomainError(f"{path}:{lineno}: vertex ids must be integers") from None
    if not edges:
        raise DomainError(f"{path}: no edges")
    return Explicit.from_edges(edges)


Topology = CompletePendant | Explicit


@dataclass(frozen=True)
class RumorConfig:
    n: int
    lam: float
    topology: Topology = field(default_factory=CompletePendant)
    infection_scale: float | None = None
    init_mode: InitMode = InitMode.PAPER

    def __post_init__(self):
        if not (isinstance(self.n, (int, np.integer)) and self.n >= 1):
            raise DomainError(f"n must be a positive integer, got {self.n!r}")
        if not (math.isfinite(self.lam) and self.lam > 0):
            raise DomainError(f"lambda must be positive, got {self.lam!r}")
        if self.infection_scale is not None and not self.infection_scale > 0:
            raise DomainError("infection_scale must be positive")
        if isinstance(self.topology, Explicit):
            if self.topology.n_vertices != self.n + 1:
                raise DomainError(
                    f"explicit topology has {self.topology.n_vertices} vertices, expected n+1={self.n + 1}")
            if not self.topology.is_connected():
                raise DomainError("explicit topology is not connected")
        elif not isinstance(self.topology, CompletePendant):
            raise DomainError(f"unknown topology {self.topology!r}")

    @property
    def complete(self) -> bool:
        return isinstance(self.topology, CompletePendant)

    @property
    def scale(self) -> float:
        if self.infection_scale is not None:
            return float(self.infection_scale)
        return float(self.n) if self.complete else 1.0

    def neighbors(self, v: int):
        if not self.complete:
            return self.topology.adjacency[v]
        if v == 0:
            return (1,)
        rest = (u for u in range(1, self.n + 1) if u != v)
        return (0, *rest) if v == 1 else tuple(rest)


class RumorState:
    """Statuses, blamer sets and the incremental rate bookkeeping of one run.

    Under :attr:`InitMode.FULL_BLAME` blamer sets are never stored: ``A_v``
    equals the neighborhood of ``v`` until ``v`` recovers, and infections
    cannot add to it.
    """

    def __init__(self, config: RumorConfig):
        self.config = config
        n = config.n
        self.full_blame = config.init_mode is InitMode.FULL_BLAME
        self.status = [S] * (n + 1)
        self.status[0] = R
        self.status[1] = I
        # explicit blamer sets and their reverse index, default init only
        self._blamers: dict[int, set[int]] = {}
        self._holders: dict[int, set[int]] = {}
        self.rate = [0] * (n + 1)
        self.infected = [1]
        self._ipos = {1: 0}
        self.n_infected_total = 1
        # non-R vertices among 1..n
        self.n_non_r = n
        if config.complete:
            self.targets = None
        else:
            self.targets = [0] * (n + 1)
            self.targets[1] = self._count_targets(1)
        if self.full_blame:
            self.rate[1] = sum(1 for u in config.neighbors(1) if self.status[u] == R)
        else:
            self._blamers[1] = {0}
            self._holders[0] = {1}
            self.rate[1] = 1

    # views ---------------------------------------------------------------

    def blamers(self, v: int) -> frozenset[int]:
        if self.full_blame:
            return frozenset() if self.status[v] == R else frozenset(self.config.neighbors(v))
        return frozenset(self._blamers.get(v, ()))

    def holders_of(self, v: int) -> frozenset[int]:
        """Vertices whose blamer set contains ``v``."""
        if self.full_blame:
            return frozenset(u for u in self.config.neighbors(v) if self.status[u] != R)
        return frozenset(self._holders.get(v, ()))

    @property
    def n_infected_now(self) -> int:
        return len(self.infected)

    def n_recovered(self) -> int:
        return self.config.n - self.n_non_r

    def _count_targets(self, v: int) -> int:
        return sum(1 for u in self.config.topology.adjacency[v] if self.status[u] != R)

    # rates ---------------------------------------------------------------

    def infection_weight(self) -> int:
        """Number of (I vertex, adjacent non-R vertex) pairs."""
        if self.config.complete:
            return len(self.infected) * (self.n_non_r - 1)
        return sum(self.targets[i] for i in self.infected)

    def recovery_weight(self, skip: int = -1) -> int:
        return sum(self.rate[j] for j in self.infected if j != skip)

    def audit(self) -> None:
        """Recompute every rate from scratch and compare with the bookkeeping."""
        cfg = self.config
        for v in range(cfg.n + 1):
            if self.status[v] == I:
                expect = sum(1 for u in self.blamers(v) if self.status[u] == R)
                if self.rate[v] != expect:
                    raise AssertionError(f"recovery rate of {v}: {self.rate[v]} != {expect}")
                if not cfg.complete and self.targets[v] != self._count_targets(v):
                    raise AssertionError(f"target count of {v} out of sync")
        if sorted(self.infected) != [v for v in range(cfg.n + 1) if self.status[v] == I]:
            raise AssertionError("infected list out of sync")
        if self.n_non_r != sum(1 for v in range(1, cfg.n + 1) if self.status[v] != R):
            raise AssertionError("non-R count out of sync")
        pairs = sum(1 for i in self.infected for j in cfg.neighbors(i) if self.status[j] != R)
        if pairs != self.infection_weight():
            raise AssertionError(f"infection pairs {self.infection_weight()} != {pairs}")

    # transitions ---------------------------------------------------------

    def infect(self, i: int, j: int) -> bool:
        """Apply ``i -> j``; returns True if ``j`` was susceptible."""
        fresh = self.status[j] == S
        if fresh:
            self.status[j] = I
            self._ipos[j] = len(self.infected)
            self.infected.append(j)
            self.n_infected_total += 1
            if not self.config.complete:
                self.targets[j] = self._count_targets(j)
            if self.full_blame:
                self.rate[j] = sum(1 for u in self.config.neighbors(j) if self.status[u] == R)
        if not self.full_blame:
            a = self._blamers.setdefault(j, set())
            if i not in a:
                a.add(i)
                self._holders.setdefault(i, set()).add(j)
        return fresh

    def recover(self, j: int) -> None:
        self.status[j] = R
        pos = self._ipos.pop(j)
        last = self.infected.pop()
        if last != j:
            self.infected[pos] = last
            self._ipos[last] = pos
        self.rate[j] = 0
        if j > 0:
            self.n_non_r -= 1
        if not self.config.complete:
            for u in self.config.topology.adjacency[j]:
                if self.status[u] == I:
                    self.targets[u] -= 1
        if self.full_blame:
            if self.config.complete:
                bumped = self.infected
            else:
                bumped = [u for u in self.config.topology.adjacency[j] if self.status[u] == I]
            for u in bumped:
                self.rate[u] += 1
            return
        for u in self._holders.get(j, ()):
            if self.status[u] == I:
                self.rate[u] += 1
        for b in self._blamers.pop(j, ()):
            self._holders[b].discard(j)

    def pick_infection(self, u: float, gen: np.random.Generator) -> tuple[int, int]:
        """Uniform (infector, target) pair; ``u`` is uniform on [0, infection_weight)."""
        if self.config.complete:
            # every I vertex has the same number of targets on the complete graph
            i = self.infected[min(int(u // (self.n_non_r - 1)), len(self.infected) - 1)]
            n, status = self.config.n, self.status
            while True:
                j = 1 + int(gen.random() * n)
                if j != i and status[j] != R:
                    return i, j
        for i in self.infected:
            c = self.targets[i]
            if u < c:
                k = int(u)
                for j in self.config.topology.adjacency[i]:
                    if self.status[j] != R:
                        if k == 0:
                            return i, j
                        k -= 1
            u -= c
        i = self.infected[-1]
        return i, next(j for j in self.config.topology.adjacency[i] if self.status[j] != R)

    def pick_recovery(self, u: float, skip: int = -1) -> int:
        last = -1
        for j in self.infected:
            if j == skip:
                continue
            r = self.rate[j]
            if u < r:
                return j
            u -= r
            if r:
                last = j
        return last


def init_state(config: RumorConfig) -> RumorState:
    return RumorState(config)


@dataclass(frozen=True)
class RumorOutcome:
    n_recovered: int
    absorption_time: float | None
    censored: bool
    trajectory: tuple | None = None


INFECT, RECOVER, FORCED = "infect", "recover", "forced-recover"


def run(config: RumorConfig, policy: CensorPolicy, seed: SeedSpec,
        forced_root_recovery: float | None = None, record: bool = False,
        audit: bool = False) -> RumorOutcome:
    """Simulate until no vertex is infected or a cap is hit.

    With ``forced_root_recovery=t`` vertex 1 has no stochastic recovery clock
    and recovers at exactly time ``t`` (sampling ``Y_n(t)``).
    """
    return _run(config, policy, seed.generator(), forced_root_recovery, record, audit)


def _run(config, policy, gen, forced, record, audit):
    if forced is not None and not (math.isfinite(forced) and forced >= 0):
        raise DomainError(f"forced recovery time must be >= 0, got {forced!r}")
    state = RumorState(config)
    rate_per_pair = config.lam / config.scale
    skip = 1 if forced is not None else -1
    log = [] if record else None
    now = 0.0
    censored = False
    while state.infected:
        w_inf = state.infection_weight()
        w_rec = state.recovery_weight(skip)
        total = rate_per_pair * w_inf + w_rec
        dt = gen.standard_exponential() / total if total > 0 else math.inf
        if skip == 1 and now + dt >= forced:
            now = forced
            state.recover(1)
            skip = -1
            if log is not None:
                log.append((now, FORCED, 1, 1))
        else:
            now += dt
            if now > policy.max_time:
                censored = True
                break
            u = gen.random() * total
            if u < rate_per_pair * w_inf:
                i, j = state.pick_infection(u / rate_per_pair, gen)
                if state.status[j] == S and state.n_infected_total >= policy.max_particles:
                    censored = True
                    break
                state.infect(i, j)
                if log is not None:
                    log.append((now, INFECT, i, j))
            else:
                j = state.pick_recovery(u - rate_per_pair * w_inf, skip)
                state.recover(j)
                if log is not None:
                    log.append((now, RECOVER, j, j))
        if audit:
            state.audit()
    return RumorOutcome(
        n_recovered=state.n_recovered(),
        absorption_time=None if censored else now,
        censored=censored,
        trajectory=tuple(log) if log is not None else None,
    )


@dataclass(frozen=True)
class RumorBatch:
    n_recovered: np.ndarray
    absorption_time: np.ndarray
    censored: np.ndarray

    def __len__(self) -> int:
        return len(self.n_recovered)

    @property
    def censored_count(self) -> int:
        return int(self.censored.sum())

    def histogram(self) -> dict[int, int]:
        values, counts = np.unique(self.n_recovered, return_counts=True)
        return {int(v): int(c) for v, c in zip(values, counts)}


def _batch_chunk(start, stop, config, policy, master_seed, forced):
    m = stop - start
    nrec = np.empty(m, dtype=np.int64)
    times = np.empty(m)
    cens = np.empty(m, dtype=bool)
    for k in range(m):
        out = _run(config, policy, replica_rng(master_seed, start + k), forced, False, False)
        nrec[k] = out.n_recovered
        times[k] = np.nan if out.censored else out.absorption_time
        cens[k] = out.censored
    return nrec, times, cens


def sample_N_n_distribution(config: RumorConfig, replicas: int, policy: CensorPolicy,
                            master_seed: int, forced_root_recovery: float | None = None,
                            workers: int | None = None) -> RumorBatch:
    """Replicas ``0..replicas-1`` of :func:`run`, identical for any worker count."""
    if replicas < 1:
        raise DomainError("replicas must be >= 1")
    SeedSpec(master_seed, 0)
    parts = map_chunks(_batch_chunk, replicas, worker_count(workers),
                       config, policy, master_seed, forced_root_recovery)
    return RumorBatch(*(np.concatenate([p[i] for p in parts]) for i in range(3)))
