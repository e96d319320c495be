import math

import numpy as np
import pytest

from assassin_sim.analytics import extinction_profile, mean_N
from assassin_sim.ba_engine import DiesAt, Free, sample_batch
from assassin_sim.core import CensorPolicy, DomainError, ModelParams, SeedSpec
from assassin_sim.rumor_engine import (
    FORCED,
    I,
    INFECT,
    R,
    RECOVER,
    S,
    CompletePendant,
    Explicit,
    InitMode,
    RumorConfig,
    init_state,
    read_edge_list,
    run,
    sample_N_n_distribution,
)
from assassin_sim.stats import ks_two_sample

POLICY = CensorPolicy()


def test_init_default_mode():
    st = init_state(RumorConfig(5, 0.3))
    assert list(st.status) == [R, I, S, S, S, S]
    assert st.blamers(1) == frozenset({0})
    assert st.recovery_weight() == 1
    st.audit()


def test_init_single_vertex():
    st = init_state(RumorConfig(1, 0.3))
    assert list(st.status) == [R, I]
    assert st.infection_weight() == 0


def test_init_full_blame():
    st = init_state(RumorConfig(3, 0.3, init_mode=InitMode.FULL_BLAME))
    assert st.blamers(1) == frozenset({0, 2, 3})
    assert st.recovery_weight() == 1
    st.audit()


def test_complete_neighbors():
    cfg = RumorConfig(4, 0.2)
    assert cfg.neighbors(0) == (1,)
    assert cfg.neighbors(1) == (0, 2, 3, 4)
    assert cfg.neighbors(3) == (1, 2, 4)
    assert cfg.scale == 4.0


def test_config_validation(tmp_path):
    with pytest.raises(DomainError):
        RumorConfig(0, 0.2)
    with pytest.raises(DomainError):
        RumorConfig(3, 0.0)
    path_graph = Explicit.from_edges([(0, 1), (1, 2), (2, 3)])
    with pytest.raises(DomainError):
        RumorConfig(4, 0.2, path_graph)
    disconnected = Explicit.from_edges([(0, 1), (2, 3)])
    with pytest.raises(DomainError):
        RumorConfig(3, 0.2, disconnected)
    assert RumorConfig(3, 0.2, path_graph).scale == 1.0


def test_read_edge_list(tmp_path):
    f = tmp_path / "g.txt"
    f.write_text("# a star\n0 1\n\n1 2  # spoke\n1 3\n")
    g = read_edge_list(f)
    assert g.adjacency == ((1,), (0, 2, 3), (1,), (1,))
    bad = tmp_path / "bad.txt"
    bad.write_text("0 1 2\n")
    with pytest.raises(DomainError):
        read_edge_list(bad)
    empty = tmp_path / "empty.txt"
    empty.write_text("# nothing\n")
    with pytest.raises(DomainError):
        read_edge_list(empty)


def _check_trajectory(config, out):
    status = [R, I] + [S] * (config.n - 1)
    last = 0.0
    for t, kind, i, j in out.trajectory:
        assert t >= last
        last = t
        if kind == INFECT:
            assert status[i] == I and status[j] in (S, I)
            assert j in config.neighbors(i)
            status[j] = I
        else:
            assert kind in (RECOVER, FORCED)
            assert status[j] == I
            status[j] = R
    assert I not in status or out.censored
    assert out.n_recovered == status.count(R) - 1


@pytest.mark.parametrize("mode", list(InitMode))
@pytest.mark.parametrize("forced", [None, 0.7])
def test_audited_runs_keep_invariants(mode, forced):
    cfg = RumorConfig(8, 1.5, init_mode=mode)
    for i in range(60):
        out = run(cfg, POLICY, SeedSpec(3, i), forced_root_recovery=forced, record=True, audit=True)
        assert not out.censored
        _check_trajectory(cfg, out)
        if forced is not None:
            rec1 = [e for e in out.trajectory if e[3] == 1 and e[1] != INFECT]
            assert rec1 == [(0.7, FORCED, 1, 1)]


def test_audited_explicit_topology():
    edges = [(0, 1), (1, 2), (2, 3), (3, 4), (4, 1), (2, 5)]
    cfg = RumorConfig(5, 2.0, Explicit.from_edges(edges))
    for i in range(60):
        out = run(cfg, POLICY, SeedSpec(1, i), record=True, audit=True)
        _check_trajectory(cfg, out)


def test_single_vertex_run():
    for i in range(20):
        out = run(RumorConfig(1, 0.7), POLICY, SeedSpec(0, i), record=True)
        assert out.n_recovered == 1
        assert out.trajectory[-1][0] == out.absorption_time
    batch = sample_N_n_distribution(RumorConfig(1, 0.7), 200, POLICY, 0)
    assert batch.histogram() == {1: 200}


def test_forced_at_zero_gives_one():
    batch = sample_N_n_distribution(RumorConfig(50, 0.3), 300, POLICY, 0, forced_root_recovery=0.0)
    assert (batch.n_recovered == 1).all()
    assert (batch.absorption_time == 0.0).all()


def test_two_vertex_exact_mean():
    # first event: root recovery (rate 1) or infection of vertex 2 (rate lam/2)
    lam = 0.5
    batch = sample_N_n_distribution(RumorConfig(2, lam), 10**5, POLICY, 4)
    n = batch.n_recovered
    se = n.std(ddof=1) / math.sqrt(n.size)
    assert abs(n.mean() - (1 + lam) / (1 + lam / 2)) < 3 * se


def test_time_cap_censors():
    batch = sample_N_n_distribution(RumorConfig(30, 0.2), 50, CensorPolicy(10**6, 1e-3), 0)
    assert batch.censored_count > 0
    assert np.isnan(batch.absorption_time[batch.censored]).all()


def test_infection_cap_censors():
    batch = sample_N_n_distribution(RumorConfig(500, 3.0), 50, CensorPolicy(5, 1e4), 0)
    assert batch.censored_count > 0


def test_worker_count_independence():
    cfg = RumorConfig(60, 0.4)
    a = sample_N_n_distribution(cfg, 300, POLICY, 9, workers=1)
    b = sample_N_n_distribution(cfg, 300, POLICY, 9, workers=2)
    assert np.array_equal(a.n_recovered, b.n_recovered)
    assert np.array_equal(a.absorption_time, b.absorption_time, equal_nan=True)


def test_large_n_mean_close_to_limit():
    batch = sample_N_n_distribution(RumorConfig(2000, 0.2), 10**4, POLICY, 1)
    n = batch.n_recovered
    se = n.std(ddof=1) / math.sqrt(n.size)
    # 3 stderr plus an O(1/n) allowance
    assert abs(n.mean() - mean_N(0.2)) < 3 * se + 10 / 2000


def test_forced_recovery_matches_limit_Y():
    cfg = RumorConfig(2000, 0.2)
    rumor = sample_N_n_distribution(cfg, 10**4, POLICY, 2, forced_root_recovery=1.0)
    ba = sample_batch(ModelParams(0.2), DiesAt(1.0), POLICY, 3, 10**4)
    assert not ks_two_sample(rumor.n_recovered, ba.n_born).rejects


def test_supercritical_outbreak_probability_stays_positive():
    # large outbreaks persist with probability near the limit survival probability
    survival = 1.0 - extinction_profile(0.5).values[0]
    for n in (200, 400, 800):
        batch = sample_N_n_distribution(RumorConfig(n, 0.5), 4000, POLICY, 5)
        hit = batch.n_recovered >= 0.05 * n
        p, se = hit.mean(), math.sqrt(hit.mean() * (1 - hit.mean()) / hit.size)
        assert p > 0
        assert p > survival - 3 * se
