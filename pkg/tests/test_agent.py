import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.stats import entropy

from aif_fl import agent as aif
from aif_fl.agent import (
    CONFIG_GRID,
    ConfigPoint,
    MetricBins,
    ObservationRecord,
    PreferenceVector,
    SloOutcome,
    SloSpec,
)
from aif_fl.bn_core import BayesNet, Cpd, Dag, Variable
from aif_fl.bn_learn import HistoryDataset, fit_bayesian

SLO = SloSpec(2.0, 0.97)
PREFS = aif.make_preferences()
BS = Variable("batch_size", 5, "configuration")
LR = Variable("learning_rate", 4, "configuration")
TIME = Variable("time_ok", 2, "slo")
PERF = Variable("perf_ok", 2, "slo")


def agent_net(edges, rows=()):
    variables = aif.agent_variables()
    data = HistoryDataset(variables, np.array(rows, dtype=np.int64).reshape(-1, len(variables)))
    return fit_bayesian(Dag(variables, frozenset(edges)), data if len(data) else None, 1.0)


def obs(bs, lr, dur, acc, time_ok, perf_ok, rnd=1):
    return ObservationRecord(ConfigPoint(bs, lr), MetricBins(dur, acc), SloOutcome(time_ok, perf_ok), rnd)


def two_state_net():
    """One binary metric m drives time_ok with A = [[0.8, 0.3], [0.2, 0.7]]; perf always met."""
    m = Variable("m", 2, "system")
    dag = Dag((BS, LR, m, TIME, PERF), frozenset({("m", "time_ok")}))
    cpds = {
        "batch_size": Cpd(BS, (), np.ones((5, 1))),
        "learning_rate": Cpd(LR, (), np.ones((4, 1))),
        "m": Cpd.from_probabilities(m, (), [[0.5], [0.5]]),
        "time_ok": Cpd.from_probabilities(TIME, (m,), [[0.8, 0.3], [0.2, 0.7]]),
        "perf_ok": Cpd.from_probabilities(PERF, (), [[0.0], [1.0]]),
    }
    return BayesNet(dag, cpds)


# --- preferences and metrics ---------------------------------------------


def test_make_preferences_values():
    p = np.exp(PREFS.log_prefs)
    np.testing.assert_allclose(p, [1e-6, 9.99e-4, 9.99e-4, 0.998001], rtol=1e-12)
    assert PREFS.log_prefs[3] == pytest.approx(-0.002001, abs=1e-6)
    assert p.sum() == pytest.approx(1.0, abs=1e-12)
    assert np.argmax(p) == SloOutcome(1, 1).index


def test_make_preferences_uniform_and_scale():
    u = aif.make_preferences((0.5, 0.5), (0.5, 0.5))
    np.testing.assert_allclose(u.log_prefs, math.log(0.25))
    assert aif.make_preferences((0.01, 9.99), (0.001, 0.999)) == PREFS
    with pytest.raises(ValueError):
        aif.make_preferences((0.0, 1.0), (0.5, 0.5))


def test_discretize_metrics():
    assert aif.discretize_metrics(1.0, 0.5, SLO).duration_bin == 1
    assert aif.discretize_metrics(2.0, 0.5, SLO).duration_bin == 1
    assert aif.discretize_metrics(0.9, 0.5, SLO).duration_bin == 0
    assert aif.discretize_metrics(5.0, 0.5, SLO).duration_bin == 3
    assert aif.discretize_metrics(1.0, 0.97, SLO).accuracy_bin == 2
    assert aif.discretize_metrics(1.0, 0.93, SLO).accuracy_bin == 1
    assert aif.discretize_metrics(1.0, 0.5, SLO).accuracy_bin == 0


def test_outcome_indexing():
    assert [SloOutcome.from_index(i) for i in range(4)] == [SloOutcome(0, 0), SloOutcome(0, 1), SloOutcome(1, 0), SloOutcome(1, 1)]


# --- EFE terms -------------------------------------------------------------


def mutual_information(q, A):
    joint = A * q[None, :]
    return entropy(joint.sum(axis=1)) + entropy(q) - entropy(joint.reshape(-1))


def test_information_gain_examples():
    q = np.array([0.5, 0.5])
    assert aif.information_gain(q, np.eye(2))[0] == pytest.approx(math.log(2), abs=1e-12)
    assert aif.information_gain(q, np.array([[0.6, 0.6], [0.4, 0.4]]))[0] == pytest.approx(0.0, abs=1e-12)
    A = np.array([[0.8, 0.3], [0.2, 0.7]])
    ig, p_o, post = aif.information_gain(q, A)
    assert ig == pytest.approx(mutual_information(q, A), abs=1e-12)
    assert ig == pytest.approx(0.1325, abs=1e-4)
    np.testing.assert_allclose(p_o, [0.55, 0.45])
    assert entropy(post[0], q) == pytest.approx(0.1072, abs=1e-4)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_information_gain_properties(seed):
    rng = np.random.default_rng(seed)
    n_s = int(rng.integers(2, 13))
    q = rng.dirichlet(np.ones(n_s))
    A = rng.dirichlet(np.ones(4), size=n_s).T
    ig, p_o, post = aif.information_gain(q, A)
    assert ig == pytest.approx(mutual_information(q, A), abs=1e-9)
    assert -1e-12 <= ig <= min(entropy(q), math.log(4)) + 1e-9
    # expected information gain is the p_o-weighted mean of per-outcome surprises
    assert ig == pytest.approx(sum(p_o[o] * entropy(post[o], q) for o in range(4)), abs=1e-9)


def test_pragmatic_value():
    single = PreferenceVector(np.log([0.001, 0.999]))
    val = aif.pragmatic_value(np.array([0.5, 0.5]), single)
    assert val == pytest.approx(0.5 * math.log(0.001) + 0.5 * math.log(0.999))
    assert val == pytest.approx(-3.4544, abs=1e-4)
    assert aif.pragmatic_value(np.array([0, 0, 0, 1.0]), PREFS) == pytest.approx(math.log(0.998001))
    uniform = aif.make_preferences((1, 1), (1, 1))
    assert aif.pragmatic_value(np.array([0.1, 0.2, 0.3, 0.4]), uniform) == pytest.approx(math.log(0.25))
    # efe = -pragmatic - ig for the reference pair
    assert -val - 0.1325 == pytest.approx(3.3219, abs=1e-4)


def test_fresh_bn_symmetry():
    agent = aif.new_agent(SLO, PREFS)
    q, A = aif.predictive_densities(agent.bn, CONFIG_GRID[7])
    np.testing.assert_allclose(q, np.full(12, 1 / 12))
    np.testing.assert_allclose(A, np.full((4, 12), 0.25))
    efes = {b.efe for b in aif.evaluate_configs(agent)}
    assert len(efes) == 1
    assert aif.infer_best_config(agent)[0] == ConfigPoint(8, 0.0005)


def test_deterministic_metric_drives_time():
    # duration_bin -> time_ok with bins 0,1 always ok and 2,3 never ok
    rows = [[0, 0, d, 2, int(d <= 1), 1] for d in range(4) for _ in range(50)]
    bn = agent_net({("duration_bin", "time_ok")}, rows)
    q, A = aif.predictive_densities(bn, CONFIG_GRID[0])
    A4 = A.reshape(2, 2, 4, 3)  # time, perf, duration, accuracy
    time_given_dur = A4.sum(axis=1)
    for d in range(4):
        assert time_given_dur[int(d <= 1), d, :].min() > 0.98


def test_epsilon_floor():
    bn = two_state_net()
    q, A = aif.predictive_densities(bn, CONFIG_GRID[0], epsilon=1e-6)
    assert q.min() >= 1e-6 * 0.99 and A.min() >= 1e-6 * 0.99
    np.testing.assert_allclose(A.sum(axis=0), 1.0)


def test_surprise_and_efe_on_two_state_net():
    bn = two_state_net()
    o = obs(8, 0.0005, 0, 2, time_ok=0, perf_ok=1)
    assert aif.observed_surprise(bn, o) == pytest.approx(0.1072, abs=1e-4)
    b = aif.compute_efe(bn, CONFIG_GRID[0], PREFS)
    assert b.info_gain == pytest.approx(0.1325, abs=1e-4)
    assert b.efe == -b.pragmatic - b.info_gain
    # MAP outcome is (0, 1) with p = 0.55
    assert b.expected_ig_at_map == pytest.approx(0.1072, abs=1e-4)


def test_all_fulfilled_zero_ig():
    bn = agent_net(set())
    cpds = dict(bn.cpds)
    cpds["time_ok"] = Cpd.from_probabilities(TIME, (), [[0.0], [1.0]])
    cpds["perf_ok"] = Cpd.from_probabilities(PERF, (), [[0.0], [1.0]])
    b = aif.compute_efe(BayesNet(bn.dag, cpds), CONFIG_GRID[0], PREFS, epsilon=1e-12)
    assert b.info_gain == pytest.approx(0.0, abs=1e-9)
    assert b.efe == pytest.approx(-math.log(0.998001), abs=1e-9)
    p_certain = np.array([0.0, 0.0, 0.0, 1.0])
    assert -aif.pragmatic_value(p_certain, PREFS) == pytest.approx(0.0020, abs=1e-4)


def test_prefers_config_likely_to_fulfil():
    # no system vertices: the hidden state collapses onto the outcome
    p_time = [0.9, 0.1, 0.5, 0.5, 0.5]
    dag = Dag((BS, LR, TIME, PERF), frozenset({("batch_size", "time_ok")}))
    bn = BayesNet(dag, {
        "batch_size": Cpd(BS, (), np.ones((5, 1))),
        "learning_rate": Cpd(LR, (), np.ones((4, 1))),
        "time_ok": Cpd.from_probabilities(TIME, (BS,), [[1 - p for p in p_time], p_time]),
        "perf_ok": Cpd.from_probabilities(PERF, (), [[0.0], [1.0]]),
    })
    c1 = aif.compute_efe(bn, ConfigPoint(8, 0.001), PREFS)
    c2 = aif.compute_efe(bn, ConfigPoint(32, 0.001), PREFS)
    assert c1.info_gain == pytest.approx(c2.info_gain, abs=1e-9)
    assert c1.efe < c2.efe
    agent = aif.new_agent(SLO, PREFS)
    agent.bn = bn
    assert aif.infer_best_config(agent)[0] == ConfigPoint(8, 0.0005)


def test_unexplored_config_has_larger_ig():
    edges = {("batch_size", "duration_bin"), ("duration_bin", "time_ok")}
    rows = [[0, 0, 3, 2, 0, 1]] * 40 + [[4, 0, 0, 2, 1, 1]] * 40
    bn = agent_net(edges, rows)
    resolved = aif.compute_efe(bn, ConfigPoint(8, 0.0005), PREFS).info_gain
    unexplored = aif.compute_efe(bn, ConfigPoint(64, 0.0005), PREFS).info_gain
    assert unexplored > resolved


def test_scaling_preferences_keeps_choice():
    rows = [[b, 0, 3 - min(b, 3), 2, int(b >= 3), 1] for b in range(5) for _ in range(5)]
    agent = aif.new_agent(SLO, PREFS)
    agent.bn = agent_net({("batch_size", "duration_bin"), ("duration_bin", "time_ok")}, rows)
    choice = aif.infer_best_config(agent)[0]
    agent.prefs = aif.make_preferences((0.01, 9.99), (0.1, 99.9))
    assert aif.infer_best_config(agent)[0] == choice


# --- selection tie-breaks ----------------------------------------------------


def test_select_config_tie_breaks():
    flat = [aif.EfeBreakdown(c, -1.0, 0.0, 1.0, 0.0) for c in CONFIG_GRID]
    assert aif.select_config(flat).config == CONFIG_GRID[0]
    counts = np.ones(20, dtype=np.int64)
    counts[5] = 0
    assert aif.select_config(flat, counts).config == CONFIG_GRID[5]
    counts[7] = 0
    assert aif.select_config(flat, counts).config == CONFIG_GRID[5]
    picks = {aif.select_config(flat, counts, np.random.default_rng(s)).config for s in range(40)}
    assert picks == {CONFIG_GRID[5], CONFIG_GRID[7]}


def test_random_tie_break_is_seeded():
    a = aif.new_agent(SLO, PREFS, seed=3, tie_break="random")
    b = aif.new_agent(SLO, PREFS, seed=3, tie_break="random")
    assert [aif.infer_best_config(a)[0] for _ in range(5)] == [aif.infer_best_config(b)[0] for _ in range(5)]
    with pytest.raises(ValueError):
        aif.new_agent(SLO, PREFS, tie_break="coin")


# --- belief maintenance ------------------------------------------------------


def lifelong_agent(edges=(), rows=()):
    agent = aif.new_agent(SLO, PREFS)
    agent.lifelong = True
    if rows:
        for r in rows:
            agent.history.append(dict(zip(agent.history.names, r)))
        agent.bn = agent_net(set(edges), rows)
    return agent


CONFIDENT_ROWS = [[4, 0, 0, 2, 1, 1]] * 30 + [[0, 0, 3, 2, 0, 1]] * 30
CONFIDENT_EDGES = {("batch_size", "duration_bin"), ("duration_bin", "time_ok")}


def test_update_beliefs_requires_lifelong():
    agent = aif.new_agent(SLO, PREFS)
    with pytest.raises(RuntimeError):
        aif.update_beliefs(agent, obs(8, 0.0005, 0, 2, 1, 1), 0.0)
    assert len(agent.history) == 0


def test_equal_surprise_means_parameter_update():
    agent = lifelong_agent(CONFIDENT_EDGES, CONFIDENT_ROWS)
    o = obs(512, 0.0005, 0, 2, 1, 1)
    s = aif.observed_surprise(agent.bn, o)
    before = agent.bn
    res = aif.update_beliefs(agent, o, s)
    assert not res.relearned and res.surprise == s
    assert agent.bn.dag.edges == before.dag.edges
    assert len(agent.history) == 61
    diff = sum(float(np.sum(agent.bn.cpds[n].counts - before.cpds[n].counts)) for n in before.dag.names)
    assert diff == 6.0


def test_contradicting_outcome_triggers_relearn():
    agent = lifelong_agent(CONFIDENT_EDGES, CONFIDENT_ROWS)
    config, threshold = aif.infer_best_config(agent)
    assert config.batch_size == 512
    res = aif.update_beliefs(agent, obs(512, config.learning_rate, 3, 2, 0, 1), threshold)
    assert res.surprise > threshold
    assert res.relearned


def test_blind_graph_relearns():
    agent = lifelong_agent()
    res = aif.update_beliefs(agent, obs(8, 0.0005, 3, 0, 0, 0), 0.0)
    assert res.surprise == pytest.approx(0.0, abs=1e-12)
    assert res.relearned


def test_update_beliefs_deterministic():
    a = lifelong_agent(CONFIDENT_EDGES, CONFIDENT_ROWS)
    b = lifelong_agent(CONFIDENT_EDGES, CONFIDENT_ROWS)
    o = obs(256, 0.01, 2, 1, 0, 0)
    aif.update_beliefs(a, o, 0.05)
    aif.update_beliefs(b, o, 0.05)
    assert a.bn.dag.edges == b.bn.dag.edges
    assert all(np.array_equal(a.bn.cpds[n].counts, b.bn.cpds[n].counts) for n in a.bn.dag.names)


def test_expected_equals_mean_observed_surprise():
    agent = lifelong_agent(CONFIDENT_EDGES | {("learning_rate", "accuracy_bin"), ("accuracy_bin", "perf_ok")}, CONFIDENT_ROWS)
    for config in CONFIG_GRID[::3]:
        q, A = aif.predictive_densities(agent.bn, config)
        ig, p_o, _ = aif.information_gain(q, A)
        total = sum(
            p_o[o.index] * aif.observed_surprise(agent.bn, ObservationRecord(config, MetricBins(0, 0), o, 1))
            for o in map(SloOutcome.from_index, range(4))
        )
        assert ig == pytest.approx(total, abs=1e-9)


def test_lifelong_latch():
    agent = aif.new_agent(SLO, PREFS)
    assert not aif.maybe_set_lifelong(agent, 0.10, 1, 10)
    assert aif.maybe_set_lifelong(agent, 0.955, 2, 10)
    assert aif.maybe_set_lifelong(agent, 0.10, 3, 10)
    other = aif.new_agent(SLO, PREFS)
    assert aif.maybe_set_lifelong(other, 0.10, 10, 10)
