import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from netsched.cartpole import DEFAULT_GAINS, CartPoleParams, build_cartpole_scenario, closed_loop
from netsched.dynamics import NoiseModel, SystemModel, agent_streams
from netsched.estimation import closed_form_error
from netsched.scheduling import SlotBudget
from netsched.simulator import (
    ASampling,
    AgentSpec,
    ScenarioConfig,
    ScenarioEvent,
    SimulationError,
    SimulationTrace,
    adaptive_policy_step,
    aggregate_replicates,
    mean_quadratic_error,
    realize_models,
    run_replicates,
    run_simulation,
)
from netsched.types import Policy


def homogeneous(n_agents=4, a=1.0, var=1.0, horizon=50, k=1, k_pred=1, policy="periodic", **kw):
    spec = AgentSpec(NoiseModel([[var]]), a_matrix=[[a]])
    return ScenarioConfig(
        n_agents, horizon, kw.pop("delta", 0.1), SlotBudget.from_slots(k, k_pred), policy, [spec] * n_agents, **kw
    )


class TestConfig:
    def test_rejects_k_per_above_n(self):
        with pytest.raises(ValueError, match="k_per"):
            homogeneous(n_agents=2, k=3)

    def test_rejects_unsorted_events(self):
        n = NoiseModel([[2.0]])
        with pytest.raises(ValueError, match="sorted"):
            homogeneous(events=[ScenarioEvent(20, (1,), n), ScenarioEvent(10, (1,), n)])

    def test_rejects_unknown_event_agent(self):
        with pytest.raises(ValueError, match="unknown agents"):
            homogeneous(events=[ScenarioEvent(5, (9,), NoiseModel([[1.0]]))])

    def test_initial_error_must_be_below_threshold(self):
        with pytest.raises(ValueError, match="threshold"):
            homogeneous(initial_error=[(0.5,)] * 4)

    def test_agent_spec_needs_one_source(self):
        with pytest.raises(ValueError):
            AgentSpec(NoiseModel([[1.0]]))
        with pytest.raises(ValueError):
            AgentSpec(NoiseModel([[1.0]]), a_matrix=[[1.0]], a_sampling=ASampling())


def test_single_agent_always_granted():
    tr = run_simulation(homogeneous(n_agents=1, horizon=30))
    assert tr.granted.all()
    # every triggered transmission resets the next error to pure noise
    assert tr.error_sq.shape == (30, 1)


def test_tiny_threshold_gives_pure_noise_errors():
    # with N = K every agent transmits every step, so e(k+1) = v(k)
    cfg = homogeneous(n_agents=3, k=3, k_pred=2, var=2.0, delta=1e-300, horizon=20, seed=5)
    tr = run_simulation(cfg)
    assert (tr.gamma[1:] == 1).all()
    for i in range(3):
        noise_rng, _ = agent_streams(5, 0, i)
        z = noise_rng.standard_normal((20, 1))
        expected = 2.0 * z[:-1, 0] ** 2
        np.testing.assert_allclose(tr.error_sq[1:, i], expected, rtol=1e-12)


def test_error_follows_closed_form_between_transmissions():
    a = np.array([[1.1, 0.2], [0.0, 0.95]])
    cov = np.diag([0.3, 0.1])
    cfg = ScenarioConfig(
        2, 15, 1e6, SlotBudget.from_slots(1, 1), "periodic", [AgentSpec(NoiseModel(cov), a_matrix=a)] * 2, seed=9
    )
    tr = run_simulation(cfg)
    assert tr.gamma.sum() == 0  # threshold never reached
    noise_rng, _ = agent_streams(9, 0, 0)
    v = noise_rng.standard_normal((15, 2)) @ np.linalg.cholesky(cov).T
    for k in range(1, 15):
        e = closed_form_error(np.zeros(2), SystemModel(a, cov), v[:k])
        assert tr.error_sq[k, 0] == pytest.approx(float(e @ e), rel=1e-9, abs=1e-15)


def test_deterministic():
    cfg = homogeneous(n_agents=5, k=2, k_pred=1, policy="predictive", horizon=60, seed=3, replicates=3)
    a, b = run_replicates(cfg), run_replicates(cfg)
    for x, y in zip(a, b):
        assert np.array_equal(x.error_sq, y.error_sq)
        assert np.array_equal(x.granted, y.granted)


def test_batched_equals_single_replicate():
    cfg = homogeneous(n_agents=5, k=2, k_pred=1, policy="predictive", horizon=40, seed=3, replicates=4)
    batch = run_replicates(cfg)
    assert np.array_equal(batch[2].error_sq, run_simulation(cfg, replicate=2).error_sq)


def test_replicates_differ():
    tr = run_replicates(homogeneous(horizon=20, replicates=3))
    assert not np.array_equal(tr[0].error_sq, tr[1].error_sq)


@pytest.mark.parametrize("policy, k_slots", [("periodic", 2), ("predictive", 1)])
def test_bandwidth_conservation(policy, k_slots):
    tr = run_simulation(homogeneous(n_agents=6, k=2, k_pred=1, policy=policy, horizon=80, var=0.5))
    assert (tr.granted.sum(axis=1) == k_slots).all()
    assert (tr.gamma <= tr.granted).all()


def test_round_robin_grant_pattern():
    tr = run_simulation(homogeneous(n_agents=4, k=2, k_pred=1, horizon=8))
    expected = np.array([[1, 1, 0, 0], [0, 0, 1, 1]] * 4, dtype=bool)
    assert np.array_equal(tr.granted, expected)


def test_predictive_grants_largest_errors():
    tr = run_simulation(homogeneous(n_agents=5, k=2, k_pred=2, policy="predictive", horizon=40, var=0.3))
    for k in range(40):
        granted = np.flatnonzero(tr.granted[k])
        others = np.flatnonzero(~tr.granted[k])
        assert tr.error_sq[k, granted].min() >= tr.error_sq[k, others].max()


def test_policy_freeze_without_events():
    cfg = homogeneous(n_agents=4, a=1.05, k=2, k_pred=1, policy="adaptive", horizon=60, seed=2)
    ad = run_simulation(cfg)
    per = run_simulation(cfg.with_policy("periodic"))
    assert [step for step, _ in ad.decisions] == [0]
    assert ad.policy == (Policy.PERIODIC,) * 60
    assert np.array_equal(ad.error_sq, per.error_sq)


def test_adaptive_switches_at_event():
    quiet = NoiseModel(0.04 * np.eye(2))
    cfg = ScenarioConfig(
        6, 40, 0.1, SlotBudget.from_slots(3, 2), "adaptive", [AgentSpec(quiet, a_matrix=np.eye(2))] * 6,
        events=[ScenarioEvent(10, (6,), NoiseModel(6.25 * np.eye(2)))],
    )
    tr = run_simulation(cfg)
    assert [(s, c.chosen) for s, c in tr.decisions] == [(0, Policy.PERIODIC), (10, Policy.PREDICTIVE)]
    assert set(tr.policy[:10]) == {Policy.PERIODIC}
    assert set(tr.policy[10:]) == {Policy.PREDICTIVE}


def test_adaptive_policy_step_holds_without_event():
    models = [SystemModel(np.eye(1), np.eye(1))] * 3
    assert adaptive_policy_step(Policy.PREDICTIVE, False, models, 0.1, SlotBudget.from_slots(2, 1)) == (
        Policy.PREDICTIVE,
        None,
    )


def test_reid_lag_delays_decision():
    quiet = NoiseModel(0.04 * np.eye(2))
    cfg = ScenarioConfig(
        6, 40, 0.1, SlotBudget.from_slots(3, 2), "adaptive", [AgentSpec(quiet, a_matrix=np.eye(2))] * 6,
        events=[ScenarioEvent(10, (6,), NoiseModel(6.25 * np.eye(2)))], reid_lag=5,
    )
    assert [s for s, _ in run_simulation(cfg).decisions] == [0, 15]


def test_sampled_matrices_satisfy_assumption():
    spec = AgentSpec(NoiseModel(np.zeros((3, 3))), a_sampling=ASampling(low=-0.5, high=0.5))
    cfg = ScenarioConfig(3, 5, 0.1, SlotBudget.from_slots(1, 1), "periodic", [spec] * 3, seed=4)
    a, counts = realize_models(cfg, 0)
    for m in a:
        assert np.linalg.norm(m, 2) > 1
    assert sum(counts) > 0


def test_shared_sampling_gives_one_matrix():
    spec = AgentSpec(NoiseModel(0.1 * np.eye(2)), a_sampling=ASampling(normalize="orthogonal", shared=True))
    cfg = ScenarioConfig(4, 5, 0.1, SlotBudget.from_slots(2, 1), "periodic", [spec] * 4, seed=1)
    a, _ = realize_models(cfg, 0)
    assert all(np.array_equal(a[0], m) for m in a)
    np.testing.assert_allclose(a[0] @ a[0].T, np.eye(2), atol=1e-12)


def test_nonfinite_error_raises():
    with pytest.raises(SimulationError):
        run_simulation(homogeneous(n_agents=2, a=1e200, var=1.0, horizon=10, k=1, k_pred=1))


def _trace(values):
    values = np.asarray(values, dtype=float)
    t, n = values.shape
    zeros = np.zeros((t, n))
    return SimulationTrace(values, zeros.astype(np.int8), zeros.astype(bool), (Policy.PERIODIC,) * t)


class TestMetrics:
    def test_window_mean(self):
        tr = _trace([[1.0, 3.0], [2.0, 2.0], [5.0, 7.0]])
        assert mean_quadratic_error(tr) == pytest.approx(10 / 3)
        assert mean_quadratic_error(tr, (1, 3)) == pytest.approx(4.0)
        assert mean_quadratic_error(tr, range(0, 1)) == pytest.approx(2.0)

    def test_empty_window(self):
        with pytest.raises(ValueError):
            mean_quadratic_error(_trace([[1.0]]), (1, 1))

    def test_aggregate_two_replicates(self):
        mean, err = aggregate_replicates([_trace([[1.0], [2.0]]), _trace([[3.0], [2.0]])])
        np.testing.assert_allclose(mean, [2.0, 2.0])
        np.testing.assert_allclose(err, [1.0, 0.0])

    def test_aggregate_single(self):
        _, err = aggregate_replicates([_trace([[1.0], [2.0]])])
        assert (err == 0).all()

    def test_aggregate_mixed_horizons(self):
        with pytest.raises(ValueError):
            aggregate_replicates([_trace([[1.0]]), _trace([[1.0], [2.0]])])

    @given(st.lists(st.floats(0, 10), min_size=2, max_size=8))
    @settings(max_examples=30)
    def test_aggregate_matches_numpy(self, vals):
        traces = [_trace([[v]]) for v in vals]
        mean, err = aggregate_replicates(traces)
        assert mean[0] == pytest.approx(np.mean(vals))
        assert err[0] == pytest.approx(np.std(vals, ddof=1) / np.sqrt(len(vals)), abs=1e-12)


class TestCartPole:
    def test_zero_dt(self):
        with pytest.raises(ValueError, match="dt"):
            build_cartpole_scenario(dt=0.0)

    def test_closed_loop_expands_with_noise(self):
        a, b = closed_loop(CartPoleParams(), 0.01, DEFAULT_GAINS)
        assert np.linalg.norm(a, 2) > 1
        assert max(abs(np.linalg.eigvals(a))) < 1  # stabilized

    def test_event_identifies_new_dynamics(self):
        cfg = build_cartpole_scenario(replicates=1)
        assert len(cfg.events) == 5
        for ev in cfg.events:
            np.testing.assert_allclose(ev.a_estimate, ev.a_matrix, atol=1e-8)
        assert {a for ev in cfg.events for a in ev.agents} == {16, 17, 18, 19, 20}

    def test_no_event_variant(self):
        assert build_cartpole_scenario(event_step=None).events == ()

    def test_negative_dt(self):
        with pytest.raises(ValueError, match="dt"):
            build_cartpole_scenario(dt=-0.01)

    def test_noise_enters_through_input(self):
        cfg = build_cartpole_scenario(event_step=None)
        _, b = closed_loop(CartPoleParams(), 0.01, DEFAULT_GAINS)
        nm = cfg.agents[0].noise
        np.testing.assert_allclose(nm.cov, 0.16 * np.outer(b, b) + 1e-6 * np.eye(4))
        np.testing.assert_allclose(nm.mean_at(5), 0.3 * b * np.sin(2 * np.pi * 0.25))
