import numpy as np
import pytest

from models.trajectory import (BidState, EpisodeContext, FeatureStats, StateConfig, Trajectory, compute_state,
                               denormalize_trajectory, normalize_trajectory)
from utils.error import CorruptedEpisodeError, NonFiniteValueError


def _trajectory(costs, budget=100.0, rewards=None) -> Trajectory:
    costs = np.asarray(costs, dtype=np.float64)
    T = costs.size
    spent_before = np.concatenate([[0.0], np.cumsum(costs)[:-1]])
    states = np.zeros((T, 5))
    states[:, 0] = 1.0 - np.arange(T) / T
    states[:, 1] = 1.0 - spent_before / budget
    return Trajectory(states=states, actions=np.ones((T, 1)), costs=costs,
                      rewards=np.ones(T) if rewards is None else np.asarray(rewards, dtype=np.float64),
                      budget=budget)


def test_compute_state_at_episode_start():
    state = compute_state(EpisodeContext(), budget=2000.0, period=0)
    assert state == BidState(1.0, 1.0, 0.0, 0.0, 0.0)


def test_compute_state_midway():
    state = compute_state(EpisodeContext(spent=500.0, value=10.0), budget=2000.0, period=48)
    assert state.remaining_time == pytest.approx(0.5)
    assert state.remaining_budget == pytest.approx(0.75)


def test_compute_state_zero_value_guard():
    config = StateConfig(ce_eps=1e-6, ce_max=1000.0)
    state = compute_state(EpisodeContext(spent=10.0, last_cost=10.0, last_value=0.0), 2000.0, 1, config)
    assert state.realtime_cost_efficiency == 1000.0
    small = compute_state(EpisodeContext(spent=1e-4, last_cost=1e-4), 2000.0, 1, config)
    assert small.realtime_cost_efficiency == pytest.approx(1e-4 / 1e-6)


@pytest.mark.parametrize("context", [EpisodeContext(spent=-1.0), EpisodeContext(spent=2000.1)])
def test_compute_state_rejects_corrupted_totals(context):
    with pytest.raises(CorruptedEpisodeError):
        compute_state(context, budget=2000.0, period=3)


def test_compute_state_allows_budget_slack():
    compute_state(EpisodeContext(spent=2000.0 * (1 + 1e-10)), budget=2000.0, period=3)


def test_bid_state_rejects_non_finite():
    with pytest.raises(NonFiniteValueError):
        BidState(1.0, float("nan"), 0.0, 0.0, 0.0)


def test_trajectory_validate_checks_remaining_budget():
    traj = _trajectory([10.0, 20.0, 30.0])
    traj.validate(T=3)
    assert traj.total_cost == 60.0
    states = traj.states.copy()
    states[2, 1] += 1e-6
    broken = Trajectory(states=states, actions=traj.actions, rewards=traj.rewards, costs=traj.costs, budget=100.0)
    with pytest.raises(CorruptedEpisodeError):
        broken.validate()


def test_trajectory_validate_rejects_overspend():
    with pytest.raises(CorruptedEpisodeError):
        _trajectory([60.0, 60.0], budget=100.0).validate()


def test_trajectory_is_read_only():
    traj = _trajectory([1.0, 2.0])
    with pytest.raises(ValueError):
        traj.costs[0] = 5.0


def test_steps_view_matches_arrays():
    traj = _trajectory([1.0, 2.0], rewards=[0.5, 0.25])
    steps = traj.steps
    assert [s.cost for s in steps] == [1.0, 2.0]
    assert [s.reward for s in steps] == [0.5, 0.25]
    assert Trajectory.from_steps(steps, budget=100.0).total_return == pytest.approx(0.75)


def test_normalize_endpoints_and_midpoint():
    stats = FeatureStats(min=np.zeros(5), max=np.full(5, 4.0))
    assert np.all(stats.normalize(np.zeros(5)) == -1.0)
    assert np.all(stats.normalize(np.full(5, 2.0)) == 0.0)
    assert np.all(stats.normalize(np.full(5, 4.0)) == 1.0)


def test_degenerate_feature_maps_to_zero():
    stats = FeatureStats(min=np.array([0.0, 1.0, 0.0, 0.0, 0.0]), max=np.array([1.0, 1.0, 1.0, 1.0, 1.0]))
    out = stats.normalize(np.array([0.5, 1.0, 0.5, 0.5, 0.5]))
    assert out[1] == 0.0


def test_normalize_round_trip_on_random_trajectories():
    rng = np.random.default_rng(0)
    trajectories = []
    for _ in range(100):
        costs = rng.uniform(0, 1, size=12)
        states = rng.uniform(0, 50, size=(12, 5))
        spent_before = np.concatenate([[0.0], np.cumsum(costs)[:-1]])
        states[:, 1] = 1.0 - spent_before / 100.0
        trajectories.append(Trajectory(states=states, actions=np.ones((12, 1)), rewards=np.zeros(12),
                                       costs=costs, budget=100.0))
    stats = FeatureStats.from_states(np.concatenate([t.states for t in trajectories]))
    worst = 0.0
    for traj in trajectories:
        x = normalize_trajectory(traj, stats)
        assert x.min() >= -1.0 and x.max() <= 1.0
        worst = max(worst, np.abs(denormalize_trajectory(x, stats) - traj.states).max())
    assert worst < 1e-9


def test_normalize_rejects_non_finite():
    stats = FeatureStats(min=np.zeros(5), max=np.ones(5))
    with pytest.raises(NonFiniteValueError):
        stats.normalize(np.array([0.0, np.inf, 0.0, 0.0, 0.0]))
