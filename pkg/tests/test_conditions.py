import math

import numpy as np
import pytest

from diffusion.conditions import (ConditionLayout, ConditionStats, ConditionVector, CpcStats, binary_indicator,
                                  compose_condition, cpc_statistic, early_spend_statistic, fit_condition_stats,
                                  label_dataset, normalized_return, parse_condition_pairs, smoothness_statistic)
from models.trajectory import Trajectory
from utils.error import InvalidConfigError, LayoutMismatchError, UnknownConditionError

FULL = ConditionLayout(("return", "cpc_ok", "smoothness_ok", "early_spend_ok"))


def _trajectory(costs, rewards) -> Trajectory:
    costs = np.asarray(costs, dtype=np.float64)
    return Trajectory(states=np.zeros((costs.size, 5)), actions=np.ones((costs.size, 1)),
                      rewards=np.asarray(rewards, dtype=np.float64), costs=costs, budget=100.0)


def test_normalized_return():
    assert normalized_return(5.0, 0.0, 10.0) == 0.5
    assert normalized_return(12.0, 0.0, 10.0) == 1.0
    assert normalized_return(-1.0, 0.0, 10.0) == 0.0
    assert normalized_return(3.0, 3.0, 3.0) == 0.0


def test_indicator_boundary_counts_as_satisfied():
    assert binary_indicator(0.5, 0.5) == 1
    assert binary_indicator(0.6, 0.5) == 0
    with pytest.raises(InvalidConfigError):
        binary_indicator(math.nan, 0.5)


def test_smoothness_statistic():
    assert smoothness_statistic([1.0, 3.0, 2.0]) == pytest.approx(1.0)
    assert smoothness_statistic([2.0, 2.0, 2.0, 2.0]) == 0.0
    with pytest.raises(InvalidConfigError):
        smoothness_statistic([1.0])


def test_early_spend_statistic():
    assert early_spend_statistic([3.0, 1.0, 0.0, 0.0]) == (1.0, False)
    assert early_spend_statistic([1.0, 1.0, 2.0]) == (0.5, False)
    assert early_spend_statistic([0.0, 0.0]) == (0.5, True)


def test_cpc_statistic_normalizes_and_flags_zero_value():
    stats = CpcStats(min=1.0, max=3.0)
    assert cpc_statistic(_trajectory([4.0, 0.0], [1.0, 1.0]), stats) == (0.5, False)
    assert cpc_statistic(_trajectory([9.0], [1.0]), stats) == (1.0, False)
    assert cpc_statistic(_trajectory([2.0, 0.0], [0.0, 0.0]), stats) == (1.0, True)
    assert CpcStats.from_trajectories([_trajectory([2.0], [0.0]), _trajectory([3.0], [1.0])]) == CpcStats(3.0, 3.0)


def test_compose_leaves_missing_slots_empty():
    vector = compose_condition(FULL, 0.7, {"cpc_ok": 1})
    assert vector["return"] == 0.7
    assert vector["cpc_ok"] == 1.0
    assert math.isnan(vector["smoothness_ok"])
    assert math.isnan(vector["early_spend_ok"])


def test_unknown_slots_are_rejected():
    with pytest.raises(UnknownConditionError):
        compose_condition(ConditionLayout(), 0.5, {"cpc_ok": 1})
    with pytest.raises(UnknownConditionError):
        ConditionLayout(("return", "roi_ok"))
    with pytest.raises(InvalidConfigError):
        ConditionLayout(("return", "return"))


def test_condition_values_are_validated():
    with pytest.raises(InvalidConfigError):
        compose_condition(FULL, 1.5)
    with pytest.raises(InvalidConfigError):
        compose_condition(FULL, 0.5, {"cpc_ok": 0.5})
    with pytest.raises(LayoutMismatchError):
        ConditionVector(values=np.zeros(2), layout=FULL)


def test_layout_digest_depends_on_order():
    a = ConditionLayout(("return", "cpc_ok"))
    b = ConditionLayout(("cpc_ok", "return"))
    assert a.digest != b.digest
    a.verify(ConditionLayout(("return", "cpc_ok")).digest)
    with pytest.raises(LayoutMismatchError):
        a.verify(b.digest)


def test_parse_condition_pairs():
    vector = parse_condition_pairs(["return=0.9", "early_spend_ok=1"], FULL)
    assert vector["return"] == 0.9
    assert vector["early_spend_ok"] == 1.0
    with pytest.raises(InvalidConfigError):
        parse_condition_pairs(["return"], FULL)


def test_fitted_stats_and_labels(tiny_dataset):
    stats = fit_condition_stats(tiny_dataset)
    assert stats.R_min == tiny_dataset.return_stats.R_min
    assert stats.R_max == tiny_dataset.return_stats.R_max
    y = label_dataset(tiny_dataset, FULL, stats)
    assert y.shape == (len(tiny_dataset), 4)
    assert np.all((y[:, 0] >= 0) & (y[:, 0] <= 1))
    assert y[np.argmax(tiny_dataset.returns()), 0] == 1.0
    assert set(np.unique(y[:, 1:])) <= {0.0, 1.0}
    # 中位数阈值下至少一半轨迹满足指示量
    assert np.all(y[:, 1:].mean(axis=0) >= 0.5)


def test_explicit_thresholds_override_medians(tiny_dataset):
    stats = fit_condition_stats(tiny_dataset, cpc_threshold=1.0, smoothness_threshold=1e9, early_spend_threshold=1.0)
    y = label_dataset(tiny_dataset, FULL, stats)
    assert np.all(y[:, 1:] == 1.0)


def test_stats_dict_round_trip(tiny_dataset):
    stats = fit_condition_stats(tiny_dataset)
    assert ConditionStats.from_dict(stats.to_dict()) == stats
