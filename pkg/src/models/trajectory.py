# -*- coding: utf-8 -*-
# 出价轨迹的核心数据模型：状态、动作、单步记录、轨迹，以及特征归一化

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from utils.error import CorruptedEpisodeError, NonFiniteValueError, ShapeMismatchError

# 状态特征，顺序即数组列顺序
FEATURES = (
    "remaining_time",
    "remaining_budget",
    "spend_speed",
    "realtime_cost_efficiency",
    "avg_cost_efficiency",
)
STATE_DIM = len(FEATURES)

# 预算可行性的相对容差
BUDGET_SLACK = 1e-9


def _frozen(array: np.ndarray) -> np.ndarray:
    array = np.array(array, dtype=np.float64)
    array.flags.writeable = False
    return array


@dataclass(frozen=True)
class StateConfig:
    """状态计算相关的常量"""
    T: int = 96
    ce_eps: float = 1e-6
    ce_max: float = 1000.0


@dataclass(frozen=True)
class BidState:
    remaining_time: float
    remaining_budget: float
    spend_speed: float
    realtime_cost_efficiency: float
    avg_cost_efficiency: float

    def __post_init__(self):
        values = self.to_array()
        if not np.all(np.isfinite(values)):
            raise NonFiniteValueError(f"non-finite state {values.tolist()}")

    def to_array(self) -> np.ndarray:
        return np.array([getattr(self, name) for name in FEATURES], dtype=np.float64)

    @classmethod
    def from_array(cls, values: Sequence[float]) -> "BidState":
        if len(values) != STATE_DIM:
            raise ShapeMismatchError(f"state needs {STATE_DIM} values, got {len(values)}")
        return cls(*(float(v) for v in values))


@dataclass(frozen=True)
class Action:
    # (λ0, …, λJ)
    lambdas: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "lambdas", tuple(float(v) for v in self.lambdas))

    @property
    def J(self) -> int:
        return len(self.lambdas) - 1

    def is_finite(self) -> bool:
        return all(math.isfinite(v) for v in self.lambdas)

    def clipped(self, lo: float, hi: float) -> "Action":
        return Action(tuple(min(max(v, lo), hi) for v in self.lambdas))

    def to_array(self) -> np.ndarray:
        return np.asarray(self.lambdas, dtype=np.float64)


@dataclass(frozen=True)
class StepRecord:
    state: BidState
    action: Action
    # 本周期赢得的总价值
    reward: float
    # 本周期花费（元）
    cost: float

    def __post_init__(self):
        if self.reward < 0 or self.cost < 0:
            raise CorruptedEpisodeError(f"negative reward/cost ({self.reward}, {self.cost})")


@dataclass(frozen=True)
class EpisodeContext:
    """compute_state 需要的累计量。spent/value 为第 period 周期之前的累计"""
    spent: float = 0.0
    value: float = 0.0
    last_cost: float = 0.0
    last_value: float = 0.0


def compute_state(context: EpisodeContext, budget: float, period: int, config: StateConfig = StateConfig()) -> BidState:
    """由累计花费/价值构造第 period 周期开始时观测到的状态"""
    if budget <= 0:
        raise CorruptedEpisodeError(f"budget must be positive, got {budget}")
    if not 0 <= period < config.T:
        raise CorruptedEpisodeError(f"period {period} outside [0, {config.T})")
    totals = (context.spent, context.value, context.last_cost, context.last_value)
    if any(not math.isfinite(v) for v in totals):
        raise NonFiniteValueError(f"non-finite episode totals {totals}")
    if any(v < 0 for v in totals):
        raise CorruptedEpisodeError(f"negative episode totals {totals}")
    if context.spent > budget * (1.0 + BUDGET_SLACK):
        raise CorruptedEpisodeError(f"spend {context.spent} exceeds budget {budget}")

    eps, ce_max = config.ce_eps, config.ce_max
    return BidState(
        remaining_time=1.0 - period / config.T,
        remaining_budget=min(max(1.0 - context.spent / budget, 0.0), 1.0),
        spend_speed=min(context.last_cost / budget, 1.0),
        realtime_cost_efficiency=min(context.last_cost / (context.last_value + eps), ce_max),
        avg_cost_efficiency=min(context.spent / (context.value + eps), ce_max),
    )


@dataclass(frozen=True)
class Trajectory:
    """一个广告主一天的出价轨迹。内部以数组保存，steps 按需构造"""
    states: np.ndarray          # (T, D)
    actions: np.ndarray         # (T, J+1)
    rewards: np.ndarray         # (T,)
    costs: np.ndarray           # (T,)
    budget: float
    constraint_bounds: tuple[float, ...] = ()
    episode_seed: int = 0
    advertiser_id: int = 0

    def __post_init__(self):
        for name in ("states", "actions", "rewards", "costs"):
            object.__setattr__(self, name, _frozen(getattr(self, name)))
        object.__setattr__(self, "constraint_bounds", tuple(float(c) for c in self.constraint_bounds))
        object.__setattr__(self, "budget", float(self.budget))
        T = self.states.shape[0]
        if self.states.ndim != 2 or self.states.shape[1] != STATE_DIM:
            raise ShapeMismatchError(f"states must be (T, {STATE_DIM}), got {self.states.shape}")
        if self.actions.ndim != 2 or self.actions.shape[0] != T:
            raise ShapeMismatchError(f"actions must be (T, J+1), got {self.actions.shape}")
        if self.rewards.shape != (T,) or self.costs.shape != (T,):
            raise ShapeMismatchError("rewards/costs must be length T")

    @classmethod
    def from_steps(cls, steps: Sequence[StepRecord], budget: float, **kwargs) -> "Trajectory":
        return cls(
            states=np.stack([s.state.to_array() for s in steps]) if steps else np.zeros((0, STATE_DIM)),
            actions=np.stack([s.action.to_array() for s in steps]) if steps else np.zeros((0, 1)),
            rewards=np.array([s.reward for s in steps], dtype=np.float64),
            costs=np.array([s.cost for s in steps], dtype=np.float64),
            budget=budget,
            **kwargs,
        )

    @property
    def steps(self) -> list[StepRecord]:
        return [
            StepRecord(BidState.from_array(s), Action(tuple(a)), float(r), float(c))
            for s, a, r, c in zip(self.states, self.actions, self.rewards, self.costs)
        ]

    @property
    def T(self) -> int:
        return self.states.shape[0]

    @property
    def J(self) -> int:
        return self.actions.shape[1] - 1

    @property
    def total_return(self) -> float:
        return float(self.rewards.sum())

    @property
    def total_cost(self) -> float:
        return float(self.costs.sum())

    def validate(self, T: int = None, tol: float = 1e-9):
        """检查长度、预算可行性以及 remaining_budget 与逐期花费的一致性"""
        if T is not None and self.T != T:
            raise CorruptedEpisodeError(f"trajectory length {self.T} != {T}")
        if np.any(self.costs < 0) or np.any(self.rewards < 0):
            raise CorruptedEpisodeError("negative cost or reward")
        if self.total_cost > self.budget * (1.0 + BUDGET_SLACK):
            raise CorruptedEpisodeError(f"total cost {self.total_cost} exceeds budget {self.budget}")
        spent_before = np.concatenate([[0.0], np.cumsum(self.costs)[:-1]])
        expected = np.clip(1.0 - spent_before / self.budget, 0.0, 1.0)
        drift = np.abs(expected - self.states[:, 1])
        if drift.size and drift.max() > tol:
            raise CorruptedEpisodeError(f"remaining_budget drift {drift.max():.3e} at step {int(drift.argmax())}")

    def to_dict(self) -> dict:
        return {
            "budget": self.budget,
            "constraint_bounds": list(self.constraint_bounds),
            "episode_seed": int(self.episode_seed),
            "advertiser_id": int(self.advertiser_id),
            "states": self.states.tolist(),
            "actions": self.actions.tolist(),
            "rewards": self.rewards.tolist(),
            "costs": self.costs.tolist(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Trajectory":
        return cls(
            states=np.asarray(data["states"], dtype=np.float64).reshape(-1, STATE_DIM),
            actions=np.asarray(data["actions"], dtype=np.float64),
            rewards=np.asarray(data["rewards"], dtype=np.float64),
            costs=np.asarray(data["costs"], dtype=np.float64),
            budget=data["budget"],
            constraint_bounds=tuple(data.get("constraint_bounds", ())),
            episode_seed=int(data.get("episode_seed", 0)),
            advertiser_id=int(data.get("advertiser_id", 0)),
        )


@dataclass(frozen=True)
class FeatureStats:
    """每个状态特征的 min / max，训练时冻结"""
    min: np.ndarray = field(default_factory=lambda: np.zeros(STATE_DIM))
    max: np.ndarray = field(default_factory=lambda: np.zeros(STATE_DIM))

    def __post_init__(self):
        object.__setattr__(self, "min", _frozen(self.min))
        object.__setattr__(self, "max", _frozen(self.max))
        if self.min.shape != self.max.shape:
            raise ShapeMismatchError("min/max shape mismatch")
        if np.any(self.min > self.max):
            raise CorruptedEpisodeError("feature_stats min > max")

    @classmethod
    def from_states(cls, states: np.ndarray) -> "FeatureStats":
        states = np.asarray(states, dtype=np.float64).reshape(-1, STATE_DIM)
        if states.shape[0] == 0:
            return cls()
        return cls(min=states.min(axis=0), max=states.max(axis=0))

    @property
    def span(self) -> np.ndarray:
        return self.max - self.min

    def normalize(self, values: np.ndarray) -> np.ndarray:
        """x = 2(v - min)/(max - min) - 1，退化特征 (max == min) 映射为 0"""
        values = np.asarray(values, dtype=np.float64)
        if not np.all(np.isfinite(values)):
            raise NonFiniteValueError("cannot normalize non-finite values")
        if values.shape[-1] != self.min.shape[0]:
            raise ShapeMismatchError(f"expected {self.min.shape[0]} features, got {values.shape[-1]}")
        span = self.span
        safe = np.where(span > 0, span, 1.0)
        out = 2.0 * (values - self.min) / safe - 1.0
        return np.where(span > 0, out, 0.0)

    def denormalize(self, values: np.ndarray, clip: bool = False) -> np.ndarray:
        values = np.asarray(values, dtype=np.float64)
        if clip:
            values = np.clip(values, -1.0, 1.0)
        return self.min + (values + 1.0) * 0.5 * self.span

    def to_dict(self) -> dict:
        return {"min": self.min.tolist(), "max": self.max.tolist()}

    @classmethod
    def from_dict(cls, data: dict) -> "FeatureStats":
        return cls(min=np.asarray(data["min"]), max=np.asarray(data["max"]))


def normalize_trajectory(traj: Trajectory, stats: FeatureStats) -> np.ndarray:
    return stats.normalize(traj.states)


def denormalize_trajectory(x: np.ndarray, stats: FeatureStats) -> np.ndarray:
    return stats.denormalize(x)
