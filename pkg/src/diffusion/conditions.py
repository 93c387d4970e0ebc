# -*- coding: utf-8 -*-
# 条件向量 y(τ)：归一化回报 + 约束/反馈指示量

import configparser
import hashlib
import logging
import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from models.dataset import TrajectoryDataset
from models.trajectory import Trajectory
from utils.config import get_list, get_optional_float
from utils.error import InvalidConfigError, LayoutMismatchError, UnknownConditionError

RETURN_SLOT = "return"
INDICATOR_SLOTS = ("cpc_ok", "smoothness_ok", "early_spend_ok")
REGISTERED_SLOTS = (RETURN_SLOT,) + INDICATOR_SLOTS


@dataclass(frozen=True)
class ConditionLayout:
    slots: tuple[str, ...] = (RETURN_SLOT,)

    def __post_init__(self):
        object.__setattr__(self, "slots", tuple(self.slots))
        if not self.slots:
            raise InvalidConfigError("condition layout needs at least one slot")
        for name in self.slots:
            if name not in REGISTERED_SLOTS:
                raise UnknownConditionError(f"unknown condition slot '{name}', registered: {REGISTERED_SLOTS}")
        if len(set(self.slots)) != len(self.slots):
            raise InvalidConfigError(f"duplicate slots in layout {self.slots}")

    @property
    def dim(self) -> int:
        return len(self.slots)

    @property
    def digest(self) -> str:
        return hashlib.sha256(",".join(self.slots).encode("utf-8")).hexdigest()[:16]

    def verify(self, digest: str):
        if digest != self.digest:
            raise LayoutMismatchError(f"condition layout {self.slots} ({self.digest}) does not match stored {digest}")

    @classmethod
    def from_config(cls, conf: configparser.ConfigParser, section: str = "conditions") -> "ConditionLayout":
        return cls(tuple(get_list(conf, section, "layout", [RETURN_SLOT])))


@dataclass(frozen=True)
class ConditionVector:
    values: np.ndarray
    layout: ConditionLayout

    def __post_init__(self):
        values = np.array(self.values, dtype=np.float64).reshape(-1)
        if values.shape != (self.layout.dim,):
            raise LayoutMismatchError(f"{values.shape[0]} values for layout {self.layout.slots}")
        for name, v in zip(self.layout.slots, values):
            if math.isnan(v):
                continue
            if name == RETURN_SLOT and not 0.0 <= v <= 1.0:
                raise InvalidConfigError(f"return slot must be in [0, 1], got {v}")
            if name != RETURN_SLOT and v not in (0.0, 1.0):
                raise InvalidConfigError(f"indicator '{name}' must be 0 or 1, got {v}")
        values.flags.writeable = False
        object.__setattr__(self, "values", values)

    def __getitem__(self, name: str) -> float:
        return float(self.values[self.layout.slots.index(name)])


def normalized_return(R_tau: float, R_min: float, R_max: float) -> float:
    """(R - R_min)/(R_max - R_min)，超出范围时裁剪到 [0, 1]"""
    if R_max == R_min:
        logging.warning(f"degenerate return range R_min == R_max == {R_min}, mapping return to 0")
        return 0.0
    return min(max((R_tau - R_min) / (R_max - R_min), 0.0), 1.0)


def binary_indicator(x: float, C: float) -> int:
    """I(x <= C)，边界计为满足"""
    if not (math.isfinite(x) and math.isfinite(C)):
        raise InvalidConfigError(f"indicator needs finite inputs, got x={x}, C={C}")
    return 1 if x <= C else 0


def cpc_raw(traj: Trajectory) -> tuple[float, bool]:
    """总花费 / 总价值；无价值时返回 (nan, True)"""
    value = traj.total_return
    cost = traj.total_cost
    if value <= 0:
        return (0.0, False) if cost == 0 else (math.nan, True)
    return cost / value, False


@dataclass(frozen=True)
class CpcStats:
    min: float = 0.0
    max: float = 0.0

    @classmethod
    def from_trajectories(cls, trajectories: Sequence[Trajectory]) -> "CpcStats":
        raws = [r for r, flagged in map(cpc_raw, trajectories) if not flagged]
        if not raws:
            return cls()
        return cls(min=float(min(raws)), max=float(max(raws)))


def cpc_statistic(traj: Trajectory, stats: CpcStats) -> tuple[float, bool]:
    """min-max 归一化到 [0, 1] 的 CPC；无价值的轨迹取归一化最大值 1 并标记"""
    raw, flagged = cpc_raw(traj)
    if flagged:
        return 1.0, True
    if stats.max == stats.min:
        return 0.0, False
    return min(max((raw - stats.min) / (stats.max - stats.min), 0.0), 1.0), False


def smoothness_statistic(costs: Sequence[float]) -> float:
    """(1/T)·Σ_{t=1}^{T-1} |cost_t - cost_{t-1}|"""
    costs = np.asarray(costs, dtype=np.float64)
    if costs.size < 2:
        raise InvalidConfigError(f"smoothness needs T >= 2, got {costs.size}")
    return float(np.abs(np.diff(costs)).sum() / costs.size)


def early_spend_statistic(costs: Sequence[float]) -> tuple[float, bool]:
    """前半天花费占比；总花费为 0 时约定为 0.5 并标记"""
    costs = np.asarray(costs, dtype=np.float64)
    total = costs.sum()
    if total <= 0:
        return 0.5, True
    early = costs[np.arange(costs.size) < costs.size / 2].sum()
    return float(early / total), False


def compose_condition(layout: ConditionLayout, return_value: float = None,
                      indicators: Mapping[str, float] = None) -> ConditionVector:
    """按 layout 顺序拼装条件向量，未给出的槽位为 NaN（去噪网络按槽位填充，全部缺省时走 null 嵌入）"""
    values = np.full(layout.dim, np.nan)
    if return_value is not None:
        if RETURN_SLOT not in layout.slots:
            raise UnknownConditionError(f"layout {layout.slots} has no '{RETURN_SLOT}' slot")
        values[layout.slots.index(RETURN_SLOT)] = float(return_value)
    for name, value in (indicators or {}).items():
        if name not in INDICATOR_SLOTS or name not in layout.slots:
            raise UnknownConditionError(f"unknown indicator '{name}' for layout {layout.slots}")
        values[layout.slots.index(name)] = float(value)
    return ConditionVector(values=values, layout=layout)


def parse_condition_pairs(pairs: Sequence[str], layout: ConditionLayout) -> ConditionVector:
    """解析命令行的 name=value 形式"""
    return_value = None
    indicators = {}
    for pair in pairs:
        name, sep, raw = pair.partition("=")
        if not sep:
            raise InvalidConfigError(f"condition '{pair}' must look like name=value")
        name = name.strip()
        if name == RETURN_SLOT:
            return_value = float(raw)
        else:
            indicators[name] = float(raw)
    return compose_condition(layout, return_value, indicators)


@dataclass(frozen=True)
class ConditionStats:
    """训练时冻结的归一化统计量与阈值"""
    R_min: float = 0.0
    R_max: float = 0.0
    cpc: CpcStats = CpcStats()
    cpc_threshold: float = 0.5
    smoothness_threshold: float = 0.0
    early_spend_threshold: float = 0.5

    def to_dict(self) -> dict:
        return {
            "R_min": self.R_min, "R_max": self.R_max,
            "cpc_min": self.cpc.min, "cpc_max": self.cpc.max,
            "cpc_threshold": self.cpc_threshold,
            "smoothness_threshold": self.smoothness_threshold,
            "early_spend_threshold": self.early_spend_threshold,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ConditionStats":
        return cls(
            R_min=data["R_min"], R_max=data["R_max"],
            cpc=CpcStats(min=data["cpc_min"], max=data["cpc_max"]),
            cpc_threshold=data["cpc_threshold"],
            smoothness_threshold=data["smoothness_threshold"],
            early_spend_threshold=data["early_spend_threshold"],
        )

    def indicators(self, traj: Trajectory) -> dict[str, int]:
        cpc, _ = cpc_statistic(traj, self.cpc)
        early, _ = early_spend_statistic(traj.costs)
        return {
            "cpc_ok": binary_indicator(cpc, self.cpc_threshold),
            "smoothness_ok": binary_indicator(smoothness_statistic(traj.costs), self.smoothness_threshold),
            "early_spend_ok": binary_indicator(early, self.early_spend_threshold),
        }

    def label(self, traj: Trajectory, layout: ConditionLayout) -> ConditionVector:
        indicators = self.indicators(traj)
        return compose_condition(
            layout,
            return_value=normalized_return(traj.total_return, self.R_min, self.R_max) if RETURN_SLOT in layout.slots else None,
            indicators={name: indicators[name] for name in layout.slots if name != RETURN_SLOT},
        )


def fit_condition_stats(dataset: TrajectoryDataset, cpc_threshold: float = None, smoothness_threshold: float = None,
                        early_spend_threshold: float = None) -> ConditionStats:
    """未指定的阈值取数据集中位数"""
    trajectories = dataset.trajectories
    cpc = CpcStats.from_trajectories(trajectories)
    if trajectories:
        cpc_values = [cpc_statistic(t, cpc)[0] for t in trajectories]
        smooth_values = [smoothness_statistic(t.costs) for t in trajectories]
        early_values = [early_spend_statistic(t.costs)[0] for t in trajectories]
    else:
        cpc_values, smooth_values, early_values = [0.5], [0.0], [0.5]
    return ConditionStats(
        R_min=dataset.return_stats.R_min,
        R_max=dataset.return_stats.R_max,
        cpc=cpc,
        cpc_threshold=float(np.median(cpc_values)) if cpc_threshold is None else cpc_threshold,
        smoothness_threshold=float(np.median(smooth_values)) if smoothness_threshold is None else smoothness_threshold,
        early_spend_threshold=float(np.median(early_values)) if early_spend_threshold is None else early_spend_threshold,
    )


def fit_condition_stats_from_config(dataset: TrajectoryDataset, conf: configparser.ConfigParser,
                                    section: str = "conditions") -> ConditionStats:
    return fit_condition_stats(
        dataset,
        cpc_threshold=get_optional_float(conf, section, "cpc_threshold"),
        smoothness_threshold=get_optional_float(conf, section, "smoothness_threshold"),
        early_spend_threshold=get_optional_float(conf, section, "early_spend_threshold"),
    )


def label_dataset(dataset: TrajectoryDataset, layout: ConditionLayout, stats: ConditionStats) -> np.ndarray:
    """(N, cond_dim) 条件矩阵"""
    if not dataset.trajectories:
        return np.zeros((0, layout.dim))
    return np.stack([stats.label(t, layout).values for t in dataset.trajectories])
