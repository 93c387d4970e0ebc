# -*- coding: utf-8 -*-
# 事后最优：在冻结的竞争价格下按性价比 (CE = v/c) 贪心选择曝光

from dataclasses import dataclass

import numpy as np

from utils.error import OracleSizeError

BRUTE_FORCE_MAX_N = 20
# 枚举时每块的子集数
_CHUNK_BITS = 16


@dataclass(frozen=True)
class OracleResult:
    # 被选中曝光的下标，按 CE 降序
    selected: tuple[int, ...]
    total_value: float
    total_cost: float
    # 1 / ce*，ce* 为边界（最后选中）曝光的 CE
    lambda_star: float

    def to_row(self, seed: int, advertiser: int) -> dict:
        return {
            "seed": seed,
            "advertiser": advertiser,
            "oracle_value": self.total_value,
            "oracle_cost": self.total_cost,
            "lambda_star": self.lambda_star,
        }


def _as_items(values, costs) -> tuple[np.ndarray, np.ndarray]:
    values = np.asarray(values, dtype=np.float64).ravel()
    costs = np.asarray(costs, dtype=np.float64).ravel()
    if values.shape != costs.shape:
        raise ValueError(f"values/costs length mismatch {values.shape} vs {costs.shape}")
    if np.any(values < 0) or np.any(costs < 0):
        raise ValueError("values and costs must be non-negative")
    return values, costs


def ce_ranking(values: np.ndarray, costs: np.ndarray) -> np.ndarray:
    """按 CE 降序的下标，零成本正价值排最前，零价值曝光不参与；同 CE 时保持原顺序"""
    candidates = np.flatnonzero(values > 0)
    with np.errstate(divide="ignore"):
        ce = np.where(costs[candidates] > 0, values[candidates] / np.where(costs[candidates] > 0, costs[candidates], 1.0), np.inf)
    return candidates[np.argsort(-ce, kind="stable")]


def hindsight_oracle(values, costs, budget: float) -> OracleResult:
    """
    按 CE 降序依次选择，直到下一个曝光放不进预算为止，选中集合是排序列表的前缀。

    :param values: 目标广告主对每个曝光的价值
    :param costs: 冻结竞争价格，即赢下该曝光需要支付的二价
    :param budget: 预算（元）
    """
    if budget <= 0:
        raise ValueError(f"budget must be positive, got {budget}")
    values, costs = _as_items(values, costs)
    if values.size == 0:
        return OracleResult(selected=(), total_value=0.0, total_cost=0.0, lambda_star=0.0)
    ranked = ce_ranking(values, costs)
    cum_cost = np.cumsum(costs[ranked])
    n_fit = int(np.searchsorted(cum_cost, budget, side="right"))
    selected = ranked[:n_fit]
    if n_fit == 0:
        return OracleResult(selected=(), total_value=0.0, total_cost=0.0, lambda_star=0.0)
    boundary = selected[-1]
    lambda_star = float(costs[boundary] / values[boundary])
    return OracleResult(
        selected=tuple(int(i) for i in selected),
        total_value=float(values[selected].sum()),
        total_cost=float(cum_cost[n_fit - 1]),
        lambda_star=lambda_star,
    )


def brute_force_oracle(values, costs, budget: float) -> float:
    """枚举全部 2^N 个 0/1 选择，求预算约束下的最大总价值（N <= 20）"""
    values, costs = _as_items(values, costs)
    n = values.size
    if n > BRUTE_FORCE_MAX_N:
        raise OracleSizeError(f"brute force supports N <= {BRUTE_FORCE_MAX_N}, got {n}")
    if n == 0:
        return 0.0
    bits = np.arange(n)
    best = 0.0
    chunk = 1 << min(n, _CHUNK_BITS)
    for offset in range(0, 1 << n, chunk):
        masks = ((np.arange(offset, offset + chunk)[:, None] >> bits) & 1).astype(np.float64)
        total_cost = masks @ costs
        total_value = masks @ values
        feasible = total_cost <= budget
        if feasible.any():
            best = max(best, float(total_value[feasible].max()))
    return best
