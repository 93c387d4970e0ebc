# -*- coding: utf-8 -*-
# 生成式出价策略：先生成未来状态轨迹，再用逆动力学给出下一周期的 λ

import logging
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np
import torch

from diffusion.conditions import ConditionLayout, ConditionStats, ConditionVector, compose_condition
from diffusion.denoiser import TemporalDenoiser
from diffusion.invdyn import InvDynParams, pad_history, predict_action
from diffusion.sampler import SamplerConfig, generate_trajectory
from diffusion.schedule import NoiseSchedule
from models.trajectory import Action, BidState, FeatureStats
from utils.error import LabError, LayoutMismatchError, NonFiniteValueError, ShapeMismatchError
from .base_agent import BaseAgent


@dataclass(frozen=True)
class PolicyBundle:
    """生成一次出价所需的全部冻结组件"""
    denoiser: TemporalDenoiser
    schedule: NoiseSchedule
    sampler: SamplerConfig
    layout: ConditionLayout
    condition_stats: ConditionStats
    feature_stats: FeatureStats
    invdyn: InvDynParams
    invdyn_layout_digest: str = ""
    digest: str = ""

    def verify(self) -> "PolicyBundle":
        if self.invdyn_layout_digest and self.invdyn_layout_digest != self.layout.digest:
            raise LayoutMismatchError(
                f"inverse dynamics trained with layout {self.invdyn_layout_digest}, denoiser uses {self.layout.digest}")
        if self.denoiser.config.state_dim != self.invdyn.config.state_dim:
            raise LayoutMismatchError("denoiser and inverse dynamics disagree on the state dimension")
        if self.denoiser.config.cond_dim != self.layout.dim:
            raise LayoutMismatchError(f"denoiser expects {self.denoiser.config.cond_dim} condition slots, "
                                      f"layout has {self.layout.dim}")
        return self

    @property
    def horizon(self) -> int:
        return self.denoiser.config.horizon

    def with_sampler(self, **overrides) -> "PolicyBundle":
        return replace(self, sampler=replace(self.sampler, **overrides))

    def default_condition(self) -> ConditionVector:
        """回报槽设为 1，其余指示量要求满足"""
        indicators = {name: 1.0 for name in self.layout.slots if name != "return"}
        return_value = 1.0 if "return" in self.layout.slots else None
        return compose_condition(self.layout, return_value, indicators)


def _episode_seed(seed: int, advertiser_id: int) -> int:
    return int(np.random.SeedSequence([seed, 3, advertiser_id]).generate_state(1)[0])


class DiffBidAgent(BaseAgent):
    """
    每个周期用已观测的 s_{0:t} 做补全生成，取 s'_{t+1} 交给逆动力学。
    replan_every > 1 时复用最近一次生成的轨迹；生成失败时沿用上一个 λ。
    """

    def __init__(self, bundle: PolicyBundle, condition: ConditionVector = None, replan_every: int = 1,
                 lambda_init: float = 10.0):
        super().__init__(J=bundle.invdyn.config.action_dim - 1)
        self.bundle = bundle.verify()
        self.condition = condition if condition is not None else bundle.default_condition()
        if self.condition.layout != bundle.layout:
            raise LayoutMismatchError(f"condition layout {self.condition.layout.slots} != {bundle.layout.slots}")
        self.replan_every = max(1, int(replan_every))
        self.lambda_init = lambda_init
        self.lambdas: tuple[float, ...] = ()
        self.failures = 0
        self._plan: np.ndarray | None = None
        self._plan_period = -1
        self._generator = torch.Generator()

    def reset(self, budget, constraint_bounds, advertiser_id, seed):
        super().reset(budget, constraint_bounds, advertiser_id, seed)
        self.lambdas = (self.lambda_init,) + (0.0,) * self.J
        self.failures = 0
        self._plan = None
        self._plan_period = -1
        self._generator = torch.Generator().manual_seed(_episode_seed(seed, advertiser_id))

    def _generate(self, history: np.ndarray, period: int) -> np.ndarray:
        stale = self._plan is None or period - self._plan_period >= self.replan_every
        if stale:
            bundle = self.bundle
            self._plan = generate_trajectory(bundle.denoiser, bundle.schedule, history, self.condition.values,
                                             bundle.sampler, self._generator)
            self._plan_period = period
        return self._plan

    def act(self, history: Sequence[BidState], period: int) -> Action:
        bundle = self.bundle
        T = bundle.horizon
        if len(history) != period + 1:
            raise ShapeMismatchError(f"period {period} needs {period + 1} observed states, got {len(history)}")
        # 最后一个周期没有下一状态可生成
        if period + 1 >= T:
            return Action(self.lambdas)
        try:
            observed = bundle.feature_stats.normalize(np.stack([s.to_array() for s in history]))
            plan = self._generate(observed, period)
            window = pad_history(observed, period, bundle.invdyn.L)
            action = predict_action(bundle.invdyn, window, plan[period + 1], self.lambdas)
            if not action.is_finite():
                raise NonFiniteValueError(f"non-finite action {action.lambdas}")
        except (LabError, RuntimeError) as e:
            self.failures += 1
            logging.warning(f"advertiser {self.advertiser_id} period {period}: generation failed ({e}), "
                            f"keeping lambda {self.lambdas}")
            return Action(self.lambdas)
        self.lambdas = action.lambdas
        return action


def diffbid_policy(bundle: PolicyBundle, condition: ConditionVector = None, replan_every: int = 1,
                   lambda_init: float = 10.0) -> DiffBidAgent:
    return DiffBidAgent(bundle, condition=condition, replan_every=replan_every, lambda_init=lambda_init)


@dataclass
class GeneratedPlan:
    # 反归一化后的 (T, D) 状态，前 t+1 行即观测历史
    states: np.ndarray
    # 最后一个周期时为 None
    action: Action | None


def generate_plan(bundle: PolicyBundle, history: np.ndarray, condition: ConditionVector = None,
                  seed: int = 0, lambda_prev: Sequence[float] = None) -> GeneratedPlan:
    """
    单次补全生成，供命令行和 HTTP 接口使用

    :param history: 原始尺度的已观测状态 s_{0:t}，形状 (t+1, D)
    """
    history = np.atleast_2d(np.asarray(history, dtype=np.float64))
    T = bundle.horizon
    if history.shape[0] < 1 or history.shape[0] > T or history.shape[1] != bundle.feature_stats.min.shape[0]:
        raise ShapeMismatchError(f"history must have 1..{T} rows of {bundle.feature_stats.min.shape[0]} features, "
                                 f"got {history.shape}")
    period = history.shape[0] - 1
    # 整天都已观测，无需生成
    if period + 1 >= T:
        return GeneratedPlan(states=history.copy(), action=None)
    condition = condition if condition is not None else bundle.default_condition()
    observed = bundle.feature_stats.normalize(history)
    plan = generate_trajectory(bundle.denoiser, bundle.schedule, observed, condition.values, bundle.sampler, seed)
    window = pad_history(observed, period, bundle.invdyn.L)
    action = predict_action(bundle.invdyn, window, plan[period + 1], lambda_prev)
    states = bundle.feature_stats.denormalize(plan)
    states[: period + 1] = history
    return GeneratedPlan(states=states, action=action)
