# -*- coding: utf-8 -*-
# 比例控制的预算平滑出价策略，以及采集离线日志时的探索扰动

import configparser
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from models.trajectory import Action, BidState
from utils.error import InvalidConfigError
from .base_agent import BaseAgent


@dataclass(frozen=True)
class PacingAgentConfig:
    lambda_init: float = 10.0
    gain: float = 0.4
    lambda_lo: float = 0.1
    lambda_hi: float = 200.0

    def __post_init__(self):
        if not self.lambda_lo <= self.lambda_init <= self.lambda_hi:
            raise InvalidConfigError(
                f"need lambda_lo <= lambda_init <= lambda_hi, got {self.lambda_lo}, {self.lambda_init}, {self.lambda_hi}")
        if not math.isfinite(self.gain) or self.gain < 0:
            raise InvalidConfigError(f"gain must be finite and >= 0, got {self.gain}")

    @property
    def lambda_bounds(self) -> tuple[float, float]:
        return self.lambda_lo, self.lambda_hi

    @classmethod
    def from_config(cls, conf: configparser.ConfigParser, section: str = "agent") -> "PacingAgentConfig":
        d = cls()
        return cls(
            lambda_init=conf.getfloat(section, "lambda_init", fallback=d.lambda_init),
            gain=conf.getfloat(section, "gain", fallback=d.gain),
            lambda_lo=conf.getfloat(section, "lambda_lo", fallback=d.lambda_lo),
            lambda_hi=conf.getfloat(section, "lambda_hi", fallback=d.lambda_hi),
        )


def pacing_action(state: BidState, config: PacingAgentConfig, lambda_prev: Sequence[float] = None) -> Action:
    """
    λ0 ← clip(λ_prev · (1 + gain·e), λ_lo, λ_hi)，e = (1 - remaining_time) - (1 - remaining_budget)。
    e < 0 表示超前花费，此时 λ0 不会增大。λ1… 保持不变。
    """
    lambdas = list(lambda_prev) if lambda_prev is not None else [config.lambda_init]
    target_spend = 1.0 - state.remaining_time
    error = target_spend - (1.0 - state.remaining_budget)
    lambdas[0] = min(max(lambdas[0] * (1.0 + config.gain * error), config.lambda_lo), config.lambda_hi)
    return Action(tuple(lambdas))


def explore(action: Action, rng: np.random.Generator, sigma: float, bounds: tuple[float, float]) -> Action:
    """每个 λ 乘以 exp(g)，g ~ N(0, sigma²)，再裁剪到边界"""
    if sigma < 0:
        raise InvalidConfigError(f"sigma must be >= 0, got {sigma}")
    if sigma == 0:
        return action.clipped(*bounds)
    noise = rng.normal(0.0, sigma, size=len(action.lambdas))
    return Action(tuple(action.to_array() * np.exp(noise))).clipped(*bounds)


class PacingAgent(BaseAgent):
    """
    预算平滑的行为策略。explore_sigma > 0 时每个周期对动作做对数正态扰动，
    控制律在实际执行的 λ 上继续更新。
    """

    def __init__(self, config: PacingAgentConfig, J: int = 0, explore_sigma: float = 0.0, lambda_extra: float = 0.0):
        super().__init__(J=J)
        self.config = config
        self.explore_sigma = explore_sigma
        self.lambda_extra = lambda_extra
        self.lambdas: tuple[float, ...] = ()
        self.rng = np.random.default_rng(0)

    def reset(self, budget, constraint_bounds, advertiser_id, seed):
        super().reset(budget, constraint_bounds, advertiser_id, seed)
        self.lambdas = (self.config.lambda_init,) + (self.lambda_extra,) * self.J
        self.rng = np.random.default_rng([seed, 2, advertiser_id])

    def act(self, history: Sequence[BidState], period: int) -> Action:
        action = Action(self.lambdas)
        if period > 0:
            action = pacing_action(history[-1], self.config, self.lambdas)
        if self.explore_sigma > 0:
            action = explore(action, self.rng, self.explore_sigma, self.config.lambda_bounds)
        self.lambdas = action.lambdas
        return action
