# -*- coding: utf-8 -*-
# 多广告主二价拍卖仿真环境

import configparser
import hashlib
import logging
from dataclasses import dataclass, fields, replace
from typing import Protocol, Sequence

import numpy as np

from models.trajectory import Action, BidState, EpisodeContext, StateConfig, Trajectory, compute_state
from utils.error import InvalidConfigError, PolicyFaultError, ShapeMismatchError, SimulatorFinishedError

# 曝光数区间预设：table 为参数表，body 为正文描述
PRESETS = {
    "table": (50, 300),
    "body": (100, 500),
}


@dataclass(frozen=True)
class EnvConfig:
    n_advertisers: int = 30
    T: int = 96
    n_min: int = 50
    n_max: int = 300
    budget_min: float = 1000.0
    budget_max: float = 4000.0
    bid_min: float = 0.0
    bid_max: float = 1000.0
    value_max: float = 1.0
    price_max: float = 1000.0
    seed: int = 0
    # 价值分布：对数正态，按周期整体缩放
    value_mu: float = -1.0
    value_sigma: float = 0.5
    scale_lo: float = 0.5
    scale_hi: float = 1.5
    # J：0 为 Max Return，1 为 Target-CPC
    n_constraints: int = 0
    cpc_min: float = 5.0
    cpc_max: float = 15.0
    lambda_max: float = 500.0
    ce_eps: float = 1e-6
    ce_max: float = 1000.0

    def validate(self) -> "EnvConfig":
        problems = []
        if self.n_advertisers < 1:
            problems.append("n_advertisers must be >= 1")
        if self.T < 1:
            problems.append("T must be >= 1")
        if not 0 < self.n_min <= self.n_max:
            problems.append(f"need 0 < n_min <= n_max, got [{self.n_min}, {self.n_max}]")
        if not 0 < self.budget_min <= self.budget_max:
            problems.append(f"need 0 < budget_min <= budget_max, got [{self.budget_min}, {self.budget_max}]")
        if not 0 <= self.bid_min <= self.bid_max or self.bid_max <= 0:
            problems.append(f"need 0 <= bid_min <= bid_max, got [{self.bid_min}, {self.bid_max}]")
        if self.value_max <= 0 or self.price_max <= 0 or self.lambda_max <= 0:
            problems.append("value_max, price_max and lambda_max must be positive")
        if not 0 < self.scale_lo <= self.scale_hi or self.value_sigma < 0:
            problems.append("invalid value distribution parameters")
        if self.n_constraints not in (0, 1):
            problems.append(f"n_constraints must be 0 or 1, got {self.n_constraints}")
        if self.n_constraints and not 0 < self.cpc_min <= self.cpc_max:
            problems.append("need 0 < cpc_min <= cpc_max")
        if problems:
            raise InvalidConfigError("; ".join(problems))
        return self

    @property
    def J(self) -> int:
        return self.n_constraints

    @property
    def state_config(self) -> StateConfig:
        return StateConfig(T=self.T, ce_eps=self.ce_eps, ce_max=self.ce_max)

    def with_seed(self, seed: int) -> "EnvConfig":
        return replace(self, seed=int(seed))

    @classmethod
    def from_config(cls, conf: configparser.ConfigParser, section: str = "env") -> "EnvConfig":
        defaults = cls()
        values = {}
        preset = conf.get(section, "preset", fallback="table")
        if preset not in PRESETS:
            raise InvalidConfigError(f"unknown impression preset {preset}")
        values["n_min"], values["n_max"] = PRESETS[preset]
        for f in fields(cls):
            if not conf.has_option(section, f.name):
                continue
            if isinstance(getattr(defaults, f.name), int):
                values[f.name] = conf.getint(section, f.name)
            else:
                values[f.name] = conf.getfloat(section, f.name)
        return cls(**values).validate()

    @classmethod
    def from_source(cls, source: str, base: "EnvConfig" = None) -> "EnvConfig":
        """
        source 为预设名时只替换 base 的曝光数区间，否则按 ini 文件的 [env] section 读取
        """
        if source in PRESETS:
            n_min, n_max = PRESETS[source]
            return replace(base or cls(), n_min=n_min, n_max=n_max).validate()
        conf = configparser.ConfigParser()
        if not conf.read(source):
            raise InvalidConfigError(f"env config '{source}' is neither a preset {tuple(PRESETS)} nor a readable ini file")
        return cls.from_config(conf)


@dataclass(frozen=True)
class Impression:
    # 每个广告主对该曝光的价值
    values: np.ndarray
    period: int


@dataclass(frozen=True)
class ImpressionBatch:
    # (n, A)
    values: np.ndarray
    period: int
    scale: float

    def __len__(self) -> int:
        return self.values.shape[0]

    def __getitem__(self, index: int) -> Impression:
        return Impression(values=self.values[index], period=self.period)


@dataclass(frozen=True)
class AuctionOutcome:
    winner: int | None
    price: float
    winner_value: float


@dataclass(frozen=True)
class StepResult:
    cost: float
    value: float
    # 终止后为 None
    state: BidState | None


class BidAgent(Protocol):
    def reset(self, budget: float, constraint_bounds: tuple[float, ...], advertiser_id: int, seed: int) -> None:
        ...

    def act(self, history: Sequence[BidState], period: int) -> Action:
        ...


class Environment:
    """一个环境实例只在单线程中使用，独占自己的随机数流"""

    def __init__(self, config: EnvConfig, budgets: dict[int, float] = None, track: Sequence[int] = ()):
        self.config = config.validate()
        rng = np.random.default_rng([config.seed, 0])
        A = config.n_advertisers
        # 先按种子抽取全部预算，再覆盖指定广告主，保证其余随机流不变
        self.budgets = rng.uniform(config.budget_min, config.budget_max, size=A)
        for k, b in (budgets or {}).items():
            if b <= 0:
                raise InvalidConfigError(f"budget override for advertiser {k} must be positive")
            self.budgets[k] = float(b)
        if config.J:
            self.cpc_bounds = rng.uniform(config.cpc_min, config.cpc_max, size=A)
        else:
            self.cpc_bounds = np.zeros(0)
        self.track = tuple(int(k) for k in track)
        self.period = 0
        self.spent = np.zeros(A)
        self.value = np.zeros(A)
        self.last_cost = np.zeros(A)
        self.last_value = np.zeros(A)
        self.cost_history = np.zeros((config.T, A))
        self.value_history = np.zeros((config.T, A))
        self.max_price_ratio = 0.0
        self._landscape = {k: ([], []) for k in self.track}
        self._digest = hashlib.sha256()

    @property
    def finished(self) -> bool:
        return self.period >= self.config.T

    def constraint_bounds(self, advertiser: int) -> tuple[float, ...]:
        if self.config.J == 0:
            return ()
        return (float(self.cpc_bounds[advertiser]),)

    def state(self, advertiser: int) -> BidState:
        context = EpisodeContext(
            spent=float(self.spent[advertiser]),
            value=float(self.value[advertiser]),
            last_cost=float(self.last_cost[advertiser]),
            last_value=float(self.last_value[advertiser]),
        )
        return compute_state(context, float(self.budgets[advertiser]), self.period, self.config.state_config)

    def landscape(self, advertiser: int) -> tuple[np.ndarray, np.ndarray]:
        """被跟踪广告主的 (价值, 冻结竞争价格)，每个曝光一项"""
        values, prices = self._landscape[advertiser]
        if not values:
            return np.zeros(0), np.zeros(0)
        return np.concatenate(values), np.concatenate(prices)

    def digest(self) -> str:
        return self._digest.hexdigest()

    def bids_for(self, actions: Sequence[Action], batch: ImpressionBatch) -> np.ndarray:
        config = self.config
        if len(actions) != config.n_advertisers:
            raise ShapeMismatchError(f"expected {config.n_advertisers} actions, got {len(actions)}")
        for k, action in enumerate(actions):
            if len(action.lambdas) != config.J + 1:
                raise ShapeMismatchError(
                    f"advertiser {k}: action has {len(action.lambdas)} lambdas, expected J+1={config.J + 1}")
        lambdas = np.array([a.lambdas for a in actions], dtype=np.float64)
        bids = lambdas[:, 0][None, :] * batch.values
        if config.J:
            # Target-CPC：b = λ0·v + C·λ1，p ≡ 1
            bids = bids + (self.cpc_bounds * lambdas[:, 1])[None, :]
        return np.clip(bids, config.bid_min, config.bid_max)


def new_env(config: EnvConfig, budgets: dict[int, float] = None, track: Sequence[int] = ()) -> Environment:
    return Environment(config, budgets=budgets, track=track)


def sample_impressions(env: Environment, period: int) -> ImpressionBatch:
    """每周期的曝光只依赖 (seed, period)，与出价无关"""
    config = env.config
    if not 0 <= period < config.T:
        raise InvalidConfigError(f"period {period} outside [0, {config.T})")
    rng = np.random.default_rng([config.seed, 1, period])
    count = int(rng.integers(config.n_min, config.n_max + 1))
    scale = float(rng.uniform(config.scale_lo, config.scale_hi))
    raw = np.exp(rng.normal(config.value_mu, config.value_sigma, size=(count, config.n_advertisers)))
    values = np.clip(raw * scale, 0.0, config.value_max)
    return ImpressionBatch(values=values, period=period, scale=scale)


def _auction(bids: np.ndarray, remaining, price_max: float) -> tuple[int | None, float, np.ndarray]:
    active = bids > 0
    while active.any():
        candidates = np.where(active, bids, 0.0)
        order = np.argsort(-candidates, kind="stable")
        winner = int(order[0])
        price = float(candidates[order[1]]) if bids.size > 1 else 0.0
        price = min(price, price_max)
        if remaining is not None and remaining[winner] < price:
            active[winner] = False
            continue
        return winner, price, active
    return None, 0.0, active


def run_auction(bids, values=None, remaining=None, price_max: float = np.inf) -> AuctionOutcome:
    """
    单次二价拍卖：最高出价获胜，支付第二高出价（单独出价时保留价为 0），平局取下标最小者。
    给定 remaining 时，剩余预算不足以支付价格的获胜者被排除后重新竞价。
    """
    bids = np.asarray(bids, dtype=np.float64)
    winner, price, _ = _auction(bids, remaining, price_max)
    if winner is None:
        return AuctionOutcome(winner=None, price=0.0, winner_value=0.0)
    winner_value = float(values[winner]) if values is not None else 0.0
    return AuctionOutcome(winner=winner, price=price, winner_value=winner_value)


def _competitor_price(bids: np.ndarray, active: np.ndarray, advertiser: int, price_max: float) -> float:
    others = np.where(active, bids, 0.0)
    others[advertiser] = 0.0
    return float(min(others.max(initial=0.0), price_max))


def _resolve_period(bids: np.ndarray, remaining: np.ndarray, price_max: float, track: Sequence[int]):
    """
    逐个曝光按顺序结算本周期。先整体向量化计算，遇到第一个预算不足的获胜者时
    退回到单次拍卖逻辑处理该曝光，然后从下一个曝光继续。
    """
    n, A = bids.shape
    remaining = remaining.copy()
    winners = np.full(n, -1, dtype=np.int64)
    prices = np.zeros(n)
    competitor = {k: np.zeros(n) for k in track}
    start = 0
    while start < n:
        seg = bids[start:]
        m = seg.shape[0]
        rows = np.arange(m)
        order = np.argsort(-seg, axis=1, kind="stable")
        first = order[:, 0]
        top1 = seg[rows, first]
        top2 = seg[rows, order[:, 1]] if A > 1 else np.zeros(m)
        has = top1 > 0
        seg_prices = np.where(has, np.minimum(top2, price_max), 0.0)
        charge = np.zeros((m, A))
        charge[rows[has], first[has]] = seg_prices[has]
        cum = np.cumsum(charge, axis=0)
        over = (cum > remaining[None, :]).any(axis=1)
        stop = int(np.argmax(over)) if over.any() else m

        winners[start:start + stop] = np.where(has[:stop], first[:stop], -1)
        prices[start:start + stop] = seg_prices[:stop]
        for k in track:
            comp = np.where(first[:stop] == k, top2[:stop], top1[:stop])
            competitor[k][start:start + stop] = np.minimum(comp, price_max)
        if stop > 0:
            remaining -= cum[stop - 1]
        if stop == m:
            break

        row = start + stop
        # 被排除的出价者不再参与定价
        winner, price, active = _auction(bids[row], remaining, price_max)
        if winner is not None:
            winners[row] = winner
            prices[row] = price
            remaining[winner] -= price
        for k in track:
            competitor[k][row] = prices[row] if winners[row] == k else _competitor_price(bids[row], active, k, price_max)
        start = row + 1
    return winners, prices, competitor


def step(env: Environment, actions: Sequence[Action]) -> list[StepResult]:
    """执行一个周期的所有拍卖，返回每个广告主的 (花费, 价值, 下一状态)"""
    if env.finished:
        raise SimulatorFinishedError(f"episode already finished after {env.config.T} periods")
    config = env.config
    batch = sample_impressions(env, env.period)
    bids = env.bids_for(actions, batch)
    winners, prices, competitor = _resolve_period(bids, env.budgets - env.spent, config.price_max, env.track)

    won = winners >= 0
    A = config.n_advertisers
    cost = np.bincount(winners[won], weights=prices[won], minlength=A)
    value = np.bincount(winners[won], weights=batch.values[np.flatnonzero(won), winners[won]], minlength=A)
    if won.any():
        ratio = prices[won] / np.maximum(bids[np.flatnonzero(won), winners[won]], 1e-300)
        env.max_price_ratio = max(env.max_price_ratio, float(ratio.max()))
    for k in env.track:
        env._landscape[k][0].append(batch.values[:, k].copy())
        env._landscape[k][1].append(competitor[k])

    env._digest.update(winners.tobytes())
    env._digest.update(prices.tobytes())
    env.cost_history[env.period] = cost
    env.value_history[env.period] = value
    env.spent += cost
    env.value += value
    env.last_cost = cost
    env.last_value = value
    env.period += 1

    results = []
    for k in range(A):
        state = None if env.finished else env.state(k)
        results.append(StepResult(cost=float(cost[k]), value=float(value[k]), state=state))
    return results


def run_episode(env: Environment, agents: Sequence[BidAgent]) -> list[Trajectory]:
    """驱动完整的一天：每个周期向各策略查询动作，执行拍卖，记录轨迹"""
    config = env.config
    A = config.n_advertisers
    if len(agents) != A:
        raise ShapeMismatchError(f"need one policy per advertiser ({A}), got {len(agents)}")
    histories = [[env.state(k)] for k in range(A)]
    for k, agent in enumerate(agents):
        agent.reset(float(env.budgets[k]), env.constraint_bounds(k), k, config.seed)
    actions_log = np.zeros((config.T, A, config.J + 1))

    for t in range(config.T):
        actions = []
        for k, agent in enumerate(agents):
            action = agent.act(histories[k], t)
            if not action.is_finite():
                raise PolicyFaultError(k, f"non-finite lambdas {action.lambdas} at period {t}")
            actions.append(action.clipped(0.0, config.lambda_max))
        actions_log[t] = np.array([a.lambdas for a in actions])
        results = step(env, actions)
        for k, result in enumerate(results):
            if result.state is not None:
                histories[k].append(result.state)
    logging.debug(f"episode seed={config.seed} finished, digest={env.digest()[:12]}")

    trajectories = []
    for k in range(A):
        trajectories.append(Trajectory(
            states=np.stack([s.to_array() for s in histories[k]]),
            actions=actions_log[:, k, :],
            rewards=env.value_history[:, k],
            costs=env.cost_history[:, k],
            budget=float(env.budgets[k]),
            constraint_bounds=env.constraint_bounds(k),
            episode_seed=config.seed,
            advertiser_id=k,
        ))
    return trajectories
