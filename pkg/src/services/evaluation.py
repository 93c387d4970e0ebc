# -*- coding: utf-8 -*-
# 策略评估：指定广告主换成被测策略，其余由预算平滑策略驱动，与事后最优对比

import configparser
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np
import pandas as pd
from scipy import stats as scipy_stats

from agents.base_agent import BaseAgent, FixedLambdaAgent
from agents.diffbid_agent import DiffBidAgent, PolicyBundle
from agents.oracle import hindsight_oracle
from agents.pacing_agent import PacingAgent, PacingAgentConfig
from diffusion.conditions import ConditionVector, CpcStats, cpc_statistic
from diffusion.schedule import cosine_schedule
from models.dataset import TrajectoryDataset
from models.run import RunRecord
from models.trajectory import BidState, Trajectory
from services.training import ExperimentConfig, train_bundle
from simulator.env import EnvConfig, new_env, run_episode
from utils import rldb
from utils.config import get_list
from utils.error import ErrorCode, EvalError, InvalidConfigError, LabError, error

METRIC_COLUMNS = ["policy", "budget", "n_runs", "top_k", "top_k_score", "mean", "std",
                  "oracle_mean", "oracle_ratio", "failed"]
SWEEP_AXES = ("diffusion_steps", "seeds", "omega")


@dataclass(frozen=True)
class EvalConfig:
    budgets: tuple[float, ...] = (1500.0, 2000.0, 2500.0, 3000.0)
    n_runs: int = 50
    top_k: int = 5
    target_advertiser: int = 0
    seed_base: int = 0
    replan_every: int = 1
    workers: int = 1

    def __post_init__(self):
        object.__setattr__(self, "budgets", tuple(float(b) for b in self.budgets))
        if not self.budgets or any(b <= 0 for b in self.budgets):
            raise InvalidConfigError(f"budgets must be non-empty and positive, got {self.budgets}")
        if not 1 <= self.top_k <= self.n_runs:
            raise InvalidConfigError(f"need 1 <= top_k <= n_runs, got top_k={self.top_k}, n_runs={self.n_runs}")

    @classmethod
    def from_config(cls, conf: configparser.ConfigParser, section: str = "eval", **overrides) -> "EvalConfig":
        d = cls()
        config = cls(
            budgets=tuple(get_list(conf, section, "budgets", list(d.budgets), float)),
            n_runs=conf.getint(section, "n_runs", fallback=d.n_runs),
            top_k=conf.getint(section, "top_k", fallback=d.top_k),
            target_advertiser=conf.getint(section, "target_advertiser", fallback=d.target_advertiser),
            seed_base=conf.getint(section, "seed_base", fallback=d.seed_base),
            replan_every=conf.getint(section, "replan_every", fallback=d.replan_every),
            workers=conf.getint(section, "workers", fallback=d.workers),
        )
        return replace(config, **overrides)


@dataclass(frozen=True)
class PolicySpec:
    """可在进程间传递的策略描述：diffbid / pacing / fixed"""
    kind: str = "pacing"
    bundle: PolicyBundle = None
    condition: ConditionVector = None
    replan_every: int = 1
    agent_config: PacingAgentConfig = field(default_factory=PacingAgentConfig)
    lambdas: tuple[float, ...] = ()

    @property
    def name(self) -> str:
        return self.kind

    def build(self, J: int) -> BaseAgent:
        if self.kind == "diffbid":
            return DiffBidAgent(self.bundle, condition=self.condition, replan_every=self.replan_every,
                                lambda_init=self.agent_config.lambda_init)
        if self.kind == "pacing":
            return PacingAgent(self.agent_config, J=J)
        if self.kind == "fixed":
            return FixedLambdaAgent(self.lambdas)
        raise InvalidConfigError(f"unknown policy kind {self.kind}")


@dataclass
class EpisodeOutcome:
    seed: int
    budget: float
    score: float
    cost: float
    oracle_value: float
    failed: bool = False
    trajectory: Trajectory | None = None


@dataclass(frozen=True)
class EpisodeJob:
    spec: PolicySpec
    env_config: EnvConfig
    competitor: PacingAgentConfig
    budget: float
    seed: int
    target: int


def run_target_episode(job: EpisodeJob) -> EpisodeOutcome:
    """失败的 episode 计 0 分并标记"""
    env_config = job.env_config.with_seed(job.seed)
    env = new_env(env_config, budgets={job.target: job.budget}, track=(job.target,))
    agents = [PacingAgent(job.competitor, J=env_config.J) for _ in range(env_config.n_advertisers)]
    agents[job.target] = job.spec.build(env_config.J)
    try:
        trajectory = run_episode(env, agents)[job.target]
    except LabError as e:
        logging.warning(f"{job.spec.name} episode seed={job.seed} budget={job.budget} failed: {e}")
        return EpisodeOutcome(seed=job.seed, budget=job.budget, score=0.0, cost=0.0, oracle_value=math.nan, failed=True)
    values, prices = env.landscape(job.target)
    oracle = hindsight_oracle(values, prices, job.budget)
    return EpisodeOutcome(seed=job.seed, budget=job.budget, score=trajectory.total_return, cost=trajectory.total_cost,
                          oracle_value=oracle.total_value, trajectory=trajectory)


def top_k_mean(scores: Sequence[float], k: int) -> float:
    ordered = np.sort(np.asarray(scores, dtype=np.float64))[::-1]
    return float(ordered[:k].mean())


def _run_jobs(jobs: list[EpisodeJob], workers: int) -> list[EpisodeOutcome]:
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as executor:
            return list(executor.map(run_target_episode, jobs))
    return [run_target_episode(job) for job in jobs]


def summarize(policy: str, budget: float, outcomes: list[EpisodeOutcome], top_k: int) -> dict:
    scores = np.array([o.score for o in outcomes])
    oracle = np.array([o.oracle_value for o in outcomes if not o.failed])
    oracle_mean = float(oracle.mean()) if oracle.size else math.nan
    ok_scores = np.array([o.score for o in outcomes if not o.failed])
    oracle_ratio = float(ok_scores.mean() / oracle_mean) if oracle.size and oracle_mean > 0 else math.nan
    return {
        "policy": policy,
        "budget": budget,
        "n_runs": len(outcomes),
        "top_k": top_k,
        "top_k_score": top_k_mean(scores, top_k),
        "mean": float(scores.mean()),
        "std": float(scores.std()),
        "oracle_mean": oracle_mean,
        "oracle_ratio": oracle_ratio,
        "failed": int(sum(o.failed for o in outcomes)),
    }


def evaluate_policy(spec: PolicySpec, env_config: EnvConfig, eval_config: EvalConfig,
                    competitor: PacingAgentConfig = PacingAgentConfig(),
                    keep_trajectories: bool = False) -> tuple[pd.DataFrame, list[EpisodeOutcome]]:
    """
    每个预算跑 n_runs 个种子为 seed_base + i 的 episode，结果按种子顺序汇总

    :return: 指标表（每个预算一行）与全部 episode 结果
    """
    if not 0 <= eval_config.target_advertiser < env_config.n_advertisers:
        raise InvalidConfigError(f"target advertiser {eval_config.target_advertiser} out of range")
    rows, outcomes = [], []
    for budget in eval_config.budgets:
        jobs = [EpisodeJob(spec=spec, env_config=env_config, competitor=competitor, budget=budget,
                           seed=eval_config.seed_base + i, target=eval_config.target_advertiser)
                for i in range(eval_config.n_runs)]
        results = _run_jobs(jobs, eval_config.workers)
        row = summarize(spec.name, budget, results, eval_config.top_k)
        logging.info(f"{spec.name} budget={budget:.0f}: top{eval_config.top_k}={row['top_k_score']:.3f} "
                     f"mean={row['mean']:.3f} oracle_ratio={row['oracle_ratio']:.3f} failed={row['failed']}")
        rows.append(row)
        if not keep_trajectories:
            for o in results:
                o.trajectory = None
        outcomes.extend(results)
    return pd.DataFrame.from_records(rows, columns=METRIC_COLUMNS), outcomes


def evaluate(bundle: PolicyBundle, env_config: EnvConfig, eval_config: EvalConfig,
             competitor: PacingAgentConfig = PacingAgentConfig(), condition: ConditionVector = None) -> pd.DataFrame:
    spec = PolicySpec(kind="diffbid", bundle=bundle, condition=condition, replan_every=eval_config.replan_every,
                      agent_config=competitor)
    table, _ = evaluate_policy(spec, env_config, eval_config, competitor)
    return table


def exceed_ratio(trajectories: Sequence[Trajectory], C: float, stats: CpcStats) -> float:
    """CPC 统计量超过阈值 C 的轨迹占比"""
    if not trajectories:
        raise EvalError("exceed ratio needs at least one trajectory")
    exceeded = sum(1 for t in trajectories if cpc_statistic(t, stats)[0] > C)
    return exceeded / len(trajectories)


@dataclass
class LatencyFit:
    Ks: list[int]
    seconds: list[float]
    slope: float
    intercept: float
    r_squared: float


def measure_latency(bundle: PolicyBundle, Ks: Sequence[int], repeats: int = 3, period: int = None) -> LatencyFit:
    """
    单次出价调用的耗时随扩散步数 K 的变化，并做线性拟合。
    换 K 只替换调度，网络权重不变。
    """
    T = bundle.horizon
    period = T // 2 if period is None else period
    # 用统计量中点构造一段合成历史
    midpoint = BidState.from_array(bundle.feature_stats.denormalize(np.zeros(bundle.feature_stats.min.shape)))
    states = [midpoint] * (period + 1)
    seconds = []
    for K in Ks:
        variant = replace(bundle, schedule=cosine_schedule(int(K), bundle.schedule.gamma, bundle.schedule.squared))
        agent = DiffBidAgent(variant)
        agent.reset(budget=1.0, constraint_bounds=(), advertiser_id=0, seed=0)
        timings = []
        for _ in range(repeats):
            start = time.perf_counter()
            agent.act(states, period)
            timings.append(time.perf_counter() - start)
        seconds.append(float(np.median(timings)))
        logging.info(f"latency K={K}: {seconds[-1] * 1000:.1f} ms per call")
    fit = scipy_stats.linregress(np.asarray(Ks, dtype=np.float64), np.asarray(seconds))
    return LatencyFit(Ks=list(Ks), seconds=seconds, slope=float(fit.slope), intercept=float(fit.intercept),
                      r_squared=float(fit.rvalue ** 2))


def sweep(axis: str, values: Sequence, dataset: TrajectoryDataset, experiment: ExperimentConfig, eval_config: EvalConfig,
          base_bundle: PolicyBundle = None) -> tuple[pd.DataFrame, dict]:
    """
    diffusion_steps / seeds 轴每个取值重新训练后评估，omega 轴复用同一个策略包只改采样配置。
    单个取值失败时记录为 failed 并继续。

    :return: 每次运行一行的表，以及各预算 top-k 分数跨运行的方差
    """
    if axis not in SWEEP_AXES:
        raise InvalidConfigError(f"sweep axis must be one of {SWEEP_AXES}, got {axis}")
    if not values:
        raise InvalidConfigError("sweep needs at least one value")
    if axis == "omega" and base_bundle is None:
        base_bundle = train_bundle(dataset, experiment)
    frames = []
    for value in values:
        try:
            if axis == "omega":
                bundle = base_bundle.with_sampler(omega=float(value))
            elif axis == "diffusion_steps":
                run = replace(experiment, schedule=replace(experiment.schedule, K=int(value)))
                bundle = train_bundle(dataset, run)
            else:
                run = replace(experiment, train=replace(experiment.train, seed=int(value)),
                              invdyn_hyper=replace(experiment.invdyn_hyper, seed=int(value)))
                bundle = train_bundle(dataset, run)
            table = evaluate(bundle, experiment.env, eval_config, experiment.agent)
            table["status"] = "ok"
        except LabError as e:
            logging.warning(f"sweep {axis}={value} failed: {e}")
            table = pd.DataFrame.from_records([{"policy": "diffbid", "budget": b, "status": "failed"}
                                               for b in eval_config.budgets])
        table.insert(0, "value", value)
        table.insert(0, "axis", axis)
        frames.append(table)
    result = pd.concat(frames, ignore_index=True)
    ok = result[result["status"] == "ok"]
    summary = {
        "score_var": ok.groupby("budget")["top_k_score"].var(ddof=0).to_dict() if len(ok) else {},
        "runs": len(values),
        "failed_runs": int((result.groupby("value")["status"].first() == "failed").sum()),
    }
    return result, summary


def _num(value) -> float:
    if value is None or (isinstance(value, float) and math.isnan(value)):
        return 0.0
    return float(value)


def _records(table: pd.DataFrame, kind: str, seed: int, config: dict) -> list[RunRecord]:
    records = []
    for row in table.to_dict(orient="records"):
        records.append(RunRecord(
            kind=kind,
            policy=str(row.get("policy", "")),
            axis=str(row.get("axis", "")),
            value=str(row.get("value", "")),
            seed=seed,
            budget=float(row.get("budget", 0.0)),
            top_k_score=_num(row.get("top_k_score")),
            mean=_num(row.get("mean")),
            std=_num(row.get("std")),
            oracle_mean=row.get("oracle_mean"),
            oracle_ratio=row.get("oracle_ratio"),
            failed=int(_num(row.get("failed"))),
            status=str(row.get("status", "ok")),
            config=config,
        ))
    return records


class EvaluationService:
    def __init__(self):
        self.rldb = rldb.get_instance()

    def record(self, table: pd.DataFrame, kind: str, seed: int, config: dict) -> (list[str], error):
        """把指标表写入 runs 登记表；未初始化数据库时跳过"""
        if self.rldb is None:
            return [], error(ErrorCode.SUCCESS, "")
        try:
            ids = [self.rldb.insert(r.to_rldb_model()) for r in _records(table, kind, seed, config)]
        except Exception as e:
            logging.error(f"record runs failed: {e}")
            return [], error(ErrorCode.RLDB_ERROR, str(e))
        return ids, error(ErrorCode.SUCCESS, "")

    def evaluate(self, spec: PolicySpec, env_config: EnvConfig, eval_config: EvalConfig,
                 competitor: PacingAgentConfig, config: dict = None,
                 keep_trajectories: bool = False) -> ((pd.DataFrame, list[EpisodeOutcome]), error):
        try:
            table, outcomes = evaluate_policy(spec, env_config, eval_config, competitor, keep_trajectories)
        except Exception as e:
            logging.error(f"evaluate failed: {e}")
            return (None, []), error.from_exception(e)
        _, err = self.record(table, "evaluate", eval_config.seed_base, config or {})
        return (table, outcomes), err

    def sweep(self, axis: str, values: Sequence, dataset: TrajectoryDataset, experiment: ExperimentConfig, eval_config: EvalConfig,
              base_bundle: PolicyBundle = None) -> ((pd.DataFrame, dict), error):
        try:
            table, summary = sweep(axis, values, dataset, experiment, eval_config, base_bundle)
        except Exception as e:
            logging.error(f"sweep failed: {e}")
            return (None, {}), error.from_exception(e)
        _, err = self.record(table, "sweep", eval_config.seed_base, experiment.to_dict())
        return (table, summary), err


_evaluation_service: EvaluationService = None

def init():
    global _evaluation_service
    _evaluation_service = EvaluationService()

def get_instance() -> EvaluationService:
    global _evaluation_service
    if _evaluation_service is None:
        _evaluation_service = EvaluationService()
    return _evaluation_service
