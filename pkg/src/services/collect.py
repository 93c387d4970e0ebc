# -*- coding: utf-8 -*-
# 离线日志采集：所有广告主由预算平滑策略驱动，每个 episode 记录一个广告主的轨迹

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import pandas as pd

from agents.oracle import OracleResult, hindsight_oracle
from agents.pacing_agent import PacingAgent, PacingAgentConfig
from models.dataset import TrajectoryDataset, dataset_save
from models.trajectory import Trajectory
from simulator.env import EnvConfig, new_env, run_episode
from utils.error import ErrorCode, InvalidConfigError, error

ORACLE_COLUMNS = ["seed", "advertiser", "oracle_value", "oracle_cost", "lambda_star"]


@dataclass(frozen=True)
class EpisodeTask:
    env_config: EnvConfig
    agent_config: PacingAgentConfig
    seed: int
    logged_advertiser: int
    explore_sigma: float = 0.0
    lambda_extra: float = 0.0


def logged_advertiser_for(index: int, n_advertisers: int) -> int:
    """轮换被记录的广告主，让数据集覆盖不同的预算"""
    return index % n_advertisers


def collect_episode(task: EpisodeTask) -> tuple[Trajectory, OracleResult]:
    env_config = task.env_config.with_seed(task.seed)
    env = new_env(env_config, track=(task.logged_advertiser,))
    agents = [
        PacingAgent(task.agent_config, J=env_config.J,
                    explore_sigma=task.explore_sigma if k == task.logged_advertiser else 0.0,
                    lambda_extra=task.lambda_extra)
        for k in range(env_config.n_advertisers)
    ]
    trajectories = run_episode(env, agents)
    logged = trajectories[task.logged_advertiser]
    values, prices = env.landscape(task.logged_advertiser)
    return logged, hindsight_oracle(values, prices, logged.budget)


def _tasks(env_config: EnvConfig, agent_config: PacingAgentConfig, n_trajectories: int, explore_sigma: float,
           seed_base: int, lambda_extra: float) -> list[EpisodeTask]:
    return [
        EpisodeTask(env_config=env_config, agent_config=agent_config, seed=seed_base + i,
                    logged_advertiser=logged_advertiser_for(i, env_config.n_advertisers),
                    explore_sigma=explore_sigma, lambda_extra=lambda_extra)
        for i in range(n_trajectories)
    ]


def run_episodes(tasks: list[EpisodeTask], workers: int = 1) -> list[tuple[Trajectory, OracleResult]]:
    """workers > 1 时多进程执行，结果按任务（种子）顺序合并"""
    results = []
    if workers > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=workers) as executor:
            for i, result in enumerate(executor.map(collect_episode, tasks, chunksize=max(1, len(tasks) // (4 * workers)))):
                results.append(result)
                if (i + 1) % 100 == 0:
                    logging.info(f"collected {i + 1}/{len(tasks)} episodes")
        return results
    for i, task in enumerate(tasks):
        results.append(collect_episode(task))
        if (i + 1) % 100 == 0:
            logging.info(f"collected {i + 1}/{len(tasks)} episodes")
    return results


def collect_dataset(env_config: EnvConfig, agent_config: PacingAgentConfig, n_trajectories: int,
                    explore_sigma: float = 0.0, seed_base: int = 0, workers: int = 1,
                    lambda_extra: float = 0.0) -> tuple[TrajectoryDataset, pd.DataFrame]:
    """
    运行 n 个种子为 seed_base + i 的 episode，返回数据集与每条轨迹对应的事后最优表

    :param explore_sigma: 被记录广告主的探索强度，0 即基础数据集
    """
    if n_trajectories < 1:
        raise InvalidConfigError(f"n_trajectories must be >= 1, got {n_trajectories}")
    if explore_sigma < 0:
        raise InvalidConfigError(f"explore_sigma must be >= 0, got {explore_sigma}")
    env_config.validate()
    tasks = _tasks(env_config, agent_config, n_trajectories, explore_sigma, seed_base, lambda_extra)
    logging.info(f"collecting {n_trajectories} episodes, sigma={explore_sigma}, workers={workers}")
    results = run_episodes(tasks, workers)
    dataset = TrajectoryDataset.from_trajectories(traj for traj, _ in results)
    oracle = oracle_frame([(task.seed, task.logged_advertiser, result) for task, (_, result) in zip(tasks, results)])
    logging.info(f"collected dataset: {len(dataset)} trajectories, "
                 f"R in [{dataset.return_stats.R_min:.3f}, {dataset.return_stats.R_max:.3f}]")
    return dataset, oracle


def oracle_frame(rows: list[tuple[int, int, OracleResult]]) -> pd.DataFrame:
    return pd.DataFrame.from_records([result.to_row(seed, k) for seed, k, result in rows], columns=ORACLE_COLUMNS)


def oracle_table(env_config: EnvConfig, agent_config: PacingAgentConfig, seeds: list[int],
                 advertisers: list[int] = None, workers: int = 1) -> pd.DataFrame:
    """给定种子的 episode 中，指定广告主（默认全部）在冻结价格下的事后最优"""
    advertisers = advertisers if advertisers is not None else list(range(env_config.n_advertisers))
    tasks = [EpisodeTask(env_config=env_config, agent_config=agent_config, seed=s, logged_advertiser=k)
             for s in seeds for k in advertisers]
    results = run_episodes(tasks, workers)
    return oracle_frame([(task.seed, task.logged_advertiser, result) for task, (_, result) in zip(tasks, results)])


class CollectService:
    def __init__(self, workers: int = 1):
        self.workers = workers

    def collect(self, env_config: EnvConfig, agent_config: PacingAgentConfig, n_trajectories: int,
                explore_sigma: float, out_path: str, seed_base: int = 0, oracle_csv: str = None,
                lambda_extra: float = 0.0) -> (TrajectoryDataset, error):
        """
        采集并写出数据集

        :param out_path: 数据集文件
        :param oracle_csv: 事后最优表，可选
        :return: 数据集
        """
        try:
            dataset, oracle = collect_dataset(env_config, agent_config, n_trajectories, explore_sigma,
                                              seed_base, self.workers, lambda_extra)
            dataset_save(dataset, out_path)
            if oracle_csv:
                oracle.to_csv(oracle_csv, index=False)
                logging.info(f"wrote {len(oracle)} oracle rows to {oracle_csv}")
        except Exception as e:
            logging.error(f"collect failed: {e}")
            return None, error.from_exception(e)
        return dataset, error(ErrorCode.SUCCESS, "")

    def oracle(self, env_config: EnvConfig, agent_config: PacingAgentConfig, seeds: list[int],
               advertisers: list[int] = None, out_csv: str = None) -> (pd.DataFrame, error):
        try:
            table = oracle_table(env_config, agent_config, seeds, advertisers, self.workers)
            if out_csv:
                table.to_csv(out_csv, index=False)
        except Exception as e:
            logging.error(f"oracle failed: {e}")
            return None, error.from_exception(e)
        return table, error(ErrorCode.SUCCESS, "")


_collect_service: CollectService = None

def init(workers: int = 1):
    global _collect_service
    _collect_service = CollectService(workers)

def get_instance() -> CollectService:
    global _collect_service
    if _collect_service is None:
        _collect_service = CollectService()
    return _collect_service
