# -*- coding: utf-8 -*-
# 训练编排：条件标注 -> 去噪网络 -> 逆动力学 -> 检查点 / 策略包

import configparser
import hashlib
import logging
from dataclasses import dataclass, field, replace

import numpy as np

from agents.diffbid_agent import PolicyBundle
from agents.pacing_agent import PacingAgentConfig
from diffusion.checkpoint import (DiffusionCheckpoint, file_digest, load_diffusion_checkpoint, load_invdyn_checkpoint,
                                  save_diffusion_checkpoint, save_invdyn_checkpoint)
from diffusion.conditions import ConditionLayout, ConditionStats, fit_condition_stats, label_dataset
from diffusion.denoiser import DenoiserConfig, DenoiserParams, TrainHyper, train_denoiser
from diffusion.invdyn import InvDynConfig, InvDynHyper, InvDynParams, train_invdyn
from diffusion.sampler import SamplerConfig
from diffusion.schedule import NoiseSchedule, cosine_schedule
from models.dataset import TrajectoryDataset, dataset_load
from models.trajectory import FeatureStats
from simulator.env import EnvConfig
from utils.config import get_optional_float
from utils.error import EmptyDatasetError, ErrorCode, LayoutMismatchError, error


@dataclass(frozen=True)
class ScheduleConfig:
    K: int = 20
    gamma: float = 0.008
    squared: bool = False

    def build(self) -> NoiseSchedule:
        return cosine_schedule(self.K, self.gamma, self.squared)

    @classmethod
    def from_config(cls, conf: configparser.ConfigParser, section: str = "model") -> "ScheduleConfig":
        d = cls()
        gamma = conf.getfloat(section, "gamma", fallback=d.gamma)
        # [sampler] schedule_offset 为 0.2 的另一种解读，设置时覆盖 gamma
        offset = get_optional_float(conf, "sampler", "schedule_offset")
        return cls(
            K=conf.getint(section, "K", fallback=d.K),
            gamma=offset if offset is not None else gamma,
            squared=conf.getboolean(section, "cosine_squared", fallback=d.squared),
        )


@dataclass(frozen=True)
class ExperimentConfig:
    """一次实验的全部配置，从 INI 读取，缺省项取默认值"""
    env: EnvConfig = field(default_factory=EnvConfig)
    agent: PacingAgentConfig = field(default_factory=PacingAgentConfig)
    explore_sigma: float = 0.0
    model: DenoiserConfig = field(default_factory=DenoiserConfig)
    schedule: ScheduleConfig = field(default_factory=ScheduleConfig)
    train: TrainHyper = field(default_factory=TrainHyper)
    invdyn: InvDynConfig = field(default_factory=InvDynConfig)
    invdyn_hyper: InvDynHyper = field(default_factory=InvDynHyper)
    sampler: SamplerConfig = field(default_factory=SamplerConfig)
    layout: ConditionLayout = field(default_factory=ConditionLayout)
    thresholds: dict = field(default_factory=dict)

    @classmethod
    def from_config(cls, conf: configparser.ConfigParser, seed: int = None) -> "ExperimentConfig":
        env = EnvConfig.from_config(conf)
        layout = ConditionLayout.from_config(conf)
        train = TrainHyper.from_config(conf)
        invdyn_hyper = InvDynHyper.from_config(conf)
        if seed is not None:
            env = env.with_seed(seed)
            train = replace(train, seed=seed)
            invdyn_hyper = replace(invdyn_hyper, seed=seed)
        return cls(
            env=env,
            agent=PacingAgentConfig.from_config(conf),
            explore_sigma=conf.getfloat("agent", "explore_sigma", fallback=0.0),
            model=DenoiserConfig.from_config(conf, horizon=env.T, cond_dim=layout.dim),
            schedule=ScheduleConfig.from_config(conf),
            train=train,
            invdyn=InvDynConfig.from_config(conf, action_dim=env.J + 1, lambda_max=env.lambda_max),
            invdyn_hyper=invdyn_hyper,
            sampler=SamplerConfig.from_config(conf),
            layout=layout,
            thresholds={name: get_optional_float(conf, "conditions", name)
                        for name in ("cpc_threshold", "smoothness_threshold", "early_spend_threshold")},
        )

    def to_dict(self) -> dict:
        return {
            "env": dict(self.env.__dict__),
            "model": self.model.to_dict(),
            "schedule": dict(self.schedule.__dict__),
            "train": dict(self.train.__dict__),
            "invdyn": self.invdyn.to_dict(),
            "sampler": self.sampler.to_dict(),
            "layout": list(self.layout.slots),
        }


@dataclass
class DiffusionArtifacts:
    params: DenoiserParams
    schedule: NoiseSchedule
    layout: ConditionLayout
    feature_stats: FeatureStats
    condition_stats: ConditionStats


def train_diffusion(dataset: TrajectoryDataset, experiment: ExperimentConfig) -> DiffusionArtifacts:
    """按 layout 标注数据集并训练去噪网络；统计量在此冻结"""
    if len(dataset) == 0:
        raise EmptyDatasetError("cannot train on an empty dataset")
    stats = fit_condition_stats(dataset, **{k: v for k, v in experiment.thresholds.items() if v is not None})
    y = label_dataset(dataset, experiment.layout, stats)
    x0 = dataset.normalized_states()
    schedule = experiment.schedule.build()
    config = replace(experiment.model, horizon=x0.shape[1], cond_dim=experiment.layout.dim)
    params = train_denoiser(x0, y, schedule, config, experiment.train)
    return DiffusionArtifacts(params=params, schedule=schedule, layout=experiment.layout,
                              feature_stats=dataset.feature_stats, condition_stats=stats)


def train_inverse_dynamics(dataset: TrajectoryDataset, experiment: ExperimentConfig,
                           feature_stats: FeatureStats = None) -> InvDynParams:
    """在与去噪网络相同的归一化下训练逆动力学"""
    if len(dataset) == 0:
        raise EmptyDatasetError("cannot train on an empty dataset")
    states = dataset.normalized_states(feature_stats)
    actions = dataset.actions_array()
    config = replace(experiment.invdyn, action_dim=actions.shape[-1])
    return train_invdyn(states, actions, config, experiment.invdyn_hyper)


def build_bundle(diffusion: DiffusionArtifacts, invdyn: InvDynParams, sampler: SamplerConfig) -> PolicyBundle:
    return PolicyBundle(
        denoiser=diffusion.params.ema,
        schedule=diffusion.schedule,
        sampler=sampler,
        layout=diffusion.layout,
        condition_stats=diffusion.condition_stats,
        feature_stats=diffusion.feature_stats,
        invdyn=invdyn,
        invdyn_layout_digest=diffusion.layout.digest,
    ).verify()


def train_bundle(dataset: TrajectoryDataset, experiment: ExperimentConfig) -> PolicyBundle:
    diffusion = train_diffusion(dataset, experiment)
    invdyn = train_inverse_dynamics(dataset, experiment, diffusion.feature_stats)
    return build_bundle(diffusion, invdyn, experiment.sampler)


def _same_stats(a: FeatureStats, b: FeatureStats) -> bool:
    return np.array_equal(a.min, b.min) and np.array_equal(a.max, b.max)


def load_bundle(diffusion_path: str, invdyn_path: str, layout: ConditionLayout = None,
                sampler: SamplerConfig = None) -> PolicyBundle:
    """从两个检查点组装策略包；layout 与归一化统计量必须一致"""
    checkpoint: DiffusionCheckpoint = load_diffusion_checkpoint(diffusion_path, layout)
    invdyn, meta = load_invdyn_checkpoint(invdyn_path)
    if meta.get("layout_digest") and meta["layout_digest"] != checkpoint.layout.digest:
        raise LayoutMismatchError(f"{invdyn_path} was trained for layout {meta['layout_digest']}, "
                                  f"{diffusion_path} uses {checkpoint.layout.digest}")
    if not _same_stats(FeatureStats.from_dict(meta["feature_stats"]), checkpoint.feature_stats):
        raise LayoutMismatchError("inverse dynamics and denoiser were trained with different feature statistics")
    digest = hashlib.sha256((file_digest(diffusion_path) + file_digest(invdyn_path)).encode()).hexdigest()
    return PolicyBundle(
        denoiser=checkpoint.params.ema,
        schedule=checkpoint.schedule,
        sampler=sampler or checkpoint.sampler,
        layout=checkpoint.layout,
        condition_stats=checkpoint.condition_stats,
        feature_stats=checkpoint.feature_stats,
        invdyn=invdyn,
        invdyn_layout_digest=meta.get("layout_digest", ""),
        digest=digest,
    ).verify()


class TrainingService:
    def __init__(self, experiment: ExperimentConfig = None):
        self.experiment = experiment or ExperimentConfig()

    def train_diffusion(self, dataset_path: str, out_path: str) -> (DiffusionArtifacts, error):
        """
        训练去噪网络并写出检查点

        :param dataset_path: 数据集文件
        :param out_path: 检查点文件
        """
        try:
            dataset = dataset_load(dataset_path)
            artifacts = train_diffusion(dataset, self.experiment)
            save_diffusion_checkpoint(out_path, artifacts.params, artifacts.schedule, artifacts.layout,
                                      artifacts.feature_stats, artifacts.condition_stats, self.experiment.sampler)
        except Exception as e:
            logging.error(f"train-diffusion failed: {e}")
            return None, error.from_exception(e)
        return artifacts, error(ErrorCode.SUCCESS, "")

    def train_invdyn(self, dataset_path: str, out_path: str) -> (InvDynParams, error):
        """逆动力学与去噪网络共用数据集的归一化统计量和 layout"""
        try:
            dataset = dataset_load(dataset_path)
            params = train_inverse_dynamics(dataset, self.experiment, dataset.feature_stats)
            save_invdyn_checkpoint(out_path, params, dataset.feature_stats, self.experiment.layout.digest)
        except Exception as e:
            logging.error(f"train-invdyn failed: {e}")
            return None, error.from_exception(e)
        return params, error(ErrorCode.SUCCESS, "")

    def load_bundle(self, diffusion_path: str, invdyn_path: str, **sampler_overrides) -> (PolicyBundle, error):
        try:
            bundle = load_bundle(diffusion_path, invdyn_path, self.experiment.layout)
            if sampler_overrides:
                bundle = bundle.with_sampler(**sampler_overrides)
        except Exception as e:
            logging.error(f"load bundle failed: {e}")
            return None, error.from_exception(e)
        return bundle, error(ErrorCode.SUCCESS, "")


_training_service: TrainingService = None

def init(experiment: ExperimentConfig = None):
    global _training_service
    _training_service = TrainingService(experiment)

def get_instance() -> TrainingService:
    global _training_service
    if _training_service is None:
        _training_service = TrainingService()
    return _training_service
