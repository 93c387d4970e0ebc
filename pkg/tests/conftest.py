import os
import sys

import pytest

sys.path.insert(0, os.path.join(os.path.dirname(os.path.abspath(__file__)), "../src"))

from agents.pacing_agent import PacingAgentConfig
from diffusion.denoiser import DenoiserConfig, TrainHyper
from diffusion.invdyn import InvDynConfig, InvDynHyper
from services.collect import collect_dataset
from services.training import ExperimentConfig, ScheduleConfig, train_bundle
from simulator.env import EnvConfig

TINY_T = 8


@pytest.fixture(scope="session")
def tiny_env() -> EnvConfig:
    return EnvConfig(n_advertisers=4, T=TINY_T, n_min=5, n_max=10, budget_min=20.0, budget_max=40.0, seed=0)


@pytest.fixture(scope="session")
def tiny_model_config() -> DenoiserConfig:
    return DenoiserConfig(horizon=TINY_T, n_blocks=2, channels=(8,), embed_dim=8, embed_hidden=16,
                          kernel_size=3, n_groups=4)


@pytest.fixture(scope="session")
def tiny_experiment(tiny_env, tiny_model_config) -> ExperimentConfig:
    return ExperimentConfig(
        env=tiny_env,
        agent=PacingAgentConfig(),
        explore_sigma=0.3,
        model=tiny_model_config,
        schedule=ScheduleConfig(K=3),
        train=TrainHyper(epochs=2, batch_frac=0.5, log_every=0),
        invdyn=InvDynConfig(hidden=8),
        invdyn_hyper=InvDynHyper(epochs=2, batch_size=16, log_every=0),
    )


@pytest.fixture(scope="session")
def tiny_dataset(tiny_env):
    dataset, _ = collect_dataset(tiny_env, PacingAgentConfig(), 12, explore_sigma=0.3)
    return dataset


@pytest.fixture(scope="session")
def tiny_bundle(tiny_dataset, tiny_experiment):
    return train_bundle(tiny_dataset, tiny_experiment)
