# -*- coding: utf-8 -*-
# 非马尔可夫逆动力学：由历史窗口 s_{t-L:t} 与生成的 s'_{t+1} 预测出价参数 λ

import configparser
import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np
import torch
from torch import nn

from models.trajectory import Action
from utils.error import EmptyDatasetError, InvalidConfigError, ShapeMismatchError, TrainingDivergedError
from .denoiser import DTYPE

ACTION_MODES = ("absolute", "multiplicative")


@dataclass(frozen=True)
class InvDynConfig:
    # 历史长度 L，0 即只用当前状态的马尔可夫消融
    history_len: int = 2
    state_dim: int = 5
    action_dim: int = 1
    hidden: int = 64
    action_mode: str = "absolute"
    lambda_max: float = 500.0

    def __post_init__(self):
        if self.history_len < 0 or self.state_dim < 1 or self.action_dim < 1 or self.hidden < 1:
            raise InvalidConfigError(f"invalid inverse dynamics sizes: {self}")
        if self.action_mode not in ACTION_MODES:
            raise InvalidConfigError(f"action_mode must be one of {ACTION_MODES}, got {self.action_mode}")

    @property
    def input_dim(self) -> int:
        return (self.history_len + 2) * self.state_dim

    def to_dict(self) -> dict:
        return dict(self.__dict__)

    @classmethod
    def from_config(cls, conf: configparser.ConfigParser, section: str = "invdyn", **overrides) -> "InvDynConfig":
        d = cls()
        config = cls(
            history_len=conf.getint(section, "history_len", fallback=d.history_len),
            hidden=conf.getint(section, "hidden", fallback=d.hidden),
            action_mode=conf.get(section, "action_mode", fallback=d.action_mode),
            lambda_max=conf.getfloat("env", "lambda_max", fallback=d.lambda_max),
        )
        return replace(config, **overrides)


@dataclass(frozen=True)
class InvDynHyper:
    lr: float = 1e-3
    epochs: int = 200
    batch_size: int = 256
    seed: int = 0
    validation_frac: float = 0.0
    log_every: int = 50

    @classmethod
    def from_config(cls, conf: configparser.ConfigParser, section: str = "invdyn", **overrides) -> "InvDynHyper":
        d = cls()
        hyper = cls(
            lr=conf.getfloat(section, "lr", fallback=d.lr),
            epochs=conf.getint(section, "epochs", fallback=d.epochs),
            batch_size=conf.getint(section, "batch_size", fallback=d.batch_size),
            seed=conf.getint(section, "seed", fallback=d.seed),
            validation_frac=conf.getfloat(section, "validation_frac", fallback=d.validation_frac),
        )
        return replace(hyper, **overrides)


class InverseDynamics(nn.Module):
    """3 层全连接 + Mish"""

    def __init__(self, config: InvDynConfig):
        super().__init__()
        self.config = config
        self.net = nn.Sequential(
            nn.Linear(config.input_dim, config.hidden),
            nn.Mish(),
            nn.Linear(config.hidden, config.hidden),
            nn.Mish(),
            nn.Linear(config.hidden, config.action_dim),
        )

    def forward(self, inputs: torch.Tensor) -> torch.Tensor:
        return self.net(inputs)


@dataclass
class InvDynParams:
    model: InverseDynamics
    config: InvDynConfig
    # 网络输出乘以该尺度得到 λ（absolute）或 λ 比值（multiplicative）
    action_scale: np.ndarray
    losses: list[float] = field(default_factory=list)
    val_loss: float | None = None

    @property
    def L(self) -> int:
        return self.config.history_len


def init_invdyn(config: InvDynConfig, seed: int = 0) -> InverseDynamics:
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        model = InverseDynamics(config)
    return model.to(DTYPE)


def window_indices(T: int, L: int) -> np.ndarray:
    """(T-1, L+1) 的下标矩阵，t < L 时用 s_0 左侧补齐"""
    t = np.arange(T - 1)[:, None]
    return np.clip(t + np.arange(-L, 1)[None, :], 0, None)


def build_windows(states: np.ndarray, actions: np.ndarray, L: int, action_mode: str = "absolute") -> tuple[np.ndarray, np.ndarray]:
    """
    :param states: (N, T, D) 归一化状态
    :param actions: (N, T, J+1) 记录的 λ
    :return: 输入 (M, (L+2)·D)，目标 (M, J+1)
    """
    states = np.asarray(states, dtype=np.float64)
    actions = np.asarray(actions, dtype=np.float64)
    if states.ndim != 3 or states.shape[0] == 0 or states.shape[1] < 2:
        raise EmptyDatasetError(f"no (history, next state) windows in states of shape {states.shape}")
    N, T, D = states.shape
    idx = window_indices(T, L)
    history = states[:, idx, :].reshape(N, T - 1, (L + 1) * D)
    inputs = np.concatenate([history, states[:, 1:, :]], axis=-1).reshape(-1, (L + 2) * D)
    targets = actions[:, :T - 1, :]
    if action_mode == "multiplicative":
        # t = 0 的比值记为 1
        prev = np.concatenate([actions[:, :1, :], actions[:, :T - 2, :]], axis=1)
        targets = targets / np.maximum(prev, 1e-12)
    return inputs, targets.reshape(-1, actions.shape[-1])


def invdyn_loss(model: InverseDynamics, inputs: torch.Tensor, targets: torch.Tensor) -> torch.Tensor:
    return torch.mean((model(inputs) - targets) ** 2)


def train_invdyn(states: np.ndarray, actions: np.ndarray, config: InvDynConfig,
                 hyper: InvDynHyper = InvDynHyper()) -> InvDynParams:
    """
    在数据集中所有 (s_{t-L:t}, a_t, s_{t+1}) 窗口上最小化动作的均方误差

    :param states: (N, T, D) 归一化状态
    :param actions: (N, T, J+1) 记录的 λ
    """
    states = np.asarray(states, dtype=np.float64)
    actions = np.asarray(actions, dtype=np.float64)
    if states.ndim == 3 and states.shape[0] and states.shape[1] <= config.history_len + 1:
        raise EmptyDatasetError(f"trajectories of length {states.shape[1]} are too short for L={config.history_len}")
    if actions.ndim != 3 or actions.shape[-1] != config.action_dim:
        raise ShapeMismatchError(f"actions must be (N, T, {config.action_dim}), got {actions.shape}")

    generator = torch.Generator().manual_seed(hyper.seed)
    N = states.shape[0]
    n_val = int(math.floor(hyper.validation_frac * N))
    order = torch.randperm(N, generator=generator).numpy() if N else np.arange(0)
    val_ids, train_ids = order[:n_val], order[n_val:]
    inputs, targets = build_windows(states[train_ids], actions[train_ids], config.history_len, config.action_mode)
    if inputs.shape[0] == 0:
        raise EmptyDatasetError("empty window set")

    if config.action_mode == "absolute":
        scale = np.abs(targets).max(axis=0)
        scale = np.where(scale > 0, scale, 1.0)
    else:
        scale = np.ones(config.action_dim)
    X = torch.as_tensor(inputs)
    Y = torch.as_tensor(targets / scale)

    model = init_invdyn(config, hyper.seed)
    optimizer = torch.optim.Adam(model.parameters(), lr=hyper.lr)
    params = InvDynParams(model=model, config=config, action_scale=scale)
    M = X.shape[0]
    batch_size = max(1, min(hyper.batch_size, M))
    logging.info(f"train inverse dynamics: windows={M}, L={config.history_len}, epochs={hyper.epochs}")
    for epoch in range(hyper.epochs):
        perm = torch.randperm(M, generator=generator)
        total, batches = 0.0, 0
        for start in range(0, M, batch_size):
            idx = perm[start:start + batch_size]
            loss = invdyn_loss(model, X[idx], Y[idx])
            optimizer.zero_grad()
            loss.backward()
            if not torch.isfinite(loss):
                raise TrainingDivergedError(epoch, hyper.lr, float("nan"), float(loss))
            optimizer.step()
            total += float(loss)
            batches += 1
        params.losses.append(total / batches)
        if hyper.log_every and (epoch + 1) % hyper.log_every == 0:
            logging.info(f"invdyn epoch {epoch + 1}/{hyper.epochs} loss={params.losses[-1]:.6f}")

    if n_val:
        val_inputs, val_targets = build_windows(states[val_ids], actions[val_ids], config.history_len, config.action_mode)
        with torch.no_grad():
            params.val_loss = float(invdyn_loss(model, torch.as_tensor(val_inputs), torch.as_tensor(val_targets / scale)))
    return params


def predict_raw(params: InvDynParams, history, next_state) -> np.ndarray:
    """未裁剪的网络输出（已乘回尺度）"""
    history = np.asarray(history, dtype=np.float64)
    next_state = np.asarray(next_state, dtype=np.float64).ravel()
    L, D = params.config.history_len, params.config.state_dim
    if history.shape != (L + 1, D) or next_state.shape != (D,):
        raise ShapeMismatchError(f"expected history ({L + 1}, {D}) and next state ({D},), "
                                 f"got {history.shape} and {next_state.shape}")
    inputs = torch.as_tensor(np.concatenate([history.ravel(), next_state]))[None]
    with torch.no_grad():
        out = params.model(inputs)[0].numpy()
    return out * params.action_scale


def pad_history(states: np.ndarray, t: int, L: int) -> np.ndarray:
    """取 s_{t-L:t}，不足时以 s_0 补齐"""
    idx = np.clip(np.arange(t - L, t + 1), 0, None)
    return np.asarray(states)[idx]


def predict_action(params: InvDynParams, history, next_state, lambda_prev=None) -> Action:
    """â_t = f_φ(s_{t-L:t}, s'_{t+1})，裁剪到 [0, λ_max]"""
    raw = predict_raw(params, history, next_state)
    if params.config.action_mode == "multiplicative":
        prev = np.ones_like(raw) if lambda_prev is None else np.asarray(lambda_prev, dtype=np.float64)
        raw = prev * raw
    return Action(tuple(np.clip(raw, 0.0, params.config.lambda_max)))

