# -*- coding: utf-8 -*-
# 噪声预测网络 ε_θ：时序残差卷积块 + 时间步/条件嵌入，以及训练循环

import configparser
import copy
import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np
import torch
from torch import nn

from utils.config import get_list
from utils.error import EmptyDatasetError, InvalidConfigError, NonFiniteValueError, ShapeMismatchError, TrainingDivergedError
from .schedule import NoiseSchedule, forward_sample

DTYPE = torch.float64


@dataclass(frozen=True)
class DenoiserConfig:
    horizon: int = 96
    state_dim: int = 5
    n_blocks: int = 3
    channels: tuple[int, ...] = (32, 64)
    embed_dim: int = 128
    embed_hidden: int = 256
    cond_dim: int = 1
    dropout_p: float = 0.2
    kernel_size: int = 5
    n_groups: int = 8

    def __post_init__(self):
        object.__setattr__(self, "channels", tuple(int(c) for c in self.channels))
        positive = (self.horizon, self.state_dim, self.n_blocks, self.embed_dim, self.embed_hidden,
                    self.cond_dim, self.kernel_size, self.n_groups) + self.channels
        if not self.channels or any(v <= 0 for v in positive):
            raise InvalidConfigError(f"denoiser sizes must be positive: {self}")
        if not 0 <= self.dropout_p < 1:
            raise InvalidConfigError(f"dropout_p must be in [0, 1), got {self.dropout_p}")
        if self.kernel_size % 2 == 0:
            raise InvalidConfigError("kernel_size must be odd to keep the horizon length")

    @property
    def block_widths(self) -> tuple[int, ...]:
        return tuple(self.channels[min(i, len(self.channels) - 1)] for i in range(self.n_blocks))

    def to_dict(self) -> dict:
        data = dict(self.__dict__)
        data["channels"] = list(self.channels)
        return data

    @classmethod
    def from_dict(cls, data: dict) -> "DenoiserConfig":
        return cls(**{**data, "channels": tuple(data["channels"])})

    @classmethod
    def from_config(cls, conf: configparser.ConfigParser, section: str = "model", **overrides) -> "DenoiserConfig":
        d = cls()
        config = cls(
            n_blocks=conf.getint(section, "n_blocks", fallback=d.n_blocks),
            channels=tuple(get_list(conf, section, "channels", list(d.channels), int)),
            embed_dim=conf.getint(section, "embed_dim", fallback=d.embed_dim),
            embed_hidden=conf.getint(section, "embed_hidden", fallback=d.embed_hidden),
            dropout_p=conf.getfloat(section, "dropout_p", fallback=d.dropout_p),
            kernel_size=conf.getint(section, "kernel_size", fallback=d.kernel_size),
        )
        return replace(config, **overrides)


class SinusoidalEmbedding(nn.Module):
    def __init__(self, dim: int):
        super().__init__()
        self.dim = dim

    def forward(self, k: torch.Tensor) -> torch.Tensor:
        half = self.dim // 2
        scale = math.log(10000.0) / max(half - 1, 1)
        freqs = torch.exp(torch.arange(half, dtype=k.dtype, device=k.device) * -scale)
        args = k[:, None] * freqs[None, :]
        emb = torch.cat([args.sin(), args.cos()], dim=-1)
        if self.dim % 2:
            emb = torch.nn.functional.pad(emb, (0, 1))
        return emb


class ResidualTemporalBlock(nn.Module):
    """两层时序卷积 + GroupNorm + Mish，嵌入加在第一层卷积的激活上"""

    def __init__(self, in_channels: int, out_channels: int, embed_total: int, kernel_size: int, n_groups: int):
        super().__init__()
        padding = kernel_size // 2
        groups = math.gcd(n_groups, out_channels)
        self.conv1 = nn.Conv1d(in_channels, out_channels, kernel_size, padding=padding)
        self.norm1 = nn.GroupNorm(groups, out_channels)
        self.conv2 = nn.Conv1d(out_channels, out_channels, kernel_size, padding=padding)
        self.norm2 = nn.GroupNorm(groups, out_channels)
        self.act = nn.Mish()
        self.embed_proj = nn.Sequential(nn.Mish(), nn.Linear(embed_total, out_channels))
        self.residual = nn.Conv1d(in_channels, out_channels, 1) if in_channels != out_channels else nn.Identity()

    def forward(self, x: torch.Tensor, emb: torch.Tensor) -> torch.Tensor:
        h = self.act(self.norm1(self.conv1(x))) + self.embed_proj(emb)[:, :, None]
        h = self.act(self.norm2(self.conv2(h)))
        return h + self.residual(x)


class TemporalDenoiser(nn.Module):
    def __init__(self, config: DenoiserConfig):
        super().__init__()
        self.config = config
        E, H = config.embed_dim, config.embed_hidden
        self.time_mlp = nn.Sequential(SinusoidalEmbedding(E), nn.Linear(E, H), nn.Mish(), nn.Linear(H, E))
        self.cond_mlp = nn.Sequential(nn.Linear(config.cond_dim, H), nn.Mish(), nn.Linear(H, E))
        # 无条件分支使用的可学习 null 嵌入
        self.null_embedding = nn.Parameter(torch.empty(E).uniform_(-1.0 / math.sqrt(E), 1.0 / math.sqrt(E)))
        # 单个槽位缺省时的可学习填充值
        self.slot_null = nn.Parameter(torch.zeros(config.cond_dim))
        blocks = []
        width_in = config.state_dim
        for width in config.block_widths:
            blocks.append(ResidualTemporalBlock(width_in, width, 2 * E, config.kernel_size, config.n_groups))
            width_in = width
        self.blocks = nn.ModuleList(blocks)
        self.final = nn.Conv1d(width_in, config.state_dim, 1)

    def condition_embedding(self, y: torch.Tensor | None, batch: int, drop_mask: torch.Tensor | None) -> torch.Tensor:
        null = self.null_embedding[None, :].expand(batch, -1)
        if y is None:
            return null
        if y.shape != (batch, self.config.cond_dim):
            raise ShapeMismatchError(f"condition must be ({batch}, {self.config.cond_dim}), got {tuple(y.shape)}")
        # 全为 NaN 的行走 null 分支，部分 NaN 的槽位用 slot_null 填充
        absent = torch.isnan(y)
        missing = absent.all(dim=-1)
        filled = torch.where(absent, self.slot_null[None, :].expand(batch, -1), torch.nan_to_num(y, nan=0.0))
        emb = self.cond_mlp(filled)
        if drop_mask is not None:
            missing = missing | drop_mask
        return torch.where(missing[:, None], null, emb)

    def forward(self, x: torch.Tensor, k, y: torch.Tensor | None = None, drop_mask: torch.Tensor | None = None) -> torch.Tensor:
        B = x.shape[0]
        k = torch.as_tensor(k, dtype=x.dtype, device=x.device).reshape(-1).expand(B)
        emb = torch.cat([self.time_mlp(k), self.condition_embedding(y, B, drop_mask)], dim=-1)
        h = x.transpose(1, 2)
        for block in self.blocks:
            h = block(h, emb)
        return self.final(h).transpose(1, 2)


@dataclass
class DenoiserParams:
    model: TemporalDenoiser
    # 指数滑动平均的影子权重，生成时使用
    ema: TemporalDenoiser
    config: DenoiserConfig
    losses: list[float] = field(default_factory=list)


@dataclass(frozen=True)
class TrainHyper:
    lr: float = 1e-4
    batch_frac: float = 0.02
    epochs: int = 500
    ema_period: int = 4
    ema_decay: float = 0.995
    ema_start: int = 0
    seed: int = 0
    threads: int = 1
    log_every: int = 50

    @classmethod
    def from_config(cls, conf: configparser.ConfigParser, section: str = "train", **overrides) -> "TrainHyper":
        d = cls()
        hyper = cls(
            lr=conf.getfloat(section, "lr", fallback=d.lr),
            batch_frac=conf.getfloat(section, "batch_frac", fallback=d.batch_frac),
            epochs=conf.getint(section, "epochs", fallback=d.epochs),
            ema_period=conf.getint(section, "ema_period", fallback=d.ema_period),
            ema_decay=conf.getfloat(section, "ema_decay", fallback=d.ema_decay),
            ema_start=conf.getint(section, "ema_start", fallback=d.ema_start),
            seed=conf.getint(section, "seed", fallback=d.seed),
            threads=conf.getint(section, "threads", fallback=d.threads),
        )
        return replace(hyper, **overrides)


def init_denoiser(config: DenoiserConfig, seed: int = 0) -> TemporalDenoiser:
    """默认的 fan-in 均匀初始化；同一种子得到逐位相同的参数"""
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        model = TemporalDenoiser(config)
    return model.to(DTYPE)


def count_parameters(model: nn.Module) -> int:
    return sum(p.numel() for p in model.parameters())


def _as_tensor(value) -> torch.Tensor:
    if torch.is_tensor(value):
        return value.to(DTYPE)
    return torch.as_tensor(np.asarray(value, dtype=np.float64))


def predict_noise(model: TemporalDenoiser, x_k, k, y=None) -> torch.Tensor:
    """
    ε_θ(x_k, y, k)。x_k 可为 (T, D) 或 (B, T, D)；y 为 None 时走无条件分支。
    """
    x = _as_tensor(x_k)
    single = x.dim() == 2
    if single:
        x = x[None]
    if not torch.isfinite(x).all():
        raise NonFiniteValueError("x_k contains non-finite values")
    cond = None
    if y is not None:
        cond = _as_tensor(y)
        if cond.dim() == 1:
            cond = cond[None].expand(x.shape[0], -1)
        if cond.shape[-1] != model.config.cond_dim:
            raise ShapeMismatchError(f"condition has {cond.shape[-1]} slots, model expects {model.config.cond_dim}")
    out = model(x, k, cond)
    return out[0] if single else out


def denoiser_loss(model: TemporalDenoiser, schedule: NoiseSchedule, x0: torch.Tensor, y: torch.Tensor | None,
                  k: torch.Tensor, eps: torch.Tensor, drop_mask: torch.Tensor | None = None) -> torch.Tensor:
    """‖ε - ε_θ(x_k, y, k)‖² 的均值"""
    x_k = forward_sample(schedule, x0, k, eps)
    return torch.mean((eps - model(x_k, k, y, drop_mask)) ** 2)


@torch.no_grad()
def update_ema(ema: nn.Module, model: nn.Module, decay: float):
    for shadow, param in zip(ema.parameters(), model.parameters()):
        shadow.mul_(decay).add_(param, alpha=1.0 - decay)


def _grad_norm(model: nn.Module) -> float:
    total = 0.0
    for p in model.parameters():
        if p.grad is not None:
            total += float(torch.sum(p.grad.detach() ** 2))
    return math.sqrt(total)


def train_denoiser(x0: np.ndarray, y: np.ndarray, schedule: NoiseSchedule, config: DenoiserConfig,
                   hyper: TrainHyper = TrainHyper()) -> DenoiserParams:
    """
    按批采样 k ~ U{1..K}、ε ~ N(0, I)，以概率 dropout_p 丢弃整行条件，多槽位时再按槽位丢弃，最小化噪声预测误差；
    每 ema_period 步更新一次 EMA 影子权重。

    :param x0: (N, T, D) 归一化后的状态轨迹
    :param y: (N, cond_dim) 条件向量
    """
    x0 = np.asarray(x0, dtype=np.float64)
    if x0.ndim != 3 or x0.shape[0] == 0:
        raise EmptyDatasetError(f"training needs a non-empty (N, T, D) array, got shape {x0.shape}")
    if x0.shape[1:] != (config.horizon, config.state_dim):
        raise ShapeMismatchError(f"trajectories {x0.shape[1:]} do not match config ({config.horizon}, {config.state_dim})")
    y = np.asarray(y, dtype=np.float64).reshape(x0.shape[0], -1)
    if y.shape[1] != config.cond_dim:
        raise ShapeMismatchError(f"conditions have {y.shape[1]} slots, config expects {config.cond_dim}")
    if hyper.threads > 0:
        torch.set_num_threads(hyper.threads)

    generator = torch.Generator().manual_seed(hyper.seed)
    model = init_denoiser(config, hyper.seed)
    ema = copy.deepcopy(model)
    optimizer = torch.optim.Adam(model.parameters(), lr=hyper.lr)
    X = torch.as_tensor(x0)
    Y = torch.as_tensor(y)
    N = X.shape[0]
    batch_size = max(1, int(round(hyper.batch_frac * N)))
    K = schedule.K
    logging.info(f"train denoiser: N={N}, batch={batch_size}, epochs={hyper.epochs}, K={K}, lr={hyper.lr}")

    params = DenoiserParams(model=model, ema=ema, config=config)
    step = 0
    for epoch in range(hyper.epochs):
        perm = torch.randperm(N, generator=generator)
        epoch_loss, n_batches = 0.0, 0
        for start in range(0, N, batch_size):
            idx = perm[start:start + batch_size]
            B = idx.shape[0]
            k = torch.randint(1, K + 1, (B,), generator=generator)
            eps = torch.randn((B,) + tuple(X.shape[1:]), generator=generator, dtype=DTYPE)
            drop = torch.rand(B, generator=generator, dtype=DTYPE) < config.dropout_p
            y_batch = Y[idx]
            if config.cond_dim > 1:
                slot_drop = torch.rand((B, config.cond_dim), generator=generator, dtype=DTYPE) < config.dropout_p
                y_batch = torch.where(slot_drop, torch.full_like(y_batch, float("nan")), y_batch)
            loss = denoiser_loss(model, schedule, X[idx], y_batch, k, eps, drop)
            optimizer.zero_grad()
            loss.backward()
            if not torch.isfinite(loss):
                raise TrainingDivergedError(step, hyper.lr, _grad_norm(model), float(loss))
            optimizer.step()
            step += 1
            if step % hyper.ema_period == 0:
                update_ema(ema, model, hyper.ema_decay if step >= hyper.ema_start else 0.0)
            epoch_loss += float(loss)
            n_batches += 1
        params.losses.append(epoch_loss / n_batches)
        if hyper.log_every and (epoch + 1) % hyper.log_every == 0:
            logging.info(f"denoiser epoch {epoch + 1}/{hyper.epochs} loss={params.losses[-1]:.5f}")
    return params
