# -*- coding: utf-8 -*-
# 反向生成：无分类器引导、去噪单步、历史补全 (inpainting) 与低温采样

import configparser
import math
from dataclasses import dataclass, replace

import numpy as np
import torch

from utils.error import InvalidConfigError, LabError, SamplingError, ShapeMismatchError
from .denoiser import DTYPE, TemporalDenoiser, predict_noise
from .schedule import NoiseSchedule, _coefficient


@dataclass(frozen=True)
class SamplerConfig:
    # 引导系数 ω
    omega: float = 0.2
    # 每步采样方差的乘子
    temperature: float = 0.5
    # True 时 x_K ~ N(0, I)，否则 N(0, β_K I)
    unit_prior: bool = False
    # True 时补全的历史按第 k 步加噪，否则写入干净历史
    noised_history: bool = False

    def __post_init__(self):
        if not np.isfinite(self.omega):
            raise InvalidConfigError(f"omega must be finite, got {self.omega}")
        if not 0.0 <= self.temperature <= 1.0:
            raise InvalidConfigError(f"temperature must be in [0, 1], got {self.temperature}")

    def to_dict(self) -> dict:
        return dict(self.__dict__)

    @classmethod
    def from_config(cls, conf: configparser.ConfigParser, section: str = "sampler", **overrides) -> "SamplerConfig":
        d = cls()
        config = cls(
            omega=conf.getfloat(section, "omega", fallback=d.omega),
            temperature=conf.getfloat(section, "temperature", fallback=d.temperature),
            unit_prior=conf.getboolean(section, "unit_prior", fallback=d.unit_prior),
            noised_history=conf.getboolean(section, "noised_history", fallback=d.noised_history),
        )
        return replace(config, **overrides)


def guided_epsilon(model: TemporalDenoiser, x_k, k: int, y, omega: float) -> torch.Tensor:
    """ε̂ = (1-ω)·ε_θ(x_k, k) + ω·ε_θ(x_k, y, k)，即 ε_u + ω(ε_c - ε_u)"""
    eps_uncond = predict_noise(model, x_k, k, None)
    if y is None or omega == 0:
        return eps_uncond
    eps_cond = predict_noise(model, x_k, k, y)
    return (1.0 - omega) * eps_uncond + omega * eps_cond


def reverse_step(x_k, eps_hat, k: int, schedule: NoiseSchedule, temperature: float, z):
    """
    μ = (x_k - β_k/√(1-ᾱ_k) · ε̂) / √α_k，x_{k-1} = μ + √(temperature·β_k) · z；
    k = 1 时直接返回均值。numpy 与 torch 输入均可。
    """
    if k < 1:
        raise InvalidConfigError(f"reverse step needs k >= 1, got {k}")
    if tuple(x_k.shape) != tuple(eps_hat.shape) or tuple(x_k.shape) != tuple(z.shape):
        raise ShapeMismatchError("x_k, eps_hat and z must share one shape")
    alpha = _coefficient(schedule, "alpha", k, x_k)
    beta = _coefficient(schedule, "beta", k, x_k)
    alpha_bar = _coefficient(schedule, "alpha_bar", k, x_k)
    sqrt = torch.sqrt if torch.is_tensor(x_k) else np.sqrt
    mean = (x_k - beta / sqrt(1.0 - alpha_bar) * eps_hat) / sqrt(alpha)
    if k == 1 or temperature == 0:
        return mean
    return mean + sqrt(temperature * beta) * z


def _prepare_history(history, n_samples: int, horizon: int) -> torch.Tensor:
    hist = torch.as_tensor(np.asarray(history, dtype=np.float64)) if not torch.is_tensor(history) else history.to(DTYPE)
    if hist.dim() == 2:
        hist = hist[None].expand(n_samples, -1, -1)
    if hist.shape[0] != n_samples:
        raise ShapeMismatchError(f"history batch {hist.shape[0]} != n_samples {n_samples}")
    if hist.shape[1] >= horizon:
        raise InvalidConfigError(f"history length t={hist.shape[1]} must be < T={horizon}")
    return hist


@torch.no_grad()
def generate_batch(model: TemporalDenoiser, schedule: NoiseSchedule, history, y, config: SamplerConfig,
                   generator: torch.Generator, n_samples: int = 1) -> torch.Tensor:
    """
    从 x_K 出发逐步去噪，每一步之前把观测到的历史写回前 t 行。

    :param history: (t, D) 或 (n_samples, t, D) 归一化历史状态，t 可为 0
    :param y: 条件向量 (cond_dim,) / (n_samples, cond_dim)，None 为无条件
    :return: (n_samples, T, D)
    """
    T, D = model.config.horizon, model.config.state_dim
    hist = _prepare_history(history if history is not None else np.zeros((0, D)), n_samples, T)
    t = hist.shape[1]
    K = schedule.K
    prior_std = 1.0 if config.unit_prior else math.sqrt(schedule.beta[K])
    x = torch.randn((n_samples, T, D), generator=generator, dtype=DTYPE) * prior_std
    for k in range(K, 0, -1):
        if t > 0:
            if config.noised_history:
                noise = torch.randn(hist.shape, generator=generator, dtype=DTYPE)
                ab = float(schedule.alpha_bar[k])
                x[:, :t] = math.sqrt(ab) * hist + math.sqrt(1.0 - ab) * noise
            else:
                x[:, :t] = hist
        try:
            eps_hat = guided_epsilon(model, x, k, y, config.omega)
        except LabError:
            raise
        except RuntimeError as e:
            raise SamplingError(k, f"denoiser failed: {e}") from e
        z = torch.randn(x.shape, generator=generator, dtype=DTYPE)
        x = reverse_step(x, eps_hat, k, schedule, config.temperature, z)
        if not torch.isfinite(x).all():
            raise SamplingError(k, "non-finite values in the denoised trajectory")
    if t > 0:
        x[:, :t] = hist
    return x


def generate_trajectory(model: TemporalDenoiser, schedule: NoiseSchedule, history, y, config: SamplerConfig,
                        rng: torch.Generator | int = 0) -> np.ndarray:
    """生成一条完整的 (T, D) 状态轨迹，前 t 行与历史逐位相同"""
    generator = rng if isinstance(rng, torch.Generator) else torch.Generator().manual_seed(int(rng))
    return generate_batch(model, schedule, history, y, config, generator, n_samples=1)[0].numpy()
