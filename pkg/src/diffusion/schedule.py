# -*- coding: utf-8 -*-
# 余弦噪声调度与前向加噪过程

import math
from dataclasses import dataclass

import numpy as np
import torch

from utils.error import InvalidConfigError, ShapeMismatchError

BETA_MAX = 0.999


def _frozen(array) -> np.ndarray:
    array = np.array(array, dtype=np.float64)
    array.flags.writeable = False
    return array


@dataclass(frozen=True)
class NoiseSchedule:
    K: int
    alpha_bar: np.ndarray   # (K+1,)，alpha_bar[0] = 1
    beta: np.ndarray        # (K+1,)，beta[0] = 0
    alpha: np.ndarray       # 1 - beta
    gamma: float = 0.008
    squared: bool = False

    def __post_init__(self):
        for name in ("alpha_bar", "beta", "alpha"):
            object.__setattr__(self, name, _frozen(getattr(self, name)))
        if self.alpha_bar.shape != (self.K + 1,):
            raise ShapeMismatchError(f"alpha_bar must have K+1={self.K + 1} entries")

    @classmethod
    def from_alpha_bar(cls, alpha_bar, gamma: float = 0.0, squared: bool = False) -> "NoiseSchedule":
        """由任意 ᾱ 序列构造调度，beta_k = 1 - ᾱ_k / ᾱ_{k-1}"""
        alpha_bar = np.asarray(alpha_bar, dtype=np.float64)
        alpha = np.ones_like(alpha_bar)
        alpha[1:] = alpha_bar[1:] / alpha_bar[:-1]
        return cls(K=alpha_bar.size - 1, alpha_bar=alpha_bar, beta=1.0 - alpha, alpha=alpha, gamma=gamma, squared=squared)

    def to_dict(self) -> dict:
        return {"K": self.K, "gamma": self.gamma, "squared": self.squared}

    def tensor(self, name: str, dtype=torch.float64) -> torch.Tensor:
        return torch.as_tensor(getattr(self, name), dtype=dtype)


def cosine_alpha_bar(K: int, gamma: float, squared: bool = False) -> np.ndarray:
    """ᾱ_k = f(k)/f(0)，f(k) = cos(((k/K + γ)/(1 + γ))·π/2)，squared 时取 f²"""
    k = np.arange(K + 1, dtype=np.float64)
    f = np.cos(((k / K + gamma) / (1.0 + gamma)) * math.pi / 2.0)
    if squared:
        f = f ** 2
    return f / f[0]


def cosine_schedule(K: int, gamma: float = 0.008, squared: bool = False) -> NoiseSchedule:
    """
    β_k = 1 - ᾱ_k/ᾱ_{k-1} 裁剪到 ≤ 0.999，ᾱ 再由裁剪后的 α 累乘得到，
    k < K 时与闭式公式一致，末步被裁剪保证 ᾱ_K 严格为正。
    """
    if K < 1:
        raise InvalidConfigError(f"K must be >= 1, got {K}")
    if not gamma > 0:
        raise InvalidConfigError(f"gamma must be > 0, got {gamma}")
    raw = cosine_alpha_bar(K, gamma, squared)
    beta = np.zeros(K + 1)
    beta[1:] = np.minimum(1.0 - raw[1:] / raw[:-1], BETA_MAX)
    alpha = 1.0 - beta
    alpha_bar = np.cumprod(alpha)
    return NoiseSchedule(K=K, alpha_bar=alpha_bar, beta=beta, alpha=alpha, gamma=gamma, squared=squared)


def _coefficient(schedule: NoiseSchedule, name: str, k, like):
    """按 k 取调度系数并广播到 like 的形状；k 可以是标量或批量"""
    if torch.is_tensor(like):
        values = schedule.tensor(name, like.dtype).to(like.device)[torch.as_tensor(k, device=like.device)]
        return values.reshape(values.shape + (1,) * (like.dim() - values.dim()))
    values = np.asarray(getattr(schedule, name))[np.asarray(k)]
    return values.reshape(values.shape + (1,) * (np.ndim(like) - np.ndim(values)))


def _check_step(schedule: NoiseSchedule, k, lo: int):
    k_arr = k.detach().cpu().numpy() if torch.is_tensor(k) else np.asarray(k)
    if np.any(k_arr < lo) or np.any(k_arr > schedule.K):
        raise InvalidConfigError(f"diffusion step outside [{lo}, {schedule.K}]")


def forward_sample(schedule: NoiseSchedule, x0, k, eps):
    """x_k = √ᾱ_k · x0 + √(1-ᾱ_k) · ε，同时支持 numpy 数组和 torch 张量"""
    if tuple(x0.shape) != tuple(eps.shape):
        raise ShapeMismatchError(f"x0 {tuple(x0.shape)} and eps {tuple(eps.shape)} differ")
    _check_step(schedule, k, 0)
    alpha_bar = _coefficient(schedule, "alpha_bar", k, x0)
    if torch.is_tensor(x0):
        return torch.sqrt(alpha_bar) * x0 + torch.sqrt(1.0 - alpha_bar) * eps
    return np.sqrt(alpha_bar) * x0 + np.sqrt(1.0 - alpha_bar) * eps


def forward_step(schedule: NoiseSchedule, x_prev, k, eps):
    """单步马尔可夫加噪 x_k = √α_k · x_{k-1} + √β_k · ε"""
    if tuple(x_prev.shape) != tuple(eps.shape):
        raise ShapeMismatchError("x_prev and eps differ in shape")
    _check_step(schedule, k, 1)
    alpha = _coefficient(schedule, "alpha", k, x_prev)
    beta = _coefficient(schedule, "beta", k, x_prev)
    if torch.is_tensor(x_prev):
        return torch.sqrt(alpha) * x_prev + torch.sqrt(beta) * eps
    return np.sqrt(alpha) * x_prev + np.sqrt(beta) * eps
