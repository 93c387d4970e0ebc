# -*- coding: utf-8 -*-
# 有限差分梯度校验：在随机参数坐标上比较反向传播梯度与中心差分

from typing import Callable

import torch
from torch import nn

# 相对误差分母的下限，避免梯度接近 0 时放大舍入误差
REL_FLOOR = 1e-6


def finite_diff_check(model: nn.Module, loss_fn: Callable[[nn.Module], torch.Tensor], n_coords: int,
                      seed: int = 0, h: float = 1e-4) -> float:
    """
    :param model: float64 模型
    :param loss_fn: 给定模型返回标量损失，必须对同一模型是确定性的
    :param n_coords: 抽查的参数坐标个数
    :return: 最大相对误差 |g - g_fd| / max(|g|, |g_fd|, REL_FLOOR)
    """
    if n_coords < 1:
        raise ValueError(f"n_coords must be >= 1, got {n_coords}")
    params = [p for p in model.parameters() if p.requires_grad]
    model.zero_grad()
    loss_fn(model).backward()
    grads = [p.grad.detach().clone() if p.grad is not None else torch.zeros_like(p) for p in params]
    model.zero_grad()

    sizes = torch.tensor([p.numel() for p in params])
    offsets = torch.cumsum(sizes, 0) - sizes
    generator = torch.Generator().manual_seed(seed)
    coords = torch.randint(0, int(sizes.sum()), (n_coords,), generator=generator)

    worst = 0.0
    with torch.no_grad():
        for coord in coords.tolist():
            index = int(torch.searchsorted(offsets, torch.tensor(coord), right=True)) - 1
            local = coord - int(offsets[index])
            flat = params[index].view(-1)
            original = float(flat[local])
            flat[local] = original + h
            plus = float(loss_fn(model))
            flat[local] = original - h
            minus = float(loss_fn(model))
            flat[local] = original
            numeric = (plus - minus) / (2.0 * h)
            analytic = float(grads[index].view(-1)[local])
            denom = max(abs(analytic), abs(numeric), REL_FLOOR)
            worst = max(worst, abs(analytic - numeric) / denom)
    return worst
