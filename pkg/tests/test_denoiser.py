import copy
from dataclasses import replace

import numpy as np
import pytest
import torch
from torch import nn

from diffusion.conditions import ConditionLayout, compose_condition
from diffusion.denoiser import (DenoiserConfig, TrainHyper, count_parameters, denoiser_loss, init_denoiser,
                                predict_noise, train_denoiser, update_ema)
from diffusion.gradcheck import finite_diff_check
from diffusion.schedule import cosine_schedule
from utils.error import ShapeMismatchError, TrainingDivergedError


def expected_parameters(config: DenoiserConfig) -> int:
    E, H, D, c, ks = config.embed_dim, config.embed_hidden, config.state_dim, config.cond_dim, config.kernel_size
    total = (E * H + H + H * E + E) + (c * H + H + H * E + E) + E + c
    width_in = D
    for out in config.block_widths:
        total += width_in * out * ks + out + 2 * out
        total += out * out * ks + out + 2 * out
        total += 2 * E * out + out
        if width_in != out:
            total += width_in * out + out
        width_in = out
    return total + width_in * D + D


def test_parameter_count_closed_form():
    config = DenoiserConfig(horizon=8, n_blocks=2, channels=(8, 16), embed_dim=8, embed_hidden=16,
                            kernel_size=3, n_groups=4)
    model = init_denoiser(config)
    assert count_parameters(model) == expected_parameters(config) == 2750


def test_default_architecture_count():
    config = DenoiserConfig()
    assert count_parameters(init_denoiser(config)) == expected_parameters(config)


def test_output_shape_and_dtype(tiny_model_config):
    model = init_denoiser(tiny_model_config)
    x = torch.zeros(3, tiny_model_config.horizon, 5, dtype=torch.float64)
    out = model(x, torch.tensor([1, 2, 3]), torch.full((3, 1), 0.5, dtype=torch.float64))
    assert out.shape == x.shape
    assert out.dtype == torch.float64
    single = predict_noise(model, np.zeros((tiny_model_config.horizon, 5)), 2, np.array([0.5]))
    assert single.shape == (tiny_model_config.horizon, 5)


def test_init_is_reproducible(tiny_model_config):
    a = init_denoiser(tiny_model_config, seed=3)
    b = init_denoiser(tiny_model_config, seed=3)
    for pa, pb in zip(a.parameters(), b.parameters()):
        assert torch.equal(pa, pb)


def test_missing_condition_uses_null_branch(tiny_model_config):
    model = init_denoiser(tiny_model_config)
    x = np.random.default_rng(0).normal(size=(tiny_model_config.horizon, 5))
    unconditional = predict_noise(model, x, 2, None)
    assert torch.equal(predict_noise(model, x, 2, np.array([np.nan])), unconditional)
    assert not torch.equal(predict_noise(model, x, 2, np.array([0.9])), unconditional)
    dropped = model(torch.as_tensor(x)[None], 2, torch.tensor([[0.9]], dtype=torch.float64),
                    drop_mask=torch.tensor([True]))
    assert torch.equal(dropped[0], unconditional)


def test_partial_condition_still_steers(tiny_model_config):
    layout = ConditionLayout(("return", "cpc_ok", "smoothness_ok", "early_spend_ok"))
    config = replace(tiny_model_config, cond_dim=layout.dim)
    model = init_denoiser(config)
    x = np.random.default_rng(0).normal(size=(config.horizon, 5))
    hi = predict_noise(model, x, 2, compose_condition(layout, 1.0, {"cpc_ok": 1}).values)
    lo = predict_noise(model, x, 2, compose_condition(layout, 0.0, {"cpc_ok": 0}).values)
    unconditional = predict_noise(model, x, 2, None)
    assert not torch.equal(hi, lo)
    assert not torch.equal(hi, unconditional)
    assert not torch.equal(predict_noise(model, x, 2, compose_condition(layout, 1.0).values), unconditional)
    assert torch.equal(predict_noise(model, x, 2, compose_condition(layout).values), unconditional)


def test_training_with_slot_dropout(tiny_model_config):
    config = replace(tiny_model_config, cond_dim=3, dropout_p=0.5)
    rng = np.random.default_rng(1)
    x0 = rng.uniform(-1, 1, size=(6, config.horizon, 5))
    y = rng.integers(0, 2, size=(6, 3)).astype(np.float64)
    params = train_denoiser(x0, y, cosine_schedule(3), config,
                            TrainHyper(epochs=4, batch_frac=0.5, ema_period=1, log_every=0))
    assert all(np.isfinite(params.losses))
    assert not torch.equal(params.model.slot_null, torch.zeros(3, dtype=torch.float64))


def test_condition_width_is_checked(tiny_model_config):
    model = init_denoiser(tiny_model_config)
    with pytest.raises(ShapeMismatchError):
        predict_noise(model, np.zeros((tiny_model_config.horizon, 5)), 1, np.array([0.5, 1.0]))


def test_denoiser_gradients_match_finite_differences(tiny_model_config):
    model = init_denoiser(tiny_model_config, seed=1)
    schedule = cosine_schedule(5)
    generator = torch.Generator().manual_seed(0)
    x0 = torch.rand((2, tiny_model_config.horizon, 5), generator=generator, dtype=torch.float64) * 2 - 1
    eps = torch.randn(x0.shape, generator=generator, dtype=torch.float64)
    k = torch.tensor([2, 4])
    y = torch.tensor([[0.3], [0.7]], dtype=torch.float64)
    worst = finite_diff_check(model, lambda m: denoiser_loss(m, schedule, x0, y, k, eps), n_coords=40, h=1e-5)
    assert worst < 1e-4


def test_gradcheck_on_linear_toy():
    torch.manual_seed(0)
    model = nn.Linear(4, 3).to(torch.float64)
    x = torch.randn(6, 4, dtype=torch.float64)
    target = torch.randn(6, 3, dtype=torch.float64)
    worst = finite_diff_check(model, lambda m: ((m(x) - target) ** 2).sum(), n_coords=15)
    assert worst < 1e-8


def test_update_ema():
    model = nn.Linear(2, 2).to(torch.float64)
    ema = copy.deepcopy(model)
    with torch.no_grad():
        for p in model.parameters():
            p.add_(1.0)
    update_ema(ema, model, 0.5)
    for shadow, param in zip(ema.parameters(), model.parameters()):
        assert torch.allclose(shadow, param - 0.5)
    update_ema(ema, model, 0.0)
    for shadow, param in zip(ema.parameters(), model.parameters()):
        assert torch.equal(shadow, param)


def test_train_denoiser_records_losses(tiny_model_config):
    rng = np.random.default_rng(0)
    x0 = rng.uniform(-1, 1, size=(6, tiny_model_config.horizon, 5))
    y = rng.uniform(0, 1, size=(6, 1))
    params = train_denoiser(x0, y, cosine_schedule(3), tiny_model_config,
                            TrainHyper(epochs=3, batch_frac=0.5, ema_period=1, log_every=0))
    assert len(params.losses) == 3
    assert all(np.isfinite(params.losses))
    assert any(not torch.equal(a, b) for a, b in zip(params.model.parameters(), params.ema.parameters()))


def test_train_denoiser_shape_checks(tiny_model_config):
    with pytest.raises(ShapeMismatchError):
        train_denoiser(np.zeros((2, 5, 5)), np.zeros((2, 1)), cosine_schedule(3), tiny_model_config)


def test_non_finite_loss_stops_training(tiny_model_config):
    x0 = np.zeros((2, tiny_model_config.horizon, 5))
    x0[0, 0, 0] = np.inf
    with pytest.raises(TrainingDivergedError) as info:
        train_denoiser(x0, np.zeros((2, 1)), cosine_schedule(3), tiny_model_config,
                       TrainHyper(epochs=1, batch_frac=1.0, log_every=0))
    assert info.value.step == 0
