import numpy as np
import pytest
import torch

from diffusion import sampler
from diffusion.denoiser import init_denoiser
from diffusion.sampler import SamplerConfig, generate_batch, generate_trajectory, guided_epsilon, reverse_step
from diffusion.schedule import NoiseSchedule, cosine_schedule
from utils.error import InvalidConfigError, SamplingError


def _constant_noise(unconditional: float, conditional: float):
    def fake(model, x_k, k, y=None):
        x = torch.as_tensor(x_k)
        return torch.full(x.shape, unconditional if y is None else conditional, dtype=torch.float64)
    return fake


def test_guided_epsilon_mixes_branches(monkeypatch):
    monkeypatch.setattr(sampler, "predict_noise", _constant_noise(1.0, 3.0))
    x = np.zeros((4, 5))
    eps = guided_epsilon(None, x, 2, np.array([0.5]), 0.2)
    assert torch.allclose(eps, torch.full((4, 5), 1.4, dtype=torch.float64), rtol=0, atol=1e-12)


def test_guided_epsilon_is_affine_in_omega(monkeypatch):
    monkeypatch.setattr(sampler, "predict_noise", _constant_noise(-0.7, 2.3))
    x, y = np.zeros((4, 5)), np.array([0.5])
    e0, e_half, e1 = (guided_epsilon(None, x, 1, y, w) for w in (0.0, 0.5, 1.0))
    assert torch.allclose(2.0 * (e_half - e0), e1 - e0, rtol=0, atol=1e-12)
    assert torch.allclose(guided_epsilon(None, x, 1, None, 0.9), e0)


def test_reverse_step_closed_form():
    schedule = NoiseSchedule.from_alpha_bar([1.0, 0.75, 0.5])
    x = np.array([1.0])
    eps = np.array([0.5])
    expected = (1.0 - (1.0 / 3.0) / np.sqrt(0.5) * 0.5) / np.sqrt(2.0 / 3.0)
    out = reverse_step(x, eps, 2, schedule, 0.0, np.array([10.0]))
    assert out[0] == pytest.approx(expected, abs=1e-12)
    assert out[0] == pytest.approx(0.93607, abs=1e-5)
    noisy = reverse_step(x, eps, 2, schedule, 0.5, np.array([1.0]))
    assert noisy[0] == pytest.approx(expected + np.sqrt(0.5 / 3.0), abs=1e-12)


def test_last_reverse_step_adds_no_noise():
    schedule = cosine_schedule(5)
    x, eps = np.full(3, 0.2), np.full(3, 0.1)
    a = reverse_step(x, eps, 1, schedule, 1.0, np.full(3, 5.0))
    b = reverse_step(x, eps, 1, schedule, 1.0, np.zeros(3))
    assert np.array_equal(a, b)
    with pytest.raises(InvalidConfigError):
        reverse_step(x, eps, 0, schedule, 1.0, np.zeros(3))


@pytest.fixture(scope="module")
def untrained(tiny_model_config):
    return init_denoiser(tiny_model_config, seed=5)


@pytest.mark.parametrize("t", [1, 4, 7])
@pytest.mark.parametrize("noised_history", [False, True])
def test_history_is_kept_bit_exact(untrained, t, noised_history):
    history = np.random.default_rng(t).uniform(-1, 1, size=(t, 5))
    config = SamplerConfig(noised_history=noised_history)
    out = generate_trajectory(untrained, cosine_schedule(5), history, np.array([0.8]), config, rng=11)
    assert out.shape == (untrained.config.horizon, 5)
    assert np.array_equal(out[:t], history)
    assert np.all(np.isfinite(out))


def test_generation_is_deterministic_per_seed(untrained):
    schedule = cosine_schedule(5)
    history = np.zeros((2, 5))
    a = generate_trajectory(untrained, schedule, history, np.array([0.5]), SamplerConfig(), rng=3)
    b = generate_trajectory(untrained, schedule, history, np.array([0.5]), SamplerConfig(), rng=3)
    c = generate_trajectory(untrained, schedule, history, np.array([0.5]), SamplerConfig(), rng=4)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)


def test_batch_generation(untrained):
    generator = torch.Generator().manual_seed(0)
    out = generate_batch(untrained, cosine_schedule(3), None, None, SamplerConfig(unit_prior=True), generator, n_samples=4)
    assert out.shape == (4, untrained.config.horizon, 5)


def test_history_must_leave_room(untrained):
    history = np.zeros((untrained.config.horizon, 5))
    with pytest.raises(InvalidConfigError):
        generate_trajectory(untrained, cosine_schedule(3), history, None, SamplerConfig())


def test_non_finite_sample_is_reported(untrained, monkeypatch):
    monkeypatch.setattr(sampler, "predict_noise", _constant_noise(np.nan, np.nan))
    with pytest.raises(SamplingError) as info:
        generate_trajectory(untrained, cosine_schedule(4), np.zeros((1, 5)), None, SamplerConfig())
    assert info.value.step == 4


@pytest.mark.parametrize("kwargs", [{"temperature": 1.5}, {"temperature": -0.1}, {"omega": float("inf")}])
def test_invalid_sampler_config(kwargs):
    with pytest.raises(InvalidConfigError):
        SamplerConfig(**kwargs)


def test_denoiser_runtime_error_names_the_step(untrained, monkeypatch):
    def broken(model, x_k, k, y=None):
        raise RuntimeError("mat1 and mat2 shapes cannot be multiplied")

    monkeypatch.setattr(sampler, "predict_noise", broken)
    with pytest.raises(SamplingError) as info:
        generate_trajectory(untrained, cosine_schedule(4), np.zeros((1, 5)), None, SamplerConfig())
    assert info.value.step == 4
    assert isinstance(info.value.__cause__, RuntimeError)
