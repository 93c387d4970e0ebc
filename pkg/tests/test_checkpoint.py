import struct

import numpy as np
import pytest
import torch

from diffusion.checkpoint import (load_diffusion_checkpoint, load_invdyn_checkpoint, read_container,
                                  save_diffusion_checkpoint, save_invdyn_checkpoint)
from diffusion.conditions import ConditionLayout
from diffusion.denoiser import predict_noise
from diffusion.invdyn import predict_raw
from models.trajectory import FeatureStats
from services.training import load_bundle, train_diffusion, train_inverse_dynamics
from utils.error import ChecksumError, LayoutMismatchError, TruncatedFileError, VersionMismatchError


@pytest.fixture(scope="module")
def artifacts(tiny_dataset, tiny_experiment):
    return train_diffusion(tiny_dataset, tiny_experiment)


@pytest.fixture(scope="module")
def invdyn_params(tiny_dataset, tiny_experiment, artifacts):
    return train_inverse_dynamics(tiny_dataset, tiny_experiment, artifacts.feature_stats)


@pytest.fixture
def diffusion_path(tmp_path, artifacts, tiny_experiment):
    path = str(tmp_path / "diffusion.dbck")
    save_diffusion_checkpoint(path, artifacts.params, artifacts.schedule, artifacts.layout, artifacts.feature_stats,
                              artifacts.condition_stats, tiny_experiment.sampler)
    return path


@pytest.fixture
def invdyn_path(tmp_path, invdyn_params, artifacts):
    path = str(tmp_path / "invdyn.dbck")
    save_invdyn_checkpoint(path, invdyn_params, artifacts.feature_stats, artifacts.layout.digest)
    return path


def _patch(path, edit):
    with open(path, "rb") as fp:
        data = bytearray(fp.read())
    data = edit(data)
    with open(path, "wb") as fp:
        fp.write(bytes(data))


def test_diffusion_checkpoint_round_trip(diffusion_path, artifacts):
    checkpoint = load_diffusion_checkpoint(diffusion_path)
    for a, b in zip(checkpoint.params.ema.parameters(), artifacts.params.ema.parameters()):
        assert torch.equal(a, b)
    for a, b in zip(checkpoint.params.model.parameters(), artifacts.params.model.parameters()):
        assert torch.equal(a, b)
    assert np.array_equal(checkpoint.schedule.alpha_bar, artifacts.schedule.alpha_bar)
    assert checkpoint.layout == artifacts.layout
    assert checkpoint.condition_stats == artifacts.condition_stats
    x = np.zeros((artifacts.params.config.horizon, 5))
    assert torch.equal(predict_noise(checkpoint.params.ema, x, 2, np.array([0.5])),
                       predict_noise(artifacts.params.ema, x, 2, np.array([0.5])))


def test_container_layout(diffusion_path):
    with open(diffusion_path, "rb") as fp:
        head = fp.read(12)
    assert head[:4] == b"DBCK"
    assert struct.unpack("<II", head[4:]) == (1, 3)
    assert set(read_container(diffusion_path)) == {b"META", b"SCHD", b"DNSR"}


def test_version_mismatch(diffusion_path):
    def bump(data):
        data[4:8] = struct.pack("<I", 2)
        return data

    _patch(diffusion_path, bump)
    with pytest.raises(VersionMismatchError):
        load_diffusion_checkpoint(diffusion_path)


def test_flipped_byte_fails_checksum(diffusion_path):
    def flip(data):
        data[len(data) // 2] ^= 0xFF
        return data

    _patch(diffusion_path, flip)
    with pytest.raises(ChecksumError):
        load_diffusion_checkpoint(diffusion_path)


@pytest.mark.parametrize("keep", [10, 100, -10])
def test_truncation(diffusion_path, keep):
    _patch(diffusion_path, lambda data: data[:keep])
    with pytest.raises(TruncatedFileError):
        load_diffusion_checkpoint(diffusion_path)


def test_different_layout_is_rejected(diffusion_path):
    with pytest.raises(LayoutMismatchError):
        load_diffusion_checkpoint(diffusion_path, ConditionLayout(("return", "cpc_ok")))


def test_invdyn_round_trip(invdyn_path, invdyn_params):
    params, meta = load_invdyn_checkpoint(invdyn_path)
    assert np.array_equal(params.action_scale, invdyn_params.action_scale)
    history, next_state = np.zeros((params.L + 1, 5)), np.full(5, 0.1)
    assert np.array_equal(predict_raw(params, history, next_state), predict_raw(invdyn_params, history, next_state))
    assert meta["layout_digest"] == ConditionLayout().digest


def test_wrong_kind(diffusion_path, invdyn_path):
    with pytest.raises(LayoutMismatchError):
        load_invdyn_checkpoint(diffusion_path)
    with pytest.raises(LayoutMismatchError):
        load_diffusion_checkpoint(invdyn_path)


def test_load_bundle_pairs_checkpoints(diffusion_path, invdyn_path):
    bundle = load_bundle(diffusion_path, invdyn_path)
    assert bundle.digest
    assert bundle.horizon == 8


def test_load_bundle_rejects_foreign_statistics(tmp_path, diffusion_path, invdyn_params, artifacts):
    other = str(tmp_path / "other.dbck")
    shifted = FeatureStats(min=artifacts.feature_stats.min - 1.0, max=artifacts.feature_stats.max)
    save_invdyn_checkpoint(other, invdyn_params, shifted, artifacts.layout.digest)
    with pytest.raises(LayoutMismatchError):
        load_bundle(diffusion_path, other)
