# -*- coding: utf-8 -*-
"""
模型检查点的二进制容器

    magic "DBCK" | u32 版本 | u32 段数 | 段 × N | sha256(之前所有字节)
    段 = 4 字节标签 | u64 长度 | 负载

META 为 UTF-8 JSON；SCHD 为 u32 K、f64 γ、u8 squared 后接 ᾱ、β、α 三个 (K+1) 数组；
DNSR / INVD 为小端 float64 参数，按 state_dict 的声明顺序平铺。所有整数均为小端。
"""

import copy
import hashlib
import json
import logging
import os
import struct
from dataclasses import dataclass, field

import numpy as np
import torch
from torch import nn

from models.trajectory import FeatureStats
from utils.error import ChecksumError, LayoutMismatchError, TruncatedFileError, VersionMismatchError
from .conditions import ConditionLayout, ConditionStats
from .denoiser import DTYPE, DenoiserConfig, DenoiserParams, init_denoiser
from .invdyn import InvDynConfig, InvDynParams, init_invdyn
from .sampler import SamplerConfig
from .schedule import NoiseSchedule

MAGIC = b"DBCK"
VERSION = 1
DIGEST_SIZE = 32
KIND_DIFFUSION = "diffusion"
KIND_INVDYN = "invdyn"


def _param_layout(model: nn.Module) -> list[list]:
    return [[name, list(tensor.shape)] for name, tensor in model.state_dict().items()]


def pack_parameters(model: nn.Module) -> bytes:
    """按声明顺序把所有参数展开为小端 float64"""
    chunks = [t.detach().to(DTYPE).reshape(-1).numpy() for t in model.state_dict().values()]
    flat = np.concatenate(chunks) if chunks else np.zeros(0)
    return flat.astype("<f8").tobytes()


def unpack_parameters(model: nn.Module, payload: bytes, layout: list[list]):
    if _param_layout(model) != layout:
        raise LayoutMismatchError("stored parameter layout does not match the configured architecture")
    flat = np.frombuffer(payload, dtype="<f8")
    state = model.state_dict()
    total = sum(t.numel() for t in state.values())
    if flat.size != total:
        raise LayoutMismatchError(f"parameter block has {flat.size} values, architecture needs {total}")
    offset = 0
    restored = {}
    for name, tensor in state.items():
        n = tensor.numel()
        restored[name] = torch.from_numpy(flat[offset:offset + n].copy()).reshape(tensor.shape).to(tensor.dtype)
        offset += n
    model.load_state_dict(restored)


def _pack_schedule(schedule: NoiseSchedule) -> bytes:
    head = struct.pack("<IdB", schedule.K, schedule.gamma, int(schedule.squared))
    arrays = np.concatenate([schedule.alpha_bar, schedule.beta, schedule.alpha]).astype("<f8")
    return head + arrays.tobytes()


def _unpack_schedule(payload: bytes) -> NoiseSchedule:
    head = struct.calcsize("<IdB")
    K, gamma, squared = struct.unpack("<IdB", payload[:head])
    arrays = np.frombuffer(payload[head:], dtype="<f8")
    if arrays.size != 3 * (K + 1):
        raise TruncatedFileError(f"schedule block holds {arrays.size} values, expected {3 * (K + 1)}")
    alpha_bar, beta, alpha = arrays.reshape(3, K + 1)
    return NoiseSchedule(K=K, alpha_bar=alpha_bar, beta=beta, alpha=alpha, gamma=gamma, squared=bool(squared))


def write_container(path: str, sections: list[tuple[bytes, bytes]]):
    body = bytearray(MAGIC)
    body += struct.pack("<II", VERSION, len(sections))
    for tag, payload in sections:
        body += tag + struct.pack("<Q", len(payload)) + payload
    body += hashlib.sha256(bytes(body)).digest()
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    tmp_path = f"{path}.tmp"
    with open(tmp_path, "wb") as fp:
        fp.write(body)
    os.replace(tmp_path, path)


def read_container(path: str) -> dict[bytes, bytes]:
    """先校验结构（截断），再校验 sha256"""
    with open(path, "rb") as fp:
        data = fp.read()
    if len(data) < 12:
        raise TruncatedFileError(f"{path}: {len(data)} bytes is shorter than the header")
    if data[:4] != MAGIC:
        raise VersionMismatchError(f"{path}: not a checkpoint (magic {data[:4]!r})")
    version, count = struct.unpack("<II", data[4:12])
    if version != VERSION:
        raise VersionMismatchError(f"{path}: checkpoint version {version}, supported {VERSION}")
    sections = {}
    offset = 12
    for _ in range(count):
        if offset + 12 > len(data):
            raise TruncatedFileError(f"{path}: section header cut at byte {offset}")
        tag = data[offset:offset + 4]
        (length,) = struct.unpack("<Q", data[offset + 4:offset + 12])
        offset += 12
        if offset + length > len(data):
            raise TruncatedFileError(f"{path}: section {tag!r} needs {length} bytes")
        sections[tag] = data[offset:offset + length]
        offset += length
    if len(data) - offset != DIGEST_SIZE:
        raise TruncatedFileError(f"{path}: checksum trailer missing")
    if hashlib.sha256(data[:offset]).digest() != data[offset:]:
        raise ChecksumError(f"{path}: checksum mismatch")
    return sections


def file_digest(path: str) -> str:
    with open(path, "rb") as fp:
        return hashlib.sha256(fp.read()).hexdigest()


def _require(sections: dict[bytes, bytes], tag: bytes, path: str) -> bytes:
    if tag not in sections:
        raise TruncatedFileError(f"{path}: missing section {tag.decode()}")
    return sections[tag]


def _read_meta(sections: dict[bytes, bytes], path: str, kind: str) -> dict:
    meta = json.loads(_require(sections, b"META", path).decode("utf-8"))
    if meta.get("kind") != kind:
        raise LayoutMismatchError(f"{path}: expected a {kind} checkpoint, found {meta.get('kind')}")
    return meta


@dataclass
class DiffusionCheckpoint:
    params: DenoiserParams
    schedule: NoiseSchedule
    layout: ConditionLayout
    feature_stats: FeatureStats
    condition_stats: ConditionStats
    sampler: SamplerConfig
    meta: dict = field(default_factory=dict)


def save_diffusion_checkpoint(path: str, params: DenoiserParams, schedule: NoiseSchedule, layout: ConditionLayout,
                              feature_stats: FeatureStats, condition_stats: ConditionStats, sampler: SamplerConfig):
    meta = {
        "kind": KIND_DIFFUSION,
        "config": params.config.to_dict(),
        "layout": list(layout.slots),
        "layout_digest": layout.digest,
        "feature_stats": feature_stats.to_dict(),
        "condition_stats": condition_stats.to_dict(),
        "sampler": sampler.to_dict(),
        "schedule": schedule.to_dict(),
        "params": _param_layout(params.model),
        "final_loss": params.losses[-1] if params.losses else None,
    }
    # 在线权重在前，EMA 影子权重在后
    weights = pack_parameters(params.model) + pack_parameters(params.ema)
    write_container(path, [
        (b"META", json.dumps(meta).encode("utf-8")),
        (b"SCHD", _pack_schedule(schedule)),
        (b"DNSR", weights),
    ])
    logging.info(f"saved diffusion checkpoint to {path}")


def load_diffusion_checkpoint(path: str, layout: ConditionLayout = None) -> DiffusionCheckpoint:
    """layout 给出时校验其哈希与检查点一致"""
    sections = read_container(path)
    meta = _read_meta(sections, path, KIND_DIFFUSION)
    stored_layout = ConditionLayout(tuple(meta["layout"]))
    stored_layout.verify(meta["layout_digest"])
    if layout is not None:
        layout.verify(meta["layout_digest"])
    config = DenoiserConfig.from_dict(meta["config"])
    model = init_denoiser(config)
    ema = copy.deepcopy(model)
    payload = _require(sections, b"DNSR", path)
    half = len(payload) // 2
    unpack_parameters(model, payload[:half], meta["params"])
    unpack_parameters(ema, payload[half:], meta["params"])
    model.eval()
    ema.eval()
    return DiffusionCheckpoint(
        params=DenoiserParams(model=model, ema=ema, config=config),
        schedule=_unpack_schedule(_require(sections, b"SCHD", path)),
        layout=stored_layout,
        feature_stats=FeatureStats.from_dict(meta["feature_stats"]),
        condition_stats=ConditionStats.from_dict(meta["condition_stats"]),
        sampler=SamplerConfig(**meta["sampler"]),
        meta=meta,
    )


def save_invdyn_checkpoint(path: str, params: InvDynParams, feature_stats: FeatureStats, layout_digest: str = ""):
    meta = {
        "kind": KIND_INVDYN,
        "config": params.config.to_dict(),
        "action_scale": np.asarray(params.action_scale, dtype=np.float64).tolist(),
        "feature_stats": feature_stats.to_dict(),
        "layout_digest": layout_digest,
        "params": _param_layout(params.model),
        "val_loss": params.val_loss,
    }
    write_container(path, [
        (b"META", json.dumps(meta).encode("utf-8")),
        (b"INVD", pack_parameters(params.model)),
    ])
    logging.info(f"saved inverse dynamics checkpoint to {path}")


def load_invdyn_checkpoint(path: str) -> tuple[InvDynParams, dict]:
    sections = read_container(path)
    meta = _read_meta(sections, path, KIND_INVDYN)
    config = InvDynConfig(**meta["config"])
    model = init_invdyn(config)
    unpack_parameters(model, _require(sections, b"INVD", path), meta["params"])
    model.eval()
    params = InvDynParams(model=model, config=config, action_scale=np.asarray(meta["action_scale"]),
                          val_loss=meta.get("val_loss"))
    return params, meta
