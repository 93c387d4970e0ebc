# -*- coding: utf-8 -*-
# 离线出价日志数据集及其 JSON-lines 持久化

import hashlib
import json
import logging
import os
from dataclasses import dataclass, field

import numpy as np

from models.trajectory import FeatureStats, Trajectory
from utils.error import ChecksumError, TruncatedFileError, VersionMismatchError

FORMAT_NAME = "diffbid-dataset"
FORMAT_VERSION = 1
# 重新计算的统计量与文件中存储的统计量之间的容差
STATS_TOLERANCE = 1e-12


@dataclass(frozen=True)
class ReturnStats:
    R_min: float = 0.0
    R_max: float = 0.0

    @classmethod
    def from_returns(cls, returns) -> "ReturnStats":
        returns = np.asarray(list(returns), dtype=np.float64)
        if returns.size == 0:
            return cls()
        return cls(R_min=float(returns.min()), R_max=float(returns.max()))

    def to_dict(self) -> dict:
        return {"R_min": self.R_min, "R_max": self.R_max}

    @classmethod
    def from_dict(cls, data: dict) -> "ReturnStats":
        return cls(R_min=float(data["R_min"]), R_max=float(data["R_max"]))


@dataclass(frozen=True)
class TrajectoryDataset:
    trajectories: tuple[Trajectory, ...] = ()
    feature_stats: FeatureStats = field(default_factory=FeatureStats)
    return_stats: ReturnStats = field(default_factory=ReturnStats)

    @classmethod
    def from_trajectories(cls, trajectories) -> "TrajectoryDataset":
        trajectories = tuple(trajectories)
        if trajectories:
            states = np.concatenate([t.states for t in trajectories], axis=0)
        else:
            states = np.zeros((0, 5))
        return cls(
            trajectories=trajectories,
            feature_stats=FeatureStats.from_states(states),
            return_stats=ReturnStats.from_returns(t.total_return for t in trajectories),
        )

    def __len__(self) -> int:
        return len(self.trajectories)

    def states_array(self) -> np.ndarray:
        """(N, T, D) 原始状态"""
        return np.stack([t.states for t in self.trajectories])

    def normalized_states(self, stats: FeatureStats = None) -> np.ndarray:
        return (stats or self.feature_stats).normalize(self.states_array())

    def actions_array(self) -> np.ndarray:
        return np.stack([t.actions for t in self.trajectories])

    def returns(self) -> np.ndarray:
        return np.array([t.total_return for t in self.trajectories], dtype=np.float64)

    def merge(self, other: "TrajectoryDataset") -> "TrajectoryDataset":
        return TrajectoryDataset.from_trajectories(self.trajectories + other.trajectories)


def _stats_match(stored: FeatureStats, recomputed: FeatureStats) -> bool:
    return (np.allclose(stored.min, recomputed.min, rtol=0, atol=STATS_TOLERANCE)
            and np.allclose(stored.max, recomputed.max, rtol=0, atol=STATS_TOLERANCE))


def dataset_save(dataset: TrajectoryDataset, path: str):
    """
    写出数据集：首行为 header（格式、版本、条数、sha256、统计量），其后每行一条轨迹

    :param dataset: 数据集
    :param path: 目标文件
    """
    lines = [json.dumps(t.to_dict(), separators=(",", ":")) for t in dataset.trajectories]
    digest = hashlib.sha256()
    for line in lines:
        digest.update(line.encode("utf-8"))
        digest.update(b"\n")
    header = {
        "format": FORMAT_NAME,
        "version": FORMAT_VERSION,
        "count": len(lines),
        "sha256": digest.hexdigest(),
        "feature_stats": dataset.feature_stats.to_dict(),
        "return_stats": dataset.return_stats.to_dict(),
    }
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    tmp_path = f"{path}.tmp"
    with open(tmp_path, "w", encoding="utf-8") as fp:
        fp.write(json.dumps(header) + "\n")
        for line in lines:
            fp.write(line + "\n")
    os.replace(tmp_path, path)
    logging.info(f"saved {len(lines)} trajectories to {path}")


def dataset_load(path: str) -> TrajectoryDataset:
    """
    读取数据集，任何损坏都整体失败，不返回部分结果

    :param path: 数据集文件
    :return: 数据集
    """
    with open(path, "r", encoding="utf-8") as fp:
        raw_lines = fp.read().split("\n")
    if raw_lines and raw_lines[-1] == "":
        raw_lines.pop()
    if not raw_lines:
        raise TruncatedFileError(f"{path}: missing header")
    try:
        header = json.loads(raw_lines[0])
    except json.JSONDecodeError as e:
        raise TruncatedFileError(f"{path}: unreadable header ({e})") from e
    if header.get("format") != FORMAT_NAME or header.get("version") != FORMAT_VERSION:
        raise VersionMismatchError(
            f"{path}: format {header.get('format')} v{header.get('version')}, expected {FORMAT_NAME} v{FORMAT_VERSION}")

    body = raw_lines[1:]
    count = int(header["count"])
    if len(body) != count:
        raise TruncatedFileError(f"{path}: expected {count} trajectories, found {len(body)} lines")
    trajectories = []
    digest = hashlib.sha256()
    for index, line in enumerate(body):
        try:
            data = json.loads(line)
        except json.JSONDecodeError as e:
            raise TruncatedFileError(f"{path}: trajectory line {index} is truncated ({e})") from e
        digest.update(line.encode("utf-8"))
        digest.update(b"\n")
        trajectories.append(Trajectory.from_dict(data))
    if digest.hexdigest() != header["sha256"]:
        raise ChecksumError(f"{path}: sha256 mismatch")

    dataset = TrajectoryDataset.from_trajectories(trajectories)
    stored = FeatureStats.from_dict(header["feature_stats"])
    if not _stats_match(stored, dataset.feature_stats):
        raise ChecksumError(f"{path}: stored feature_stats disagree with recomputed values")
    logging.info(f"loaded {len(trajectories)} trajectories from {path}")
    return dataset
