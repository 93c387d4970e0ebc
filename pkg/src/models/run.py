# -*- coding: utf-8 -*-
# 评估 / sweep 结果的登记表

import json
import math
from dataclasses import asdict, dataclass, field
from datetime import datetime

from sqlalchemy import Column, Float, Integer, String, Text
from utils.rldb import RLDBBaseModel


class RunRecordRLDBModel(RLDBBaseModel):
    __tablename__ = 'runs'
    kind = Column(String(32), index=True)
    policy = Column(String(64), index=True)
    axis = Column(String(32), nullable=True)
    value = Column(String(64), nullable=True)
    seed = Column(Integer)
    budget = Column(Float)
    top_k_score = Column(Float)
    mean = Column(Float)
    std = Column(Float)
    oracle_mean = Column(Float, nullable=True)
    oracle_ratio = Column(Float, nullable=True)
    failed = Column(Integer, default=0)
    status = Column(String(16), default="ok")
    config = Column(Text)


def _nullable(value: float | None) -> float | None:
    if value is None or (isinstance(value, float) and math.isnan(value)):
        return None
    return float(value)


@dataclass
class RunRecord:
    # evaluate / sweep
    kind: str = "evaluate"
    # diffbid / pacing / oracle
    policy: str = "diffbid"
    # sweep 轴，evaluate 时为空
    axis: str = ""
    value: str = ""
    seed: int = 0
    budget: float = 0.0
    top_k_score: float = 0.0
    mean: float = 0.0
    std: float = 0.0
    oracle_mean: float | None = None
    oracle_ratio: float | None = None
    failed: int = 0
    # ok / failed
    status: str = "ok"
    config: dict = field(default_factory=dict)
    id: str = ""
    created_at: datetime = None

    def to_dict(self) -> dict:
        data = asdict(self)
        data['created_at'] = int(self.created_at.timestamp()) if self.created_at else None
        return data

    def to_rldb_model(self) -> RunRecordRLDBModel:
        return RunRecordRLDBModel(
            id=self.id or None,
            kind=self.kind,
            policy=self.policy,
            axis=self.axis,
            value=self.value,
            seed=self.seed,
            budget=self.budget,
            top_k_score=self.top_k_score,
            mean=self.mean,
            std=self.std,
            oracle_mean=_nullable(self.oracle_mean),
            oracle_ratio=_nullable(self.oracle_ratio),
            failed=self.failed,
            status=self.status,
            config=json.dumps(self.config, ensure_ascii=False, sort_keys=True),
        )

    @classmethod
    def from_rldb_model(cls, data: RunRecordRLDBModel) -> "RunRecord":
        return cls(
            id=data.id,
            kind=data.kind,
            policy=data.policy,
            axis=data.axis or "",
            value=data.value or "",
            seed=data.seed,
            budget=data.budget,
            top_k_score=data.top_k_score,
            mean=data.mean,
            std=data.std,
            oracle_mean=data.oracle_mean,
            oracle_ratio=data.oracle_ratio,
            failed=data.failed,
            status=data.status,
            config=json.loads(data.config) if data.config else {},
            created_at=data.created_at,
        )
