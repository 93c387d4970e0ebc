import pandas as pd
import pytest

from models.run import RunRecord, RunRecordRLDBModel
from services.evaluation import EvaluationService
from utils import rldb


@pytest.fixture
def db():
    rldb.init(dsn="sqlite://")
    yield rldb.get_instance()
    rldb.init(dsn="sqlite://")


def test_insert_get_query(db):
    record = RunRecord(kind="evaluate", policy="pacing", budget=2000.0, top_k_score=1.5, oracle_ratio=float("nan"),
                       config={"K": 20})
    run_id = db.insert(record.to_rldb_model())
    loaded = RunRecord.from_rldb_model(db.get(RunRecordRLDBModel, run_id))
    assert loaded.id == run_id
    assert loaded.budget == 2000.0
    assert loaded.oracle_ratio is None
    assert loaded.config == {"K": 20}
    assert loaded.created_at is not None
    assert len(db.query(RunRecordRLDBModel, policy="pacing")) == 1
    assert db.query(RunRecordRLDBModel, policy="diffbid") == []


def test_upsert_and_delete(db):
    model = RunRecord(policy="diffbid", top_k_score=1.0).to_rldb_model()
    run_id = db.insert(model)
    model.top_k_score = 2.0
    assert db.upsert(model) == run_id
    assert db.get(RunRecordRLDBModel, run_id).top_k_score == 2.0
    db.delete(model)
    assert db.get(RunRecordRLDBModel, run_id) is None


def test_evaluation_service_records_rows(db):
    table = pd.DataFrame.from_records([
        {"policy": "diffbid", "budget": 1500.0, "top_k_score": 3.0, "mean": 2.0, "std": 0.5, "failed": 0},
        {"policy": "diffbid", "budget": 2000.0, "top_k_score": 4.0, "mean": 3.0, "std": 0.5, "failed": 1},
    ])
    ids, err = EvaluationService().record(table, "evaluate", 0, {"omega": 0.2})
    assert err.success
    assert len(ids) == 2
    rows = db.query(RunRecordRLDBModel, kind="evaluate")
    assert sorted(r.budget for r in rows) == [1500.0, 2000.0]
