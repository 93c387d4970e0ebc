import os

import numpy as np
import pandas as pd
import pytest

from services.export import (PERCENTILES, ExportService, budget_completion, episode_frame, export_curves, export_table,
                             percentile_bands)
from utils.error import ErrorCode, EvalError


def test_episode_frame_columns(tiny_dataset):
    frame = episode_frame(tiny_dataset.trajectories[0])
    assert list(frame.columns) == ["period", "remaining_time", "remaining_budget", "cost", "reward", "lambda_0"]
    assert len(frame) == tiny_dataset.trajectories[0].T


def test_percentile_bands_are_ordered(tiny_dataset):
    bands = percentile_bands(tiny_dataset.trajectories)
    columns = [f"p{q}" for q in PERCENTILES]
    assert np.all(np.diff(bands[columns].to_numpy(), axis=1) >= 0)
    assert np.all(bands["p50"].iloc[0] == 1.0)


def test_budget_completion(tiny_dataset):
    trajectories = tiny_dataset.trajectories
    assert budget_completion(trajectories, 0.0) == 1.0
    assert budget_completion(trajectories, 1.1) == 0.0


def test_export_curves_writes_files(tiny_dataset, tmp_path):
    out = str(tmp_path / "curves")
    result = export_curves(tiny_dataset.trajectories[:3], out, svg=True)
    assert len(result.episode_files) == 3
    assert all(os.path.exists(p) for p in result.episode_files)
    assert pd.read_csv(result.bands_file).shape[0] == tiny_dataset.trajectories[0].T
    summary = pd.read_csv(result.summary_file)
    assert summary["episodes"].tolist() == [3]
    with open(result.svg_file, encoding="utf-8") as fp:
        assert "<svg" in fp.read()


def test_export_table_with_chart(tmp_path):
    table = pd.DataFrame({"policy": ["pacing", "pacing"], "budget": [1500.0, 2000.0], "top_k_score": [1.0, 2.0]})
    path = str(tmp_path / "metrics.csv")
    export_table(table, path, svg=True)
    assert pd.read_csv(path).equals(table)
    assert os.path.exists(str(tmp_path / "metrics.svg"))


def test_export_without_episodes(tmp_path):
    with pytest.raises(EvalError):
        export_curves([], str(tmp_path))
    result, err = ExportService().export_curves([], str(tmp_path))
    assert result is None
    assert err.code == ErrorCode.EVAL_ERROR.value
