import os

import pandas as pd
import pytest

import main
from models.dataset import dataset_load
from models.trajectory import FEATURES
from utils import config

TINY_INI = """
[log]
log_dir = {root}/logs
console_log_level = WARNING

[env]
n_advertisers = 4
T = 8
n_min = 5
n_max = 10
budget_min = 20
budget_max = 40

[model]
n_blocks = 2
channels = 8
embed_dim = 8
embed_hidden = 16
kernel_size = 3
K = 3

[train]
epochs = 2
batch_frac = 0.5

[invdyn]
hidden = 8
epochs = 2
batch_size = 16

[eval]
budgets = 30
n_runs = 2
top_k = 1

[sqlalchemy]
database_dsn = sqlite://
"""


@pytest.fixture
def workspace(tmp_path):
    ini = tmp_path / "tiny.ini"
    ini.write_text(TINY_INI.format(root=tmp_path), encoding="utf-8")
    yield str(ini), str(tmp_path / "out")
    config.init(None)


def _run(workspace, *argv) -> int:
    ini, out = workspace
    return main.main(["--config", ini, "--out-dir", out, *argv])


def test_collect_train_generate_evaluate(workspace):
    _, out = workspace
    assert _run(workspace, "collect", "--n", "6", "--sigma", "0.2") == 0
    dataset_path = os.path.join(out, "dataset_sigma0.2_n6.jsonl")
    dataset = dataset_load(dataset_path)
    assert len(dataset) == 6
    assert len(pd.read_csv(os.path.join(out, "oracle.csv"))) == 6

    assert _run(workspace, "train-diffusion", "--dataset", dataset_path) == 0
    assert _run(workspace, "train-invdyn", "--dataset", dataset_path) == 0
    bundle_args = ["--diffusion-checkpoint", os.path.join(out, "diffusion.dbck"),
                   "--invdyn-checkpoint", os.path.join(out, "invdyn.dbck")]

    history_csv = os.path.join(out, "history.csv")
    pd.DataFrame(dataset.trajectories[0].states[:3], columns=list(FEATURES)).to_csv(history_csv, index=False)
    assert _run(workspace, "generate", *bundle_args, "--history-csv", history_csv,
                "--condition", "return=0.9") == 0
    generated = pd.read_csv(os.path.join(out, "generated.csv"))
    assert len(generated) == 8
    assert generated["observed"].tolist() == [True] * 3 + [False] * 5

    assert _run(workspace, "evaluate", *bundle_args, "--baseline") == 0
    metrics = pd.read_csv(os.path.join(out, "metrics.csv"))
    assert metrics["policy"].tolist() == ["diffbid", "pacing"]


def test_oracle_command(workspace):
    _, out = workspace
    assert _run(workspace, "oracle", "--n", "2", "--advertisers", "0,1") == 0
    table = pd.read_csv(os.path.join(out, "oracle.csv"))
    assert len(table) == 4
    assert set(table["advertiser"]) == {0, 1}


def test_missing_dataset_fails(workspace):
    assert _run(workspace, "train-diffusion", "--dataset", "does-not-exist.jsonl") == 1


def test_collect_with_env_config_file(workspace, tmp_path):
    _, out = workspace
    env_ini = tmp_path / "env.ini"
    env_ini.write_text("[env]\nn_advertisers = 3\nT = 6\nn_min = 4\nn_max = 6\nbudget_min = 10\nbudget_max = 20\n",
                       encoding="utf-8")
    dataset_path = os.path.join(out, "small_env.jsonl")
    assert _run(workspace, "collect", "--n", "3", "--sigma", "0", "--env-config", str(env_ini),
                "--out", dataset_path) == 0
    dataset = dataset_load(dataset_path)
    assert len(dataset) == 3
    assert all(t.T == 6 for t in dataset.trajectories)
    assert all(10 <= t.budget <= 20 for t in dataset.trajectories)


def test_collect_with_env_preset(workspace):
    _, out = workspace
    dataset_path = os.path.join(out, "body.jsonl")
    assert _run(workspace, "collect", "--n", "2", "--sigma", "0", "--env-config", "body", "--out", dataset_path) == 0
    assert all(t.T == 8 for t in dataset_load(dataset_path).trajectories)
    assert _run(workspace, "collect", "--n", "2", "--env-config", "no-such-preset") == 1
