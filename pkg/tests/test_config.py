import configparser

import pytest

from services.evaluation import EvalConfig
from services.training import ExperimentConfig
from simulator.env import EnvConfig
from utils.config import get_list, get_optional_float
from utils.error import ErrorCode, InvalidConfigError, PolicyFaultError, error


def _conf(text: str) -> configparser.ConfigParser:
    conf = configparser.ConfigParser()
    conf.read_string(text)
    return conf


def test_list_and_optional_values():
    conf = _conf("[eval]\nbudgets = 1500, 2000 ,2500\nempty =\n")
    assert get_list(conf, "eval", "budgets", [], float) == [1500.0, 2000.0, 2500.0]
    assert get_list(conf, "eval", "empty", [1.0], float) == [1.0]
    assert get_optional_float(conf, "eval", "empty") is None
    assert get_optional_float(conf, "eval", "missing") is None


def test_impression_presets():
    assert (EnvConfig.from_config(_conf("[env]\n")).n_min, EnvConfig.from_config(_conf("[env]\n")).n_max) == (50, 300)
    body = EnvConfig.from_config(_conf("[env]\npreset = body\n"))
    assert (body.n_min, body.n_max) == (100, 500)
    with pytest.raises(InvalidConfigError):
        EnvConfig.from_config(_conf("[env]\npreset = huge\n"))


def test_experiment_config_wires_sections():
    conf = _conf("[env]\nT = 12\nn_constraints = 1\n[model]\nK = 7\n[sampler]\nomega = 1.5\nschedule_offset = 0.2\n"
                 "[conditions]\nlayout = return, cpc_ok\n[invdyn]\naction_mode = multiplicative\n")
    experiment = ExperimentConfig.from_config(conf, seed=9)
    assert experiment.env.seed == 9
    assert experiment.train.seed == 9
    assert experiment.model.horizon == 12
    assert experiment.model.cond_dim == 2
    assert experiment.invdyn.action_dim == 2
    assert experiment.invdyn.action_mode == "multiplicative"
    assert experiment.schedule.K == 7
    assert experiment.schedule.gamma == 0.2
    assert experiment.sampler.omega == 1.5


def test_eval_config_overrides():
    config = EvalConfig.from_config(_conf("[eval]\nbudgets = 10,20\nn_runs = 4\ntop_k = 2\n"), workers=3)
    assert config.budgets == (10.0, 20.0)
    assert config.workers == 3


def test_error_from_exception():
    assert error.from_exception(PolicyFaultError(3, "nan")).code == ErrorCode.POLICY_FAULT.value
    assert error.from_exception(FileNotFoundError("x")).code == ErrorCode.IO_ERROR.value
    assert error.from_exception(RuntimeError("x")).code == ErrorCode.EVAL_ERROR.value
    assert error.ok().success
