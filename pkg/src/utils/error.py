from enum import Enum
import logging


class ErrorCode(Enum):
    SUCCESS = 0
    # 配置
    CONFIG_ERROR = 1000
    # 数据集 / 轨迹
    DATA_ERROR = 2000
    CORRUPTED_EPISODE = 2001
    NON_FINITE_VALUE = 2002
    VERSION_MISMATCH = 2100
    TRUNCATED_FILE = 2101
    CHECKSUM_FAILURE = 2102
    EMPTY_DATASET = 2200
    # 仿真环境
    SIMULATOR_ERROR = 3000
    POLICY_FAULT = 3001
    # 模型
    MODEL_ERROR = 4000
    SHAPE_MISMATCH = 4001
    TRAINING_DIVERGED = 4002
    LAYOUT_MISMATCH = 4003
    UNKNOWN_CONDITION = 4004
    # 采样
    SAMPLING_ERROR = 5000
    # 评估 / 预言机
    EVAL_ERROR = 6000
    ORACLE_SIZE = 6001
    # 存储
    RLDB_ERROR = 7000
    IO_ERROR = 7001


class error:
    """service 层返回的错误对象，和结果一起以 (value, error) 的形式返回"""
    _error_code: int = 0
    _error_info: str = ""

    def __init__(self, error_code: ErrorCode, error_info: str):
        self._error_code = int(error_code.value)
        self._error_info = error_info
        if self._error_code != 0:
            logging.debug(f"error created: {self}")

    def __str__(self) -> str:
        return f"{self.__class__.__name__}({self._error_code}, {self._error_info})"

    @property
    def code(self) -> int:
        return self._error_code
    @property
    def info(self) -> str:
        return self._error_info
    @property
    def success(self) -> bool:
        return self._error_code == 0

    @classmethod
    def ok(cls) -> "error":
        return cls(ErrorCode.SUCCESS, "")

    @classmethod
    def from_exception(cls, exc: Exception) -> "error":
        if isinstance(exc, LabError):
            return cls(exc.error_code, str(exc))
        if isinstance(exc, OSError):
            return cls(ErrorCode.IO_ERROR, f"{type(exc).__name__}: {exc}")
        return cls(ErrorCode.EVAL_ERROR, f"{type(exc).__name__}: {exc}")


class LabError(Exception):
    """所有核心模块抛出的异常基类"""
    error_code: ErrorCode = ErrorCode.DATA_ERROR

    @property
    def code(self) -> int:
        return int(self.error_code.value)


class InvalidConfigError(LabError, ValueError):
    error_code = ErrorCode.CONFIG_ERROR

class CorruptedEpisodeError(LabError):
    error_code = ErrorCode.CORRUPTED_EPISODE

class NonFiniteValueError(LabError, ValueError):
    error_code = ErrorCode.NON_FINITE_VALUE

class VersionMismatchError(LabError):
    error_code = ErrorCode.VERSION_MISMATCH

class TruncatedFileError(LabError):
    error_code = ErrorCode.TRUNCATED_FILE

class ChecksumError(LabError):
    error_code = ErrorCode.CHECKSUM_FAILURE

class EmptyDatasetError(LabError):
    error_code = ErrorCode.EMPTY_DATASET

class PolicyFaultError(LabError):
    error_code = ErrorCode.POLICY_FAULT

    def __init__(self, advertiser: int, message: str):
        super().__init__(f"advertiser {advertiser}: {message}")
        self.advertiser = advertiser

class ShapeMismatchError(LabError, ValueError):
    error_code = ErrorCode.SHAPE_MISMATCH

class TrainingDivergedError(LabError):
    error_code = ErrorCode.TRAINING_DIVERGED

    def __init__(self, step: int, lr: float, grad_norm: float, loss: float):
        super().__init__(f"non-finite loss {loss} at step {step} (lr={lr}, grad_norm={grad_norm})")
        self.step = step
        self.lr = lr
        self.grad_norm = grad_norm

class LayoutMismatchError(LabError):
    error_code = ErrorCode.LAYOUT_MISMATCH

class UnknownConditionError(LabError, KeyError):
    error_code = ErrorCode.UNKNOWN_CONDITION

    def __str__(self) -> str:
        return str(self.args[0]) if self.args else ""

class SamplingError(LabError):
    error_code = ErrorCode.SAMPLING_ERROR

    def __init__(self, step: int, message: str):
        super().__init__(f"diffusion step {step}: {message}")
        self.step = step

class OracleSizeError(LabError, ValueError):
    error_code = ErrorCode.ORACLE_SIZE

class SimulatorFinishedError(LabError):
    error_code = ErrorCode.SIMULATOR_ERROR

class EvalError(LabError):
    error_code = ErrorCode.EVAL_ERROR
