import logging
from typing import Any, Optional

from fastapi import FastAPI
from fastapi.middleware.cors import CORSMiddleware
from pydantic import BaseModel, Field

from agents.diffbid_agent import PolicyBundle, generate_plan
from agents.oracle import hindsight_oracle
from diffusion.conditions import RETURN_SLOT, compose_condition
from services.training import get_instance as get_training_service
from utils import config
from utils.error import ErrorCode, error

api = FastAPI(title="DiffBid generative auto-bidding lab", version="0.1")
api.add_middleware(
    CORSMiddleware,
    allow_origins=["*"],
    allow_credentials=True,
    allow_methods=["*"],
    allow_headers=["*"],
)

class BaseResponse(BaseModel):
    error_code: int
    error_info: str
    data: Optional[Any] = None

def _fail(err: error) -> BaseResponse:
    return BaseResponse(error_code=err.code, error_info=err.info)

# 策略包在首次请求时按 [web_service] 的检查点路径加载，测试可直接注入
_bundle: PolicyBundle = None

def set_bundle(bundle: PolicyBundle):
    global _bundle
    _bundle = bundle

def get_bundle() -> (PolicyBundle, error):
    global _bundle
    if _bundle is not None:
        return _bundle, error(ErrorCode.SUCCESS, "")
    conf = config.get_instance()
    diffusion_path = conf.get("web_service", "diffusion_checkpoint", fallback="")
    invdyn_path = conf.get("web_service", "invdyn_checkpoint", fallback="")
    if not diffusion_path or not invdyn_path:
        return None, error(ErrorCode.CONFIG_ERROR, "web_service.diffusion_checkpoint / invdyn_checkpoint not configured")
    bundle, err = get_training_service().load_bundle(diffusion_path, invdyn_path)
    if not err.success:
        return None, err
    _bundle = bundle
    logging.info(f"policy bundle loaded: {bundle.digest[:16]}")
    return _bundle, err

@api.post("/ping")
async def ping():
    return BaseResponse(error_code=0, error_info="success")

class GenerateRequest(BaseModel):
    # 原始尺度的已观测状态，每行 5 个特征
    history: list[list[float]]
    condition: dict[str, float] = Field(default_factory=dict)
    omega: Optional[float] = None
    temperature: Optional[float] = None
    seed: int = 0
    lambda_prev: Optional[list[float]] = None

@api.post("/generate")
def generate(request: GenerateRequest):
    bundle, err = get_bundle()
    if not err.success:
        return _fail(err)
    try:
        overrides = {k: v for k, v in (("omega", request.omega), ("temperature", request.temperature)) if v is not None}
        if overrides:
            bundle = bundle.with_sampler(**overrides)
        condition = None
        if request.condition:
            indicators = {k: v for k, v in request.condition.items() if k != RETURN_SLOT}
            condition = compose_condition(bundle.layout, request.condition.get(RETURN_SLOT), indicators)
        plan = generate_plan(bundle, request.history, condition, request.seed, request.lambda_prev)
    except Exception as e:
        logging.error(f"generate failed: {e}")
        return _fail(error.from_exception(e))
    data = {
        "states": plan.states.tolist(),
        "period": len(request.history) - 1,
        "action": [float(x) for x in plan.action.lambdas] if plan.action is not None else None,
    }
    return BaseResponse(error_code=0, error_info="success", data=data)

class OracleRequest(BaseModel):
    values: list[float]
    costs: list[float]
    budget: float

@api.post("/oracle")
async def oracle(request: OracleRequest):
    try:
        result = hindsight_oracle(request.values, request.costs, request.budget)
    except Exception as e:
        logging.error(f"oracle failed: {e}")
        return _fail(error.from_exception(e))
    data = {
        "selected": [int(i) for i in result.selected],
        "total_value": result.total_value,
        "total_cost": result.total_cost,
        "lambda_star": result.lambda_star,
    }
    return BaseResponse(error_code=0, error_info="success", data=data)
