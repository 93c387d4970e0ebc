from typing import Sequence

from models.trajectory import Action, BidState


class BaseAgent:
    """出价策略基类：环境在每个 episode 开始时调用 reset，之后每个周期调用 act"""

    def __init__(self, J: int = 0):
        self.J = J
        self.budget = 0.0
        self.constraint_bounds: tuple[float, ...] = ()
        self.advertiser_id = 0
        self.seed = 0

    def reset(self, budget: float, constraint_bounds: tuple[float, ...], advertiser_id: int, seed: int) -> None:
        self.budget = budget
        self.constraint_bounds = constraint_bounds
        self.advertiser_id = advertiser_id
        self.seed = seed

    def act(self, history: Sequence[BidState], period: int) -> Action:
        raise NotImplementedError


class FixedLambdaAgent(BaseAgent):
    """整天使用固定的 λ"""

    def __init__(self, lambdas: Sequence[float]):
        super().__init__(J=len(lambdas) - 1)
        self.action = Action(tuple(lambdas))

    def act(self, history: Sequence[BidState], period: int) -> Action:
        return self.action
