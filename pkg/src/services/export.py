# -*- coding: utf-8 -*-
# 曲线导出：每个 episode 的剩余预算 / 花费 / λ / 回报时间序列，分位带与预算完成度汇总

import logging
import os
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import pandas as pd

from models.trajectory import Trajectory
from utils.error import ErrorCode, EvalError, error

PERCENTILES = (10, 25, 50, 75, 90)
# 花费达到预算该比例即视为完成
COMPLETION_THRESHOLD = 0.8


def episode_frame(traj: Trajectory) -> pd.DataFrame:
    """列顺序固定：period, remaining_time, remaining_budget, cost, reward, lambda_0..lambda_J"""
    data = {
        "period": np.arange(traj.T),
        "remaining_time": traj.states[:, 0],
        "remaining_budget": traj.states[:, 1],
        "cost": traj.costs,
        "reward": traj.rewards,
    }
    for j in range(traj.actions.shape[1]):
        data[f"lambda_{j}"] = traj.actions[:, j]
    return pd.DataFrame(data)


def percentile_bands(trajectories: Sequence[Trajectory], column: str = "remaining_budget") -> pd.DataFrame:
    index = {"remaining_budget": 1, "remaining_time": 0}[column]
    series = np.stack([t.states[:, index] for t in trajectories])
    bands = {"period": np.arange(series.shape[1])}
    for q in PERCENTILES:
        bands[f"p{q}"] = np.percentile(series, q, axis=0)
    bands["mean"] = series.mean(axis=0)
    return pd.DataFrame(bands)


def budget_completion(trajectories: Sequence[Trajectory], threshold: float = COMPLETION_THRESHOLD) -> float:
    spent = np.array([t.total_cost / t.budget for t in trajectories])
    return float(np.mean(spent >= threshold))


@dataclass
class CurveExport:
    episode_files: list[str] = field(default_factory=list)
    bands_file: str = ""
    summary_file: str = ""
    svg_file: str | None = None
    completion: float = 0.0


def _pyplot():
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    return plt


def _plot_bands(bands: pd.DataFrame, path: str):
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(8, 4))
    ax.fill_between(bands["period"], bands["p10"], bands["p90"], alpha=0.2, label="p10-p90")
    ax.fill_between(bands["period"], bands["p25"], bands["p75"], alpha=0.35, label="p25-p75")
    ax.plot(bands["period"], bands["p50"], label="median")
    ax.set_xlabel("period")
    ax.set_ylabel("budget left ratio")
    ax.set_ylim(0.0, 1.05)
    ax.legend(loc="upper right")
    fig.tight_layout()
    fig.savefig(path, format="svg")
    plt.close(fig)


def export_curves(trajectories: Sequence[Trajectory], out_dir: str, svg: bool = False) -> CurveExport:
    """
    写出 episode_XXXX.csv、bands.csv 与 summary.csv，可选 budget_left.svg

    :param trajectories: 已完成的 episode
    :param out_dir: 输出目录
    """
    if not trajectories:
        raise EvalError("no episodes to export")
    os.makedirs(out_dir, exist_ok=True)
    result = CurveExport()
    for i, traj in enumerate(trajectories):
        path = os.path.join(out_dir, f"episode_{i:04d}.csv")
        episode_frame(traj).to_csv(path, index=False)
        result.episode_files.append(path)

    bands = percentile_bands(trajectories)
    result.bands_file = os.path.join(out_dir, "bands.csv")
    bands.to_csv(result.bands_file, index=False)

    result.completion = budget_completion(trajectories)
    summary = pd.DataFrame.from_records([{
        "episodes": len(trajectories),
        "completion_threshold": COMPLETION_THRESHOLD,
        "budget_completion": result.completion,
        "mean_spend_ratio": float(np.mean([t.total_cost / t.budget for t in trajectories])),
        "mean_return": float(np.mean([t.total_return for t in trajectories])),
    }])
    result.summary_file = os.path.join(out_dir, "summary.csv")
    summary.to_csv(result.summary_file, index=False)
    if svg:
        result.svg_file = os.path.join(out_dir, "budget_left.svg")
        _plot_bands(bands, result.svg_file)
    logging.info(f"exported {len(trajectories)} episodes to {out_dir}, "
                 f"{result.completion:.0%} spent >= {COMPLETION_THRESHOLD:.0%} of budget")
    return result


def export_table(table: pd.DataFrame, path: str, svg: bool = False, x: str = "budget", y: str = "top_k_score"):
    """指标表写 CSV；svg 时按 policy 分组画折线"""
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    table.to_csv(path, index=False)
    if not svg or x not in table or y not in table:
        return
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(6, 4))
    group = "value" if "value" in table else "policy"
    for name, rows in table.groupby(group):
        ax.plot(rows[x], rows[y], marker="o", label=str(name))
    ax.set_xlabel(x)
    ax.set_ylabel(y)
    ax.legend()
    fig.tight_layout()
    fig.savefig(os.path.splitext(path)[0] + ".svg", format="svg")
    plt.close(fig)


class ExportService:
    def export_curves(self, trajectories: Sequence[Trajectory], out_dir: str, svg: bool = False) -> (CurveExport, error):
        try:
            result = export_curves(trajectories, out_dir, svg)
        except Exception as e:
            logging.error(f"export failed: {e}")
            return None, error.from_exception(e)
        return result, error(ErrorCode.SUCCESS, "")

    def export_table(self, table: pd.DataFrame, path: str, svg: bool = False) -> error:
        try:
            export_table(table, path, svg)
        except Exception as e:
            logging.error(f"export table failed: {e}")
            return error.from_exception(e)
        return error(ErrorCode.SUCCESS, "")


_export_service: ExportService = None

def init():
    global _export_service
    _export_service = ExportService()

def get_instance() -> ExportService:
    global _export_service
    if _export_service is None:
        _export_service = ExportService()
    return _export_service
