# -*- coding: utf-8 -*-
import argparse
import logging
import os
import sys
from dataclasses import replace

import numpy as np
import pandas as pd
import uvicorn

from diffusion.conditions import parse_condition_pairs
from models.dataset import dataset_load
from models.trajectory import FEATURES
from agents.diffbid_agent import generate_plan
from services import collect as collect_service
from services import evaluation as evaluation_service
from services import export as export_service
from services import training as training_service
from services.evaluation import EvalConfig, PolicySpec, measure_latency
from services.training import ExperimentConfig
from simulator.env import EnvConfig
from utils import config, logger, rldb
from utils.error import ErrorCode, error

from web.api import api


def _out(args, name: str) -> str:
    os.makedirs(args.out_dir, exist_ok=True)
    return os.path.join(args.out_dir, name)


def _floats(raw: str) -> list[float]:
    return [float(v) for v in raw.split(",") if v.strip()]


def _condition(args, bundle):
    pairs = args.condition or []
    if not pairs:
        # [conditions] return_value 可改默认的回报槽取值
        value = config.get_instance().get("conditions", "return_value", fallback="").strip()
        if value and "return" in bundle.layout.slots:
            pairs = [f"return={value}"] + [f"{name}=1" for name in bundle.layout.slots if name != "return"]
    return parse_condition_pairs(pairs, bundle.layout) if pairs else None


def cmd_collect(args, experiment: ExperimentConfig) -> error:
    sigma = experiment.explore_sigma if args.sigma is None else args.sigma
    out_path = args.out or _out(args, f"dataset_sigma{sigma:g}_n{args.n}.jsonl")
    oracle_csv = args.oracle_csv or _out(args, "oracle.csv")
    env = experiment.env
    if args.env_config:
        try:
            env = EnvConfig.from_source(args.env_config, env)
        except Exception as e:
            logging.error(f"invalid env config {args.env_config}: {e}")
            return error.from_exception(e)
        if args.seed is not None:
            env = env.with_seed(args.seed)
    seed_base = env.seed if args.seed is None else args.seed
    _, err = collect_service.get_instance().collect(env, experiment.agent, args.n, sigma, out_path,
                                                    seed_base=seed_base, oracle_csv=oracle_csv)
    return err


def cmd_train_diffusion(args, experiment: ExperimentConfig) -> error:
    out_path = args.out or _out(args, "diffusion.dbck")
    _, err = training_service.get_instance().train_diffusion(args.dataset, out_path)
    if err.success:
        logging.info(f"diffusion checkpoint written to {out_path}")
    return err


def cmd_train_invdyn(args, experiment: ExperimentConfig) -> error:
    out_path = args.out or _out(args, "invdyn.dbck")
    _, err = training_service.get_instance().train_invdyn(args.dataset, out_path)
    if err.success:
        logging.info(f"inverse dynamics checkpoint written to {out_path}")
    return err


def _load_bundle(args):
    overrides = {}
    if getattr(args, "omega", None) is not None:
        overrides["omega"] = args.omega
    if getattr(args, "temperature", None) is not None:
        overrides["temperature"] = args.temperature
    return training_service.get_instance().load_bundle(args.diffusion_checkpoint, args.invdyn_checkpoint, **overrides)


def cmd_generate(args, experiment: ExperimentConfig) -> error:
    bundle, err = _load_bundle(args)
    if not err.success:
        return err
    try:
        history = pd.read_csv(args.history_csv)[list(FEATURES)].to_numpy(dtype=np.float64)
        plan = generate_plan(bundle, history, _condition(args, bundle), seed=args.seed or 0)
        out_csv = args.out_csv or _out(args, "generated.csv")
        frame = pd.DataFrame(plan.states, columns=list(FEATURES))
        frame.insert(0, "period", np.arange(len(frame)))
        frame["observed"] = frame["period"] < len(history)
        frame.to_csv(out_csv, index=False)
    except Exception as e:
        logging.error(f"generate failed: {e}")
        return error.from_exception(e)
    action = plan.action.lambdas if plan.action is not None else None
    logging.info(f"generated {len(frame)} states to {out_csv}, next action {action}")
    return err


def cmd_evaluate(args, experiment: ExperimentConfig) -> error:
    eval_config = EvalConfig.from_config(config.get_instance())
    if args.budgets:
        eval_config = replace(eval_config, budgets=tuple(_floats(args.budgets)))
    specs = []
    if args.policy == "diffbid":
        bundle, err = _load_bundle(args)
        if not err.success:
            return err
        specs.append(PolicySpec(kind="diffbid", bundle=bundle, condition=_condition(args, bundle),
                                replan_every=eval_config.replan_every, agent_config=experiment.agent))
    if args.policy == "pacing" or args.baseline:
        specs.append(PolicySpec(kind="pacing", agent_config=experiment.agent))

    service = evaluation_service.get_instance()
    tables = []
    for spec in specs:
        keep = bool(args.curves_dir)
        (table, outcomes), err = service.evaluate(spec, experiment.env, eval_config, experiment.agent,
                                                  experiment.to_dict(), keep_trajectories=keep)
        if table is None:
            return err
        tables.append(table)
        if keep:
            trajectories = [o.trajectory for o in outcomes if o.trajectory is not None]
            _, err = export_service.get_instance().export_curves(trajectories, os.path.join(args.curves_dir, spec.name),
                                                                 args.svg)
            if not err.success:
                return err
    out_csv = args.out_csv or _out(args, "metrics.csv")
    return export_service.get_instance().export_table(pd.concat(tables, ignore_index=True), out_csv, args.svg)


def cmd_oracle(args, experiment: ExperimentConfig) -> error:
    seed_base = experiment.env.seed if args.seed is None else args.seed
    seeds = list(range(seed_base, seed_base + args.n))
    advertisers = [int(v) for v in args.advertisers.split(",")] if args.advertisers else None
    out_csv = args.out_csv or _out(args, "oracle.csv")
    _, err = collect_service.get_instance().oracle(experiment.env, experiment.agent, seeds, advertisers, out_csv)
    return err


def cmd_sweep(args, experiment: ExperimentConfig) -> error:
    eval_config = EvalConfig.from_config(config.get_instance())
    values = [v.strip() for v in args.values.split(",") if v.strip()]
    try:
        dataset = dataset_load(args.dataset)
    except Exception as e:
        logging.error(f"load dataset failed: {e}")
        return error.from_exception(e)
    base_bundle = None
    if args.axis == "omega" and args.diffusion_checkpoint and args.invdyn_checkpoint:
        base_bundle, err = _load_bundle(args)
        if not err.success:
            return err
    (table, summary), err = evaluation_service.get_instance().sweep(args.axis, values, dataset, experiment,
                                                                    eval_config, base_bundle)
    if table is None:
        return err
    logging.info(f"sweep {args.axis}: {summary}")
    out_csv = args.out_csv or _out(args, f"sweep_{args.axis}.csv")
    return export_service.get_instance().export_table(table, out_csv, args.svg)


def cmd_latency(args, experiment: ExperimentConfig) -> error:
    bundle, err = _load_bundle(args)
    if not err.success:
        return err
    try:
        fit = measure_latency(bundle, [int(v) for v in _floats(args.ks)], repeats=args.repeats)
        frame = pd.DataFrame({"K": fit.Ks, "seconds": fit.seconds})
        frame.to_csv(args.out_csv or _out(args, "latency.csv"), index=False)
    except Exception as e:
        logging.error(f"latency failed: {e}")
        return error.from_exception(e)
    logging.info(f"latency fit: {fit.slope * 1000:.3f} ms per step + {fit.intercept * 1000:.3f} ms, "
                 f"R^2={fit.r_squared:.4f}")
    return err


def cmd_export(args, experiment: ExperimentConfig) -> error:
    try:
        dataset = dataset_load(args.dataset)
    except Exception as e:
        logging.error(f"load dataset failed: {e}")
        return error.from_exception(e)
    _, err = export_service.get_instance().export_curves(dataset.trajectories, args.out_dir, args.svg)
    return err


def cmd_serve(args, experiment: ExperimentConfig) -> error:
    conf = config.get_instance()
    host = conf.get('web_service', 'server_host', fallback='0.0.0.0')
    port = conf.getint('web_service', 'server_port', fallback=8099)
    uvicorn.run(api, host=host, port=port)
    return error(ErrorCode.SUCCESS, "")


def _add_bundle_args(p: argparse.ArgumentParser, required: bool = True):
    p.add_argument('--diffusion-checkpoint', required=required, help='去噪网络检查点')
    p.add_argument('--invdyn-checkpoint', required=required, help='逆动力学检查点')
    p.add_argument('--omega', type=float, default=None, help='引导系数，覆盖检查点中的配置')
    p.add_argument('--temperature', type=float, default=None, help='采样温度')


def build_parser() -> argparse.ArgumentParser:
    main_path = os.path.dirname(os.path.abspath(__file__))
    parser = argparse.ArgumentParser(description='DiffBid 生成式自动出价实验')
    parser.add_argument('--config', type=str, default=os.path.join(main_path, '../configuration/test_conf.ini'), help='配置文件路径')
    parser.add_argument('--seed', type=int, default=None, help='覆盖环境与训练的随机种子')
    parser.add_argument('--out-dir', type=str, default='output', help='输出目录')
    parser.add_argument('--log-level', type=str, default=None, help='控制台日志级别')
    sub = parser.add_subparsers(dest='command', required=True)

    p = sub.add_parser('collect', help='用预算平滑策略采集离线数据集')
    p.add_argument('--n', type=int, required=True, help='轨迹条数')
    p.add_argument('--sigma', type=float, default=None, help='探索强度，0 为基础数据集')
    p.add_argument('--env-config', type=str, default=None, help='环境 ini 文件或曝光数预设 table/body，覆盖 [env]')
    p.add_argument('--out', type=str, default=None, help='数据集文件')
    p.add_argument('--oracle-csv', type=str, default=None, help='事后最优表')
    p.add_argument('--workers', type=int, default=None, help='进程数')
    p.set_defaults(func=cmd_collect)

    for name, func in (('train-diffusion', cmd_train_diffusion), ('train-invdyn', cmd_train_invdyn)):
        p = sub.add_parser(name)
        p.add_argument('--dataset', type=str, required=True)
        p.add_argument('--out', type=str, default=None, help='检查点文件')
        p.set_defaults(func=func)

    p = sub.add_parser('generate', help='给定历史与条件生成未来状态')
    _add_bundle_args(p)
    p.add_argument('--history-csv', type=str, required=True, help='已观测状态，列名为状态特征名')
    p.add_argument('--condition', action='append', default=None, help='name=value，可重复')
    p.add_argument('--out-csv', type=str, default=None)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser('evaluate', help='按预算评估策略')
    _add_bundle_args(p, required=False)
    p.add_argument('--policy', choices=('diffbid', 'pacing'), default='diffbid')
    p.add_argument('--baseline', action='store_true', help='同时评估预算平滑基线')
    p.add_argument('--condition', action='append', default=None)
    p.add_argument('--budgets', type=str, default=None, help='逗号分隔的预算，覆盖配置')
    p.add_argument('--curves-dir', type=str, default=None, help='导出预算曲线的目录')
    p.add_argument('--svg', action='store_true')
    p.add_argument('--out-csv', type=str, default=None)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser('oracle', help='冻结价格下的事后最优')
    p.add_argument('--n', type=int, default=10, help='种子个数')
    p.add_argument('--advertisers', type=str, default=None, help='逗号分隔，默认全部')
    p.add_argument('--out-csv', type=str, default=None)
    p.set_defaults(func=cmd_oracle)

    p = sub.add_parser('sweep', help='扩散步数 / 训练种子 / 引导系数扫描')
    _add_bundle_args(p, required=False)
    p.add_argument('--axis', choices=evaluation_service.SWEEP_AXES, required=True)
    p.add_argument('--values', type=str, required=True, help='逗号分隔')
    p.add_argument('--dataset', type=str, required=True)
    p.add_argument('--svg', action='store_true')
    p.add_argument('--out-csv', type=str, default=None)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser('latency', help='单次出价耗时随 K 的变化')
    _add_bundle_args(p)
    p.add_argument('--ks', type=str, default='5,10,20,50,100')
    p.add_argument('--repeats', type=int, default=3)
    p.add_argument('--out-csv', type=str, default=None)
    p.set_defaults(func=cmd_latency)

    p = sub.add_parser('export', help='导出数据集中轨迹的预算曲线')
    p.add_argument('--dataset', type=str, required=True)
    p.add_argument('--svg', action='store_true')
    p.set_defaults(func=cmd_export)

    p = sub.add_parser('serve', help='启动 HTTP 服务')
    p.set_defaults(func=cmd_serve)
    return parser


# 主函数
def main(argv: list[str] = None) -> int:
    args = build_parser().parse_args(argv)

    config.init(args.config)
    logger.init(args.log_level)

    conf = config.get_instance()
    rldb.init(dsn=conf.get('sqlalchemy', 'database_dsn', fallback=None))

    try:
        experiment = ExperimentConfig.from_config(conf, seed=args.seed)
    except Exception as e:
        logging.error(f"invalid experiment config: {e}")
        return 1
    workers = getattr(args, 'workers', None) or conf.getint('eval', 'workers', fallback=1)
    collect_service.init(workers)
    training_service.init(experiment)
    evaluation_service.init()
    export_service.init()

    err = args.func(args, experiment)
    if not err.success:
        logging.error(f"{args.command} failed: {err}")
        return 1
    return 0

if __name__ == "__main__":
    sys.exit(main())
