"""
命令行入口

    fisherprune train  --arch desk_cnn --train-data synthetic:3000 --val-data synthetic:600:1 --out runs/base.json
    fisherprune eval   --model runs/base.json --data synthetic:600:1
    fisherprune prune  --model runs/base.json --data synthetic:3000 --method fisher --eta 1.0
    fisherprune sweep  --config sweep.json [--jobs 4]
    fisherprune report --csv runs/sweep.csv [--layerwise runs/cells]

退出码：0 成功，2 用法错误，3 数据错误，4 数值错误。
"""

import sys
import json
import argparse
from pathlib import Path
from typing import List, Optional

from .sv import SV, arg, send_diff_msg
from .sweep import run_sweep
from .report import load_rows, find_reports, render_summary, render_layerwise
from ..fp_net import train, evaluate, load_model, save_model, build_arch
from ..fp_prune import (
    PruneReport,
    report_path,
    global_rate,
    build_report,
    fisher_prune,
    uniform_rates,
    magnitude_prune,
    filter_norm_prune,
    rates_from_layers,
)
from ..utils.data import load_data
from ..utils.counting import count_params
from ..utils.config import LdaPolicy, TraceConfig, TrainConfig, ExperimentConfig
from ..utils.logger import MSG_PREFIX, logger, setup_logger
from ..utils.errors import UsageError, FisherPruneError

fp_cli = SV(
    "FisherPrune",
    common=[arg("--log-level", default="INFO", help="日志级别")],
)


@fp_cli.on_command(
    keyword=("train",),
    args=[
        arg("--arch", default="desk_cnn"),
        arg("--train-data", required=True),
        arg("--val-data"),
        arg("--out", required=True, help="模型输出路径（.json，权重写到同名 .bin）"),
        arg("--config", help="ExperimentConfig，取其中的 train 段"),
        arg("--epochs", type=int),
        arg("--lr", type=float),
        arg("--l2", type=float),
        arg("--batch-size", type=int),
        arg("--seed", type=int),
        arg("--no-dropout", action="store_true"),
    ],
)
def cmd_train(ns: argparse.Namespace) -> int:
    """从头训练一个基准网络"""
    cfg = ExperimentConfig.load(ns.config).train if ns.config else TrainConfig()
    overrides = {
        "epochs": ns.epochs,
        "lr": ns.lr,
        "l2": ns.l2,
        "batch_size": ns.batch_size,
        "seed": ns.seed,
    }
    try:
        cfg = TrainConfig.model_validate(
            {**cfg.model_dump(), **{k: v for k, v in overrides.items() if v is not None}}
        )
    except ValueError as e:
        raise UsageError(f"训练参数无效: {e}") from e
    if ns.no_dropout:
        cfg.dropout = False

    data = load_data(ns.train_data)
    val = load_data(ns.val_data) if ns.val_data else None
    net = build_arch(ns.arch, num_classes=data.num_classes, input_shape=data.sample_shape, seed=cfg.seed)
    result = train(net, data, cfg, val)
    path = save_model(net, ns.out)
    record = {
        "train": cfg.model_dump(),
        "history": result.history,
        "val_accuracy": evaluate(net, val) if val is not None else None,
    }
    path.with_suffix(".train.json").write_text(json.dumps(record, indent=2), "utf-8")
    return send_diff_msg(0, {0: f"训练完成: {path}（验证准确率 {record['val_accuracy']}）"})


@fp_cli.on_command(
    keyword=("eval",),
    args=[arg("--model", required=True), arg("--data", required=True)],
)
def cmd_eval(ns: argparse.Namespace) -> int:
    """在数据集上评估准确率"""
    acc = evaluate(load_model(ns.model), load_data(ns.data))
    print(f"{acc:.6f}")
    return send_diff_msg(0, {0: f"{ns.model} 准确率 {acc:.4f}"})


@fp_cli.on_command(
    keyword=("prune",),
    args=[
        arg("--model", required=True),
        arg("--data", required=True, help="LDA 与回溯用的数据集"),
        arg("--method", choices=["fisher", "magnitude", "filternorm"], default="fisher"),
        arg("--eta", type=float),
        arg("--rate", type=float),
        arg("--match-report", help="filternorm 按该 Fisher 报告的逐层剪枝率"),
        arg("--lda-policy", choices=["topk", "threshold", "eta"], default="eta"),
        arg("--lda-k", type=int),
        arg("--lda-value", type=float),
        arg("--seed-weighting", choices=["activation", "activation_lda"], default="activation"),
        arg("--lda-samples", type=int),
        arg("--dump-lda", help="导出发放矩阵与 LDA 得分的目录"),
        arg("--dump-utility", help="导出逐层效用直方图的目录"),
        arg("--val-data", help="给出时在报告中记录剪枝前后的准确率"),
        arg("--out", help="剪枝后模型路径（缺省为 <model>.pruned.json）"),
    ],
)
def cmd_prune(ns: argparse.Namespace) -> int:
    """剪枝并输出模型与 PruneReport"""
    net = load_model(ns.model)
    if ns.method == "fisher":
        if ns.eta is None or ns.eta < 0:
            raise UsageError("fisher 剪枝需要 --eta ≥ 0")
        try:
            policy = LdaPolicy(kind=ns.lda_policy, k=ns.lda_k, value=ns.lda_value)
        except ValueError as e:
            raise UsageError(f"LDA 策略无效: {e}") from e
        outcome = fisher_prune(
            net,
            load_data(ns.data),
            ns.eta,
            policy,
            TraceConfig(seed_weighting=ns.seed_weighting),
            max_samples=ns.lda_samples,
            dump_lda=ns.dump_lda,
            dump_utility=ns.dump_utility,
        )
        pruned, report = outcome.net, outcome.report
    elif ns.method == "magnitude":
        if ns.rate is None:
            raise UsageError("magnitude 剪枝需要 --rate")
        pruned = magnitude_prune(net, ns.rate)
        report = build_report(net, pruned, "magnitude", rate=ns.rate)
    else:
        if ns.match_report:
            rates = rates_from_layers(PruneReport.load(ns.match_report).layers)
        elif ns.rate is not None:
            rates = uniform_rates(net, ns.rate)
        else:
            raise UsageError("filternorm 剪枝需要 --rate 或 --match-report")
        pruned = filter_norm_prune(net, rates)
        rate = ns.rate if ns.rate is not None else global_rate(count_params(net), count_params(pruned))
        report = build_report(net, pruned, "filternorm", rate=rate)

    if ns.val_data:
        val = load_data(ns.val_data)
        report.acc_before = evaluate(net, val)
        report.acc_after_prune = evaluate(pruned, val)

    out = ns.out or str(Path(ns.model).with_suffix("")) + ".pruned.json"
    path = save_model(pruned, out)
    rp = report.save(str(report_path(str(path))))
    return send_diff_msg(
        0,
        {0: f"剪枝完成: {path}，报告 {rp}，参数减少 {report.params_saved:.1%}"},
    )


@fp_cli.on_command(
    keyword=("sweep",),
    args=[arg("--config", required=True), arg("--jobs", type=int)],
)
def cmd_sweep(ns: argparse.Namespace) -> int:
    """按配置做 η 扫描与基线对比"""
    if ns.jobs is not None and ns.jobs < 1:
        raise UsageError("--jobs 必须 ≥ 1")
    df = run_sweep(ExperimentConfig.load(ns.config), jobs=ns.jobs)
    failed = int((~df["status"]).sum())
    return send_diff_msg(
        0 if failed < len(df) else 4,
        {
            0: f"扫描完成，{failed} 个单元失败",
            4: "扫描的所有单元都失败了",
        },
    )


@fp_cli.on_command(
    keyword=("report",),
    args=[
        arg("--csv", required=True, help="sweep.csv"),
        arg("--layerwise", help="剪枝报告所在目录（递归查找 *.report.json）"),
        arg("--out", help="写到文件而不是标准输出"),
    ],
)
def cmd_report(ns: argparse.Namespace) -> int:
    """把扫描结果渲染为汇总表"""
    text = render_summary(load_rows(ns.csv))
    if ns.layerwise:
        text += "\n" + render_layerwise(find_reports(ns.layerwise))
    if ns.out:
        Path(ns.out).write_text(text, "utf-8")
    else:
        sys.stdout.write(text)
    return 0


def main(argv: Optional[List[str]] = None) -> int:
    parser = fp_cli.build_parser()
    try:
        ns = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    try:
        setup_logger(ns.log_level)
    except ValueError:
        logger.error(f"{MSG_PREFIX} 未知的日志级别 {ns.log_level}")
        return UsageError.exit_code
    try:
        return fp_cli.dispatch(ns)
    except FisherPruneError as e:
        logger.error(f"{MSG_PREFIX} {type(e).__name__}: {e}")
        return e.exit_code
