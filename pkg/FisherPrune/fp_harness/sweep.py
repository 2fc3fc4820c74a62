"""
η 扫描

对每个 (方法, 取值, 种子) 单元：剪枝 → 报告 → 重训练 → 评估，结果一行 SweepRow。
基线按 Fisher 在同一 η 下的剪枝率对比：幅值剪枝取整体参数剪枝率，
范数剪枝取逐层通道剪枝率。某个单元失败只记入该行，扫描继续。
"""

import os
import math
import time
import json
from pathlib import Path
from dataclasses import dataclass
from concurrent.futures import ThreadPoolExecutor
from typing import Dict, List, Tuple, Optional

import pandas as pd
import torch

from ..fp_net import NetGraph, train, evaluate, load_model, save_model, build_arch, deterministic
from ..fp_prune import (
    PruneReport,
    FisherAnalysis,
    analyse,
    global_rate,
    report_path,
    build_report,
    fisher_prune,
    magnitude_prune,
    filter_norm_mask,
    rates_from_layers,
    apply_mask,
    cascade_dead,
)
from ..utils.data import Dataset, load_data
from ..utils.config import TrainConfig, ExperimentConfig
from ..utils.models import SweepRow
from ..utils.logger import MSG_PREFIX, logger
from ..utils.errors import UsageError, FisherPruneError

SWEEP_COLUMNS: List[str] = list(SweepRow.__annotations__)
SWEEP_CSV = "sweep.csv"
MANIFEST = "manifest.json"


@dataclass
class Cell:
    method: str
    point: float
    seed: int
    eta: float

    @property
    def name(self) -> str:
        return f"{self.method}_{self.point:.6g}_s{self.seed}"


@dataclass
class SweepContext:
    cfg: ExperimentConfig
    base: NetGraph
    train_data: Dataset
    val_data: Dataset
    test_data: Optional[Dataset]
    acc_base: float
    out_dir: Path
    references: Dict[float, PruneReport]


def retrain_config(cfg: ExperimentConfig, seed: int) -> TrainConfig:
    return cfg.train.model_copy(
        update={"lr": cfg.retrain_lr, "epochs": max(cfg.retrain_epochs, 1), "seed": seed}
    )


def prepare_base(cfg: ExperimentConfig, train_data: Dataset, val_data: Dataset, out_dir: Path) -> NetGraph:
    """读取基准模型；没有给出时按 cfg.arch 新建并训练，保存到输出目录"""
    if cfg.model:
        return load_model(cfg.model)
    net = build_arch(
        cfg.arch,
        num_classes=train_data.num_classes,
        input_shape=train_data.sample_shape,
        seed=cfg.train.seed,
    )
    train(net, train_data, cfg.train, val_data)
    save_model(net, str(out_dir / "base.json"))
    return net


def plan_cells(cfg: ExperimentConfig, references: Dict[float, PruneReport]) -> List[Cell]:
    """单元顺序固定：方法 → η → 种子"""
    cells = []
    for method in cfg.methods:
        for eta in cfg.etas:
            ref = references.get(eta)
            if method == "fisher":
                point = eta
            elif ref is None:
                point = float("nan")
            else:
                point = global_rate(ref.params_before, ref.params_after)
            for seed in cfg.seeds:
                cells.append(Cell(method, point, seed, eta))
    return cells


def _empty_row(cell: Cell) -> SweepRow:
    nan = float("nan")
    return {
        "method": cell.method,
        "point": cell.point,
        "seed": cell.seed,
        "params": 0,
        "flops": 0,
        "params_before": 0,
        "flops_before": 0,
        "acc_base": nan,
        "acc_pre_retrain": nan,
        "acc_post_retrain": nan,
        "acc_test": nan,
        "wall_time": 0.0,
        "status": False,
        "message": "",
    }


def prune_cell(ctx: SweepContext, cell: Cell, analysis: Optional[FisherAnalysis]) -> Tuple[NetGraph, PruneReport]:
    base = ctx.base
    if cell.method == "fisher":
        outcome = fisher_prune(
            base,
            ctx.train_data,
            cell.eta,
            ctx.cfg.lda_policy,
            ctx.cfg.trace,
            analysis=analysis,
            max_samples=ctx.cfg.lda_samples,
        )
        return outcome.net, outcome.report

    ref = ctx.references.get(cell.eta)
    if ref is None:
        raise UsageError(f"η={cell.eta} 没有可对照的 Fisher 剪枝结果")
    if cell.method == "magnitude":
        pruned = magnitude_prune(base, cell.point)
        return pruned, build_report(base, pruned, "magnitude", rate=cell.point)

    mask = cascade_dead(filter_norm_mask(base, rates_from_layers(ref.layers)), base)
    pruned = apply_mask(base, mask)
    return pruned, build_report(base, pruned, "filternorm", mask=mask, rate=cell.point)


def run_cell(ctx: SweepContext, cell: Cell, analysis: Optional[FisherAnalysis]) -> SweepRow:
    row = _empty_row(cell)
    row["acc_base"] = ctx.acc_base
    cell_dir = ctx.out_dir / "cells" / cell.name
    start = time.perf_counter()
    try:
        if math.isnan(cell.point):
            raise UsageError(f"η={cell.eta} 的 Fisher 对照失败，无法匹配剪枝率")
        pruned, report = prune_cell(ctx, cell, analysis)
        row["params_before"] = report.params_before
        row["flops_before"] = report.flops_before
        row["params"] = report.params_after
        row["flops"] = report.flops_after
        report.acc_before = ctx.acc_base
        report.acc_after_prune = row["acc_pre_retrain"] = evaluate(pruned, ctx.val_data)

        if ctx.cfg.retrain_epochs > 0:
            train(pruned, ctx.train_data, retrain_config(ctx.cfg, cell.seed))
            report.acc_after_retrain = evaluate(pruned, ctx.val_data)
        else:
            report.acc_after_retrain = report.acc_after_prune
        row["acc_post_retrain"] = report.acc_after_retrain
        if ctx.test_data is not None:
            row["acc_test"] = evaluate(pruned, ctx.test_data)

        model_path = save_model(pruned, str(cell_dir / "model.json"))
        report.save(str(report_path(str(model_path))))
        row["status"] = True
        row["message"] = "; ".join(report.warnings)
    except FisherPruneError as e:
        logger.error(f"{MSG_PREFIX} [扫描] {cell.name} 失败: {e}")
        row["message"] = str(e)
    except Exception as e:
        logger.exception(f"{MSG_PREFIX} [扫描] {cell.name} 意外失败")
        row["message"] = f"{type(e).__name__}: {e}"
    row["wall_time"] = time.perf_counter() - start
    return row


def write_rows(rows: List[SweepRow], path: Path) -> None:
    """整表写到临时文件再替换，中途中断时不会留下半行"""
    tmp = path.with_suffix(".csv.tmp")
    pd.DataFrame(rows, columns=SWEEP_COLUMNS).to_csv(tmp, index=False)
    os.replace(tmp, path)


def write_manifest(ctx: SweepContext, path: Path) -> None:
    doc = {
        "config": json.loads(ctx.cfg.model_dump_json()),
        "base_model": ctx.base.name,
        "acc_base": ctx.acc_base,
        "retrain": json.loads(retrain_config(ctx.cfg, ctx.cfg.train.seed).model_dump_json()),
        "torch": torch.__version__,
    }
    path.write_text(json.dumps(doc, indent=2, ensure_ascii=False), "utf-8")


def run_sweep(cfg: ExperimentConfig, jobs: Optional[int] = None) -> pd.DataFrame:
    if not cfg.etas:
        raise UsageError("η 列表为空")
    with deterministic():
        return _run_sweep(cfg, jobs)


def _run_sweep(cfg: ExperimentConfig, jobs: Optional[int]) -> pd.DataFrame:
    jobs = jobs or cfg.jobs
    out_dir = Path(cfg.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    train_data = load_data(cfg.train_data)
    val_data = load_data(cfg.val_data)
    test_data = load_data(cfg.test_data) if cfg.test_data else None
    base = prepare_base(cfg, train_data, val_data, out_dir)
    acc_base = evaluate(base, val_data)
    logger.info(f"{MSG_PREFIX} [扫描] 基准模型 {base.name} 验证准确率 {acc_base:.4f}")

    analysis = analyse(base, train_data, cfg.lda_samples)
    references: Dict[float, PruneReport] = {}
    if any(m != "fisher" for m in cfg.methods):
        for eta in cfg.etas:
            try:
                references[eta] = fisher_prune(
                    base, train_data, eta, cfg.lda_policy, cfg.trace,
                    analysis=analysis, max_samples=cfg.lda_samples,
                ).report
            except FisherPruneError as e:
                logger.error(f"{MSG_PREFIX} [扫描] η={eta} 的对照剪枝失败: {e}")

    ctx = SweepContext(cfg, base, train_data, val_data, test_data, acc_base, out_dir, references)
    write_manifest(ctx, out_dir / MANIFEST)
    cells = plan_cells(cfg, references)
    csv_path = out_dir / SWEEP_CSV
    logger.info(f"{MSG_PREFIX} [扫描] 共 {len(cells)} 个单元, jobs={jobs}")

    rows: List[Optional[SweepRow]] = [None] * len(cells)
    if jobs <= 1:
        for i, cell in enumerate(cells):
            rows[i] = run_cell(ctx, cell, analysis)
            write_rows([r for r in rows if r is not None], csv_path)
    else:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            futures = [pool.submit(run_cell, ctx, cell, analysis) for cell in cells]
            for i, fut in enumerate(futures):
                rows[i] = fut.result()
                write_rows([r for r in rows if r is not None], csv_path)

    df = pd.DataFrame(rows, columns=SWEEP_COLUMNS)
    ok = int(df["status"].sum())
    logger.success(f"{MSG_PREFIX} [扫描] 完成 {ok}/{len(df)} 个单元，结果 {csv_path}")
    return df
