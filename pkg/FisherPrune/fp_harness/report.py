"""
扫描结果汇总

render_summary 的输出只依赖 CSV 内容，格式固定，可以与金标准文件逐字节比较。
"""

import math
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import pandas as pd

from .sweep import SWEEP_COLUMNS
from ..fp_prune import PruneReport
from ..utils.errors import DataError

PF_TOLERANCE = 0.01  # 参数优先：验证准确率比基准低不超过 1 个百分点
AGG_COLUMNS = [
    "method",
    "point",
    "params",
    "flops",
    "params_before",
    "flops_before",
    "acc_base",
    "acc_pre_retrain",
    "acc_post_retrain",
    "acc_test",
    "seeds",
]


def load_rows(path: str) -> pd.DataFrame:
    try:
        df = pd.read_csv(path)
    except FileNotFoundError as e:
        raise DataError(f"扫描结果不存在: {path}") from e
    except (pd.errors.ParserError, pd.errors.EmptyDataError, UnicodeDecodeError) as e:
        raise DataError(f"扫描结果无法解析: {e}") from e
    missing = [c for c in SWEEP_COLUMNS if c not in df.columns]
    if missing:
        raise DataError(f"扫描结果缺少列: {missing}")
    df["message"] = df["message"].fillna("")
    df["status"] = df["status"].astype(str).str.lower() == "true"
    return df


def _fmt_count(n: float) -> str:
    if n is None or (isinstance(n, float) and math.isnan(n)):
        return "-"
    n = float(n)
    for unit, scale in (("B", 1e9), ("M", 1e6), ("K", 1e3)):
        if abs(n) >= scale:
            return f"{n / scale:.2f}{unit}"
    return f"{n:.0f}"


def _fmt_acc(x: float) -> str:
    return "-" if x is None or math.isnan(x) else f"{100 * x:.2f}"


def _fmt_ratio(x: float) -> str:
    return "-" if x is None or math.isnan(x) else f"{100 * x:.1f}%"


def aggregate(df: pd.DataFrame) -> pd.DataFrame:
    """成功的单元按 (方法, 取值) 对种子取平均；方法按首次出现顺序，取值升序"""
    ok = df[df["status"]]
    if ok.empty:
        return pd.DataFrame(columns=AGG_COLUMNS)
    order = {m: i for i, m in enumerate(dict.fromkeys(df["method"]))}
    agg = (
        ok.groupby(["method", "point"], sort=False)
        .agg(
            params=("params", "mean"),
            flops=("flops", "mean"),
            params_before=("params_before", "first"),
            flops_before=("flops_before", "first"),
            acc_base=("acc_base", "first"),
            acc_pre_retrain=("acc_pre_retrain", "mean"),
            acc_post_retrain=("acc_post_retrain", "mean"),
            acc_test=("acc_test", "mean"),
            seeds=("seed", "count"),
        )
        .reset_index()
    )
    agg["_order"] = agg["method"].map(order)
    return agg.sort_values(["_order", "point"], kind="stable").drop(columns="_order").reset_index(drop=True)


def select_models(agg: pd.DataFrame) -> Dict[str, Dict[str, Optional[pd.Series]]]:
    """
    每种方法选两个模型
      AF  验证准确率最高（并列取参数少的）
      PF  准确率损失 < 1 个百分点的模型中参数最少的
    """
    out: Dict[str, Dict[str, Optional[pd.Series]]] = {}
    for method, group in agg.groupby("method", sort=False):
        af = group.sort_values(["acc_post_retrain", "params"], ascending=[False, True], kind="stable")
        ok = group[group["acc_base"] - group["acc_post_retrain"] < PF_TOLERANCE]
        pf = ok.sort_values(["params", "acc_post_retrain"], ascending=[True, False], kind="stable")
        out[str(method)] = {
            "AF": af.iloc[0] if len(af) else None,
            "PF": pf.iloc[0] if len(pf) else None,
        }
    return out


def render_summary(df: pd.DataFrame) -> str:
    agg = aggregate(df)
    header = (
        f"{'method':<10} {'point':>9} {'params':>9} {'saved':>7} {'flops':>9} "
        f"{'saved':>7} {'pre':>7} {'post':>7} {'test':>7} {'n':>3}"
    )
    lines = [header, "-" * len(header)]
    for _, r in agg.iterrows():
        lines.append(
            f"{r['method']:<10} {r['point']:>9.4f} {_fmt_count(r['params']):>9} "
            f"{_fmt_ratio(1 - r['params'] / r['params_before']):>7} {_fmt_count(r['flops']):>9} "
            f"{_fmt_ratio(1 - r['flops'] / r['flops_before']):>7} "
            f"{_fmt_acc(r['acc_pre_retrain']):>7} {_fmt_acc(r['acc_post_retrain']):>7} "
            f"{_fmt_acc(r['acc_test']):>7} {int(r['seeds']):>3}"
        )
    failed = df[~df["status"]]
    if len(agg):
        lines.append("")
        lines.append(f"base accuracy: {_fmt_acc(float(agg['acc_base'].iloc[0]))}")
        for method, picks in select_models(agg).items():
            for strategy in ("AF", "PF"):
                r = picks[strategy]
                if r is None:
                    lines.append(f"{method:<10} {strategy}: -")
                    continue
                lines.append(
                    f"{method:<10} {strategy}: point={r['point']:.4f} params={_fmt_count(r['params'])} "
                    f"val={_fmt_acc(r['acc_post_retrain'])} test={_fmt_acc(r['acc_test'])}"
                )
    if len(failed):
        lines.append("")
        lines.append(f"failed cells: {len(failed)}")
        for _, r in failed.iterrows():
            lines.append(f"  {r['method']} point={r['point']:.4f} seed={int(r['seed'])}: {r['message']}")
    return "\n".join(lines) + "\n"


def render_layerwise(reports: Sequence[PruneReport]) -> str:
    """逐层参数量 / FLOPs / 通道的前后对比，Inception 模块内的层缩进列在模块名下"""
    blocks: List[str] = []
    for rep in reports:
        if rep.eta is not None:
            tag = f"eta={rep.eta:.4f}"
        elif rep.rate is not None:
            tag = f"rate={rep.rate:.4f}"
        else:
            tag = "rate=-"
        lines = [f"{rep.model} {rep.method} {tag}"]
        header = f"  {'layer':<24} {'channels':>11} {'params':>19} {'flops':>19} {'threshold':>10}"
        lines += [header, "  " + "-" * (len(header) - 2)]
        in_module = {layer: m for m, layers in rep.modules.items() for layer in layers}
        current = None
        for row in rep.layers:
            module = in_module.get(row["layer"])
            if module is not None and module != current:
                lines.append(f"  [{module}]")
            current = module
            indent = "    " if module else "  "
            t = row["threshold"]
            lines.append(
                f"{indent}{row['layer']:<{26 - len(indent)}} "
                f"{row['channels_before']:>5}→{row['channels_after']:<5} "
                f"{_fmt_count(row['params_before']):>9}→{_fmt_count(row['params_after']):<9} "
                f"{_fmt_count(row['flops_before']):>9}→{_fmt_count(row['flops_after']):<9} "
                f"{'-' if t is None else format(t, '.4g'):>10}"
            )
        lines.append(
            f"  total params {_fmt_count(rep.params_before)} → {_fmt_count(rep.params_after)} "
            f"({_fmt_ratio(rep.params_saved)} saved), flops {_fmt_count(rep.flops_before)} → "
            f"{_fmt_count(rep.flops_after)} ({_fmt_ratio(rep.flops_saved)} saved)"
        )
        for w in rep.warnings:
            lines.append(f"  warning: {w}")
        blocks.append("\n".join(lines))
    return "\n\n".join(blocks) + "\n"


def find_reports(root: str) -> List[PruneReport]:
    paths = sorted(Path(root).rglob("*.report.json"))
    if not paths:
        raise DataError(f"{root} 下没有剪枝报告")
    return [PruneReport.load(str(p)) for p in paths]
