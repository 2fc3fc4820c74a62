"""
剪枝报告

与剪枝后的模型放在一起（<model>.report.json），记录逐层参数量 / FLOPs /
通道数的前后对比、阈值、告警和诊断量。
"""

from pathlib import Path
from typing import Dict, List, Literal, Optional

import numpy as np
import scipy.stats
from pydantic import Field, BaseModel, ConfigDict

from .mask import PruneMask
from ..fp_net import NetGraph
from ..fp_deconv import UtilityMap
from ..utils.models import LayerKind, LayerLedger
from ..utils.counting import layer_flops, count_flops, layer_params, count_params
from ..utils.errors import DataError


class PruneReport(BaseModel):
    model_config = ConfigDict(ser_json_inf_nan="constants")

    model: str = Field(title="模型名")
    method: Literal["fisher", "magnitude", "filternorm"] = Field(title="剪枝方法")
    eta: Optional[float] = Field(default=None, title="η（fisher）")
    rate: Optional[float] = Field(default=None, title="剪枝率（基线）")
    params_before: int
    params_after: int
    flops_before: int
    flops_after: int
    layers: List[LayerLedger] = Field(default_factory=list)
    modules: Dict[str, List[str]] = Field(default_factory=dict, title="Inception 模块 → 所含层")
    lda_selected: List[int] = Field(default_factory=list, title="末层保留的神经元")
    warnings: List[str] = Field(default_factory=list)
    diagnostics: Dict[str, float] = Field(default_factory=dict)
    acc_before: Optional[float] = None
    acc_after_prune: Optional[float] = None
    acc_after_retrain: Optional[float] = None

    @property
    def params_saved(self) -> float:
        return 1.0 - self.params_after / self.params_before if self.params_before else 0.0

    @property
    def flops_saved(self) -> float:
        return 1.0 - self.flops_after / self.flops_before if self.flops_before else 0.0

    def save(self, path: str) -> Path:
        p = Path(path)
        p.parent.mkdir(parents=True, exist_ok=True)
        p.write_text(self.model_dump_json(indent=2), "utf-8")
        return p

    @classmethod
    def load(cls, path: str) -> "PruneReport":
        try:
            return cls.model_validate_json(Path(path).read_text("utf-8"))
        except FileNotFoundError as e:
            raise DataError(f"剪枝报告不存在: {path}") from e
        except ValueError as e:
            raise DataError(f"剪枝报告无效: {e}") from e


def report_path(model_path: str) -> Path:
    p = Path(model_path)
    stem = p.name[: -len(".json")] if p.name.endswith(".json") else p.name
    return p.with_name(f"{stem}.report.json")


def module_groups(net: NetGraph) -> Dict[str, List[str]]:
    """按 Inception 模块（Concat 节点 <id>_output）把可剪枝层分组"""
    groups: Dict[str, List[str]] = {}
    for node in net.nodes:
        if node.kind != LayerKind.CONCAT or not node.id.endswith("_output"):
            continue
        prefix = node.id[: -len("_output")]
        groups[prefix] = [
            n.id for n in net.nodes if n.prunable and n.id.startswith(f"{prefix}_")
        ]
    return groups


def layer_ledgers(
    original: NetGraph,
    pruned: NetGraph,
    mask: Optional[PruneMask] = None,
    sparse: bool = False,
) -> List[LayerLedger]:
    rows: List[LayerLedger] = []
    after_index = {n.id: n for n in pruned.nodes}
    for node in original.prunable_nodes():
        new = after_index.get(node.id)
        t = mask.thresholds.get(node.id) if mask is not None else None
        rows.append(
            {
                "layer": node.id,
                "kind": node.kind.value,
                "params_before": layer_params(node),
                "params_after": layer_params(new, sparse) if new else 0,
                "flops_before": layer_flops(node, original.shapes[node.id]),
                "flops_after": layer_flops(new, pruned.shapes[new.id]) if new else 0,
                "channels_before": node.units,
                "channels_after": new.units if new else 0,
                "threshold": None if t is None or np.isnan(t) else float(t),
            }
        )
    return rows


def utility_diagnostics(um: UtilityMap) -> Dict[str, float]:
    """每层效用场的偏度与峰度，检查阈值规则依赖的近似高斯假设"""
    out: Dict[str, float] = {}
    for layer in um.layers:
        x = um.field_values(layer)
        if x.size < 3 or np.allclose(x, x[0]):
            continue
        out[f"skew:{layer}"] = float(scipy.stats.skew(x))
        out[f"kurtosis:{layer}"] = float(scipy.stats.kurtosis(x))
    return out


def build_report(
    original: NetGraph,
    pruned: NetGraph,
    method: str,
    mask: Optional[PruneMask] = None,
    eta: Optional[float] = None,
    rate: Optional[float] = None,
    lda_selected=None,
    diagnostics: Optional[Dict[str, float]] = None,
) -> PruneReport:
    sparse = method == "magnitude"
    return PruneReport(
        model=original.name,
        method=method,
        eta=eta,
        rate=rate,
        params_before=count_params(original),
        params_after=count_params(pruned, sparse=sparse),
        flops_before=count_flops(original),
        flops_after=count_flops(pruned),
        layers=layer_ledgers(original, pruned, mask, sparse),
        modules=module_groups(original),
        lda_selected=[] if lda_selected is None else [int(n) for n in lda_selected],
        warnings=list(mask.warnings) if mask is not None else [],
        diagnostics=diagnostics or {},
    )
