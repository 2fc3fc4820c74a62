"""
Fisher 剪枝流水线：LDA 末层选择 → 反卷积回溯 → 逐层阈值 → 级联 → 结构化删除

analyse 的结果与 η 无关，扫描多个 η 时只算一次。
"""

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .mask import PruneMask, apply_mask, build_mask, cascade_dead
from .report import PruneReport, build_report, utility_diagnostics
from ..fp_lda import (
    LDAScores,
    ScatterPair,
    FiringMatrix,
    scatter,
    lda_scores,
    dump_lda_csv,
    select_neurons,
    lda_diagnostics,
    build_firing_matrix,
)
from ..fp_net import NetGraph
from ..fp_deconv import UtilityMap, trace_utility, dump_utility_csv
from ..utils.data import Dataset
from ..utils.config import LdaPolicy, TraceConfig
from ..utils.logger import MSG_PREFIX, logger
from ..utils.errors import NumericalError


@dataclass
class FisherAnalysis:
    firing: FiringMatrix
    pair: ScatterPair
    scores: LDAScores


@dataclass
class PruneOutcome:
    net: NetGraph
    mask: Optional[PruneMask]
    report: PruneReport
    utility: Optional[UtilityMap] = None


def analyse(
    net: NetGraph,
    data: Dataset,
    max_samples: Optional[int] = None,
    dump_dir: Optional[str] = None,
) -> FisherAnalysis:
    fm = build_firing_matrix(net, data, max_samples=max_samples)
    pair = scatter(fm)
    scores = lda_scores(pair, fm.column_to_neuron)
    if dump_dir:
        dump_lda_csv(fm, scores, dump_dir)
    return FisherAnalysis(fm, pair, scores)


def fisher_prune(
    net: NetGraph,
    data: Dataset,
    eta: float,
    policy: Optional[LdaPolicy] = None,
    trace_cfg: Optional[TraceConfig] = None,
    analysis: Optional[FisherAnalysis] = None,
    max_samples: Optional[int] = None,
    dump_lda: Optional[str] = None,
    dump_utility: Optional[str] = None,
) -> PruneOutcome:
    policy = policy or LdaPolicy()
    analysis = analysis or analyse(net, data, max_samples, dump_lda)
    selected = select_neurons(analysis.scores, policy, eta)
    logger.info(
        f"{MSG_PREFIX} [Fisher] η={eta}: 末层保留 {selected.size}/{analysis.firing.num_neurons} 个神经元"
    )
    um = trace_utility(net, data, selected, analysis.scores, trace_cfg, max_samples)
    if dump_utility:
        dump_utility_csv(um, dump_utility)

    mask = cascade_dead(build_mask(um, eta, net, lda_selected=selected), net)
    pruned = apply_mask(net, mask)

    diagnostics = {}
    try:
        diagnostics.update(lda_diagnostics(analysis.pair, analysis.scores))
    except NumericalError as e:
        logger.warning(f"{MSG_PREFIX} [Fisher] LDA 诊断失败: {e}")
    diagnostics.update(utility_diagnostics(um))
    report = build_report(
        net,
        pruned,
        "fisher",
        mask=mask,
        eta=eta,
        lda_selected=np.asarray(selected),
        diagnostics=diagnostics,
    )
    logger.success(
        f"{MSG_PREFIX} [Fisher] η={eta}: 参数 {report.params_before} → {report.params_after} "
        f"({report.params_saved:.1%} 减少), FLOPs {report.flops_before} → {report.flops_after}"
    )
    return PruneOutcome(pruned, mask, report, um)
