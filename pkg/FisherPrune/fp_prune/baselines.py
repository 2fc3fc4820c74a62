"""
基线剪枝

  magnitude_prune    全网统一阈值，把 |w| 最小的一部分权重置 0，掩码随模型保存并在重训练时保持
  filter_norm_prune  逐层按滤波器 L1 范数删除最小的一部分，走与 Fisher 剪枝相同的结构化删除路径
"""

import math
from typing import Dict, List

import torch

from .mask import PruneMask, propagate, apply_mask, cascade_dead
from ..fp_net import NetGraph
from ..utils.models import LayerKind
from ..utils.logger import MSG_PREFIX, logger
from ..utils.errors import UsageError, PruneError

MAIN_WEIGHT = {LayerKind.CONV: "kernel", LayerKind.DENSE: "W"}


def _check_rate(rate: float, name: str = "rate") -> None:
    if not 0.0 <= rate < 1.0:
        raise UsageError(f"{name} 必须在 [0, 1)，实际 {rate}")


def magnitude_prune(net: NetGraph, rate: float) -> NetGraph:
    """
    把全网卷积核与全连接权重中 |w| 最小的 floor(rate·n) 个置 0（偏置不参与）

    同值时下标小的先被剪；已被掩码剪掉的权重仍计入总数。
    FLOPs 不变，参数量按非零权重计（count_params(sparse=True)）。
    """
    _check_rate(rate)
    if not net.has_weights:
        raise PruneError(f"网络 {net.name} 没有权重，不能按幅值剪枝")
    out = net.clone()
    targets = [(n, MAIN_WEIGHT[n.kind]) for n in out.nodes if n.prunable]
    flat = torch.cat([n.weights[k].abs().flatten() for n, k in targets])
    drop = int(math.floor(rate * flat.numel()))
    if drop == 0:
        return out

    order = torch.sort(flat, stable=True).indices[:drop]
    keep = torch.ones_like(flat)
    keep[order] = 0.0

    offset = 0
    for node, key in targets:
        w = node.weights[key]
        m = keep[offset : offset + w.numel()].reshape(w.shape)
        offset += w.numel()
        if key in node.masks:
            m = m * node.masks[key]
        node.masks[key] = m
        node.weights[key] = w * m
    logger.info(
        f"{MSG_PREFIX} [幅值剪枝] {net.name}: rate={rate:.4f}, 置零 {drop}/{flat.numel()} 个权重"
    )
    return out


def filter_l1_norms(net: NetGraph, layer: str) -> torch.Tensor:
    node = net.node(layer)
    w = node.weights[MAIN_WEIGHT[node.kind]]
    return w.abs().flatten(start_dim=1).sum(dim=1)


def filter_norm_mask(net: NetGraph, rates: Dict[str, float]) -> PruneMask:
    """逐层删除 floor(rate·fn) 个 L1 范数最小的滤波器（同值删下标小的），每层至少留 1 个"""
    if not net.has_weights:
        raise PruneError(f"网络 {net.name} 没有权重，不能按滤波器范数剪枝")
    kept_out: Dict[str, List[int]] = {}
    warnings: List[str] = []
    for node in net.prunable_nodes():
        if node.id == net.decision_id:
            continue
        rate = rates.get(node.id, 0.0)
        if not 0.0 <= rate <= 1.0:
            raise UsageError(f"{node.id} 的剪枝率必须在 [0, 1]，实际 {rate}")
        drop = int(math.floor(rate * node.units))
        if drop >= node.units:
            drop = node.units - 1
            msg = f"{node.id} 将被剪空，保留范数最大的通道"
            warnings.append(msg)
            logger.warning(f"{MSG_PREFIX} [范数剪枝] {msg}")
        order = torch.sort(filter_l1_norms(net, node.id), stable=True).indices
        kept_out[node.id] = sorted(int(c) for c in order[drop:])
    return propagate(PruneMask(kept_out, warnings=warnings), net)


def filter_norm_prune(net: NetGraph, rates: Dict[str, float]) -> NetGraph:
    mask = cascade_dead(filter_norm_mask(net, rates), net)
    return apply_mask(net, mask)


def rates_from_layers(layers) -> Dict[str, float]:
    """由剪枝报告的逐层台账得到每层剪枝率，用于基线的同率对比"""
    return {
        row["layer"]: 1.0 - row["channels_after"] / row["channels_before"]
        for row in layers
        if row["channels_before"]
    }


def global_rate(params_before: int, params_after: int) -> float:
    """整体参数剪枝率，用于幅值基线的同率对比"""
    if params_before <= 0:
        return 0.0
    return min(max(1.0 - params_after / params_before, 0.0), 0.999999)


def uniform_rates(net: NetGraph, rate: float) -> Dict[str, float]:
    _check_rate(rate)
    return {n.id: rate for n in net.prunable_nodes() if n.id != net.decision_id}
