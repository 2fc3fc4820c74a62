"""
剪枝掩码：阈值 → 掩码 → 级联 → 结构化删除

掩码只记录每个可剪枝层（Conv / Dense，决策层除外）保留的输出通道；
输入端保留哪些通道由上游推出（经 ReLU / 池化 / Dropout 原样传递，
经 Concat 按偏移合并，经 Flatten 展开为 H·W 个特征），保证剪后图合法。
"""

from dataclasses import field, dataclass
from typing import Dict, List, Tuple, Optional

import numpy as np
import torch

from ..fp_deconv import UtilityMap
from ..fp_net import INPUT_ID, NetGraph, LayerNode
from ..utils.models import LayerKind, CHANNEL_PRESERVING
from ..utils.logger import MSG_PREFIX, logger
from ..utils.errors import PruneError

Origin = Tuple[Optional[str], int]


@dataclass
class PruneMask:
    kept_out: Dict[str, List[int]]
    kept_in: Dict[str, List[int]] = field(default_factory=dict)
    thresholds: Dict[str, float] = field(default_factory=dict)
    warnings: List[str] = field(default_factory=list)

    @classmethod
    def identity(cls, net: NetGraph) -> "PruneMask":
        mask = cls({n.id: list(range(n.units)) for n in _prunable(net)})
        return propagate(mask, net)

    def channel_mask(self, net: NetGraph) -> Dict[str, torch.Tensor]:
        """每个可剪枝层输出的 0/1 通道向量，用于置零前向"""
        out = {}
        for node in _prunable(net):
            m = torch.zeros(node.units, dtype=torch.float64)
            m[self.kept_out.get(node.id, [])] = 1.0
            out[node.id] = m
        return out

    def is_subset_of(self, other: "PruneMask") -> bool:
        return all(set(v) <= set(other.kept_out.get(k, [])) for k, v in self.kept_out.items())


# ── 图上的通道关系 ────────────────────────────────────────────────────────


def _prunable(net: NetGraph) -> List[LayerNode]:
    """可剪枝层：Conv 与 Dense，不含决策层"""
    return [n for n in net.nodes if n.prunable and n.id != net.decision_id]


def _kept(net: NetGraph, kept_out: Dict[str, List[int]], node: LayerNode) -> List[int]:
    if node.id == net.decision_id:
        return list(range(node.units))
    return kept_out.get(node.id, list(range(node.units)))


def surviving(net: NetGraph, kept_out: Dict[str, List[int]]) -> Dict[str, List[int]]:
    """每个节点输出中保留下来的通道（原坐标，升序）"""
    surv: Dict[str, List[int]] = {INPUT_ID: list(range(net.input_shape[0]))}
    for node in net.nodes:
        ins = [surv[i] for i in node.inputs]
        if node.prunable:
            surv[node.id] = sorted(_kept(net, kept_out, node))
        elif node.kind in CHANNEL_PRESERVING or node.kind == LayerKind.SOFTMAX:
            surv[node.id] = ins[0]
        elif node.kind == LayerKind.FLATTEN:
            shape = net.shapes[node.inputs[0]]
            hw = int(np.prod(shape[1:])) if len(shape) > 1 else 1
            surv[node.id] = [c * hw + k for c in ins[0] for k in range(hw)]
        elif node.kind == LayerKind.CONCAT:
            merged, offset = [], 0
            for src, kept in zip(node.inputs, ins):
                merged.extend(offset + c for c in kept)
                offset += net.shapes[src][0]
            surv[node.id] = merged
    return surv


def channel_origins(net: NetGraph) -> Dict[str, List[Origin]]:
    """每个节点输出的每个通道来自哪个可剪枝层的哪个通道（None 表示网络输入）"""
    org: Dict[str, List[Origin]] = {INPUT_ID: [(None, c) for c in range(net.input_shape[0])]}
    for node in net.nodes:
        src = org[node.inputs[0]]
        if node.prunable:
            org[node.id] = [(node.id, c) for c in range(node.units)]
        elif node.kind == LayerKind.FLATTEN:
            shape = net.shapes[node.inputs[0]]
            hw = int(np.prod(shape[1:])) if len(shape) > 1 else 1
            org[node.id] = [src[f // hw] for f in range(len(src) * hw)]
        elif node.kind == LayerKind.CONCAT:
            org[node.id] = [o for i in node.inputs for o in org[i]]
        else:
            org[node.id] = src
    return org


def channel_users(net: NetGraph) -> Dict[Origin, List[Tuple[str, List[int]]]]:
    """(生产层, 通道) → [(消费层, 该通道在消费层输入中的下标)]"""
    org = channel_origins(net)
    users: Dict[Origin, Dict[str, List[int]]] = {}
    for node in net.nodes:
        if not node.prunable:
            continue
        for i, o in enumerate(org[node.inputs[0]]):
            users.setdefault(o, {}).setdefault(node.id, []).append(i)
    return {o: list(d.items()) for o, d in users.items()}


def producers_of(net: NetGraph, node_id: str) -> List[Origin]:
    return channel_origins(net)[node_id]


# ── 阈值与掩码 ────────────────────────────────────────────────────────────


def layer_threshold(values, eta: float) -> float:
    """t_i = η · 样本标准差（1/(N_i − 1)），values 为该层所有激活位置的效用"""
    x = np.asarray(values, dtype=np.float64).ravel()
    if x.size < 2:
        raise PruneError(f"该层只有 {x.size} 个激活，无法计算阈值")
    return float(eta * np.std(x, ddof=1))


def keep_by_threshold(scores: np.ndarray, t: float) -> np.ndarray:
    """严格小于 t 的通道剪掉；t 为 0 时得分 ≤ 0 的通道也剪掉"""
    keep = scores >= t
    if t <= 0.0:
        keep &= scores > 0.0
    return np.flatnonzero(keep)


def build_mask(
    um: UtilityMap,
    eta: float,
    net: NetGraph,
    lda_selected=None,
) -> PruneMask:
    """
    由效用图生成掩码

    末层隐层的生产层按 LDA 选择（lda_selected）保留，其余层按
    t_i = η·std 阈值；某层会被剪空时保留效用最大的一个通道并告警。
    """
    kept_out: Dict[str, List[int]] = {}
    thresholds: Dict[str, float] = {}
    warnings: List[str] = []

    lda_kept: Dict[str, List[int]] = {}
    if lda_selected is not None:
        origins = producers_of(net, net.last_hidden)
        for n in lda_selected:
            layer, c = origins[int(n)]
            if layer is not None:
                lda_kept.setdefault(layer, []).append(c)
        lda_layers = {o[0] for o in origins if o[0] is not None}
    else:
        lda_layers = set()

    for node in _prunable(net):
        if node.id in lda_layers:
            kept = np.array(sorted(lda_kept.get(node.id, [])), dtype=np.int64)
            thresholds[node.id] = float("nan")
        else:
            if node.id not in um.fields:
                raise PruneError("效用图中没有该层", node=node.id)
            t = layer_threshold(um.field_values(node.id), eta)
            thresholds[node.id] = t
            kept = keep_by_threshold(um.scores[node.id], t)
        if kept.size == 0:
            scores = um.scores.get(node.id, np.zeros(node.units))
            kept = np.array([int(np.argmax(scores))])
            msg = f"{node.id} 将被剪空，保留效用最大的通道 {kept[0]}"
            warnings.append(msg)
            logger.warning(f"{MSG_PREFIX} [剪枝] {msg}")
        kept_out[node.id] = [int(c) for c in kept]
        rule = "LDA 选择" if node.id in lda_layers else f"t={thresholds[node.id]:.4g}"
        logger.debug(f"{MSG_PREFIX} [剪枝] {node.id} {rule} kept={len(kept)}/{node.units}")
    mask = PruneMask(kept_out, thresholds=thresholds, warnings=warnings)
    return propagate(mask, net)


def propagate(mask: PruneMask, net: NetGraph) -> PruneMask:
    """由各层保留的输出通道推出每层保留的输入下标"""
    surv = surviving(net, mask.kept_out)
    mask.kept_in = {n.id: surv[n.inputs[0]] for n in net.nodes if n.prunable}
    return mask


def cascade_dead(mask: PruneMask, net: NetGraph) -> PruneMask:
    """
    级联删除，直到不动点

      - 某通道在所有消费层的保留滤波器里对应的核切片都被剪掉（或全为 0），删除该通道
      - 某层的输入通道全被删掉，整层删除
    """
    kept = {k: list(v) for k, v in mask.kept_out.items()}
    users = channel_users(net)
    nodes = _prunable(net)
    changed = True
    while changed:
        changed = False
        surv = surviving(net, kept)
        for node in reversed(nodes):
            current = kept.get(node.id, list(range(node.units)))
            if current and not surv[node.inputs[0]]:
                kept[node.id] = []
                changed = True
                continue
            alive = [
                c
                for c in current
                if any(_slice_live(net, kept, q, idx) for q, idx in users.get((node.id, c), []))
            ]
            if alive != current:
                kept[node.id] = alive
                changed = True
    out = PruneMask(
        kept,
        thresholds=dict(mask.thresholds),
        warnings=list(mask.warnings),
    )
    out = propagate(out, net)
    if not out.kept_in[net.decision_id]:
        raise PruneError("级联后决策层失去全部输入", node=net.decision_id)
    return out


def _slice_live(net: NetGraph, kept: Dict[str, List[int]], q: str, idx: List[int]) -> bool:
    node = net.node(q)
    rows = _kept(net, kept, node)
    if not rows:
        return False
    if not node.weights:
        return True
    w = node.weights["kernel" if node.kind == LayerKind.CONV else "W"]
    return bool(torch.any(w[rows][:, idx] != 0))


# ── 结构化删除 ────────────────────────────────────────────────────────────


def check_mask(mask: PruneMask, net: NetGraph) -> None:
    for node in _prunable(net):
        kept = mask.kept_out.get(node.id)
        if kept is None:
            raise PruneError("掩码缺少该层", node=node.id)
        if kept != sorted(set(kept)) or any(c < 0 or c >= node.units for c in kept):
            raise PruneError(f"保留下标无效: {kept[:8]}", node=node.id)
    derived = surviving(net, mask.kept_out)
    for node in _prunable(net):
        if mask.kept_out[node.id] and not derived[node.inputs[0]]:
            raise PruneError("保留了输出通道但输入通道已全部删除（需先级联）", node=node.id)
    for node in net.nodes:
        if node.prunable and node.id in mask.kept_in:
            if mask.kept_in[node.id] != derived[node.inputs[0]]:
                raise PruneError("输入通道与上游保留的通道不一致", node=node.id)
    if not derived[net.decision_id] or not derived[net.node(net.decision_id).inputs[0]]:
        raise PruneError("决策层失去全部输入", node=net.decision_id)


def _slice_node(node: LayerNode, rows: List[int], cols: List[int]) -> LayerNode:
    new = node.clone()
    r = torch.as_tensor(rows, dtype=torch.int64)
    c = torch.as_tensor(cols, dtype=torch.int64)
    if node.kind == LayerKind.CONV:
        new.params.update(fn=len(rows), cn=len(cols))
        main, bias = "kernel", "bias"
    else:
        new.params.update(dout=len(rows), din=len(cols))
        main, bias = "W", "b"
    if node.weights:
        new.weights[main] = node.weights[main][r][:, c].clone()
        new.weights[bias] = node.weights[bias][r].clone()
    if main in node.masks:
        new.masks[main] = node.masks[main][r][:, c].clone()
    if bias in node.masks:
        new.masks[bias] = node.masks[bias][r].clone()
    return new


def apply_mask(net: NetGraph, mask: PruneMask) -> NetGraph:
    """
    按掩码生成新网络：核沿滤波器维与通道维切片，偏置随滤波器切片，
    Dense 双向切片，被删空的分支从 Concat 中移除（只剩一路时直接旁路）
    """
    check_mask(mask, net)
    surv = surviving(net, mask.kept_out)
    # 只保留还能到达 Softmax 的节点（例如分支被删后留下的池化层要一并去掉）
    needed = {net.softmax_id}
    for node in reversed(net.nodes):
        if node.id in needed and surv[node.id]:
            needed.update(i for i in node.inputs if surv[i])
    alias: Dict[str, str] = {}
    nodes: List[LayerNode] = []

    def resolve(i: str) -> str:
        return alias.get(i, i)

    for node in net.nodes:
        if node.id not in needed or not surv[node.id]:
            continue
        if node.prunable:
            new = _slice_node(node, surv[node.id], surv[node.inputs[0]])
        elif node.kind == LayerKind.CONCAT:
            live = [i for i in node.inputs if surv[i]]
            if len(live) == 1:
                alias[node.id] = resolve(live[0])
                continue
            new = node.clone()
            new.inputs = live
        else:
            new = node.clone()
        new.inputs = [resolve(i) for i in new.inputs]
        nodes.append(new)

    pruned = NetGraph(
        nodes, net.input_shape, net.num_classes, resolve(net.last_hidden), name=net.name
    )
    logger.info(
        f"{MSG_PREFIX} [剪枝] {net.name}: {len(net.nodes)} → {len(pruned.nodes)} 层"
    )
    return pruned
