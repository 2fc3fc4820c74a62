"""
反卷积效用回溯

把末层选中神经元的分类效用沿网络逐层反向传递：
  MaxPool → 用该样本缓存的开关反池化
  ReLU    → rectify（放在正向 ReLU 所在的位置）
  Conv    → 转置卷积（忽略偏置）
  Dense   → 视作 1×1 卷积后做转置卷积
  Concat  → 按记录的顺序把通道拆回各分支（分组回溯）
  Flatten → 还原为特征图形状；Dropout 直接透传
多个消费者回传到同一层时逐元素相加。

每层的重建场在 N 个样本上取平均，通道得分取平均场的空间最大值。
整批样本一起回溯：各步都是逐样本独立的线性 / 逐元素运算，与逐样本回溯等价。
"""

from pathlib import Path
from dataclasses import field, dataclass
from typing import Dict, List, Tuple, Optional, Sequence

import numpy as np
import pandas as pd
import torch

from ..fp_tensor import (
    DTYPE,
    ConvWeights,
    unpool,
    rectify,
    conv2d_transpose,
)
from ..fp_lda import LDAScores
from ..fp_net import INPUT_ID, NetGraph, LayerNode, ActivationCache
from ..utils.data import Dataset
from ..utils.models import LayerKind
from ..utils.config import TraceConfig
from ..utils.logger import MSG_PREFIX, logger
from ..utils.errors import ShapeError, PruneError


@dataclass
class UtilityMap:
    """
    fields  每个可剪枝层输出处的样本平均重建场（C×H×W 或 D）
    scores  每个通道的效用得分 max(u_i^c)，≥ 0
    """

    fields: Dict[str, torch.Tensor]
    scores: Dict[str, np.ndarray]
    selected: np.ndarray
    source: str
    num_samples: int
    seed_weighting: str = "activation"
    layers: List[str] = field(default_factory=list)

    def field_values(self, layer: str) -> np.ndarray:
        return self.fields[layer].flatten().cpu().numpy()


def channel_scores(avg_field: torch.Tensor) -> np.ndarray:
    """空间最大值；一维场每个元素即一个通道。结果截到 ≥ 0"""
    if avg_field.dim() > 1:
        s = avg_field.flatten(start_dim=1).max(dim=1).values
    else:
        s = avg_field
    return np.clip(s.cpu().numpy(), 0.0, None)


# ── 种子 ──────────────────────────────────────────────────────────────────


def seed_utility(
    selected: Sequence[int],
    scores: Optional[LDAScores],
    cache: ActivationCache,
    net: NetGraph,
    sample: Optional[int] = None,
    weighting: str = "activation",
) -> torch.Tensor:
    """
    末层隐层形状的种子

    选中的神经元在其发放位置（空间最大值处）取激活值，其余为 0；
    weighting="activation_lda" 时再乘以该神经元的 v_j。
    """
    sel = torch.as_tensor(np.asarray(selected, dtype=np.int64))
    if sel.numel() == 0:
        raise PruneError("没有选中的末层神经元", node=net.last_hidden)
    act = cache.output(net.last_hidden, sample).detach()
    batched = sample is None
    a = act if batched else act.unsqueeze(0)
    seed = torch.zeros_like(a)
    if a.dim() == 2:
        seed[:, sel] = a[:, sel]
    else:
        flat = a[:, sel].flatten(start_dim=2)
        pos = flat.argmax(dim=2, keepdim=True)
        peak = torch.zeros_like(flat).scatter_(2, pos, flat.gather(2, pos))
        seed[:, sel] = peak.reshape(a[:, sel].shape)

    if weighting == "activation_lda":
        if scores is None:
            raise PruneError("activation_lda 种子需要 LDA 得分")
        lookup = scores.neuron_scores()
        w = torch.tensor([lookup.get(int(n), 0.0) for n in sel.tolist()], dtype=DTYPE)
        shape = (1, -1) + (1,) * (a.dim() - 2)
        seed[:, sel] = seed[:, sel] * w.view(shape)
    return seed if batched else seed.squeeze(0)


# ── 单步 ──────────────────────────────────────────────────────────────────


def dense_as_conv(node: LayerNode, in_shape: Optional[Sequence[int]] = None) -> ConvWeights:
    """
    全连接层的卷积视图

    纯 FC：每个输出神经元是 1×1 特征图上的 1×1×din 滤波器；
    接在卷积后的 FC（in_shape = C×H×W）：核的空间尺寸等于整张输入图，输出 1×1。
    """
    if node.kind != LayerKind.DENSE:
        raise ShapeError("只有 Dense 层有卷积视图", node=node.id, dim="kind")
    node._require_weights()
    W, b = node.weights["W"], node.weights["b"]
    dout, din = W.shape
    if in_shape is None or len(in_shape) == 1:
        kernel = W.reshape(dout, din, 1, 1)
    else:
        c, h, w = in_shape
        if c * h * w != din:
            raise ShapeError(f"C×H×W = {c * h * w} ≠ din {din}", node=node.id, dim="din")
        kernel = W.reshape(dout, c, h, w)
    return ConvWeights(kernel, b, stride=1, pad=0)


def deconv_step(
    node: LayerNode,
    u_above: torch.Tensor,
    cache: ActivationCache,
    sample: Optional[int],
    net: NetGraph,
) -> List[torch.Tensor]:
    """
    把节点输出处的重建场传到它的每个输入，返回与 node.inputs 对齐的列表

    sample 为 None 时 u_above 带批量维，使用整批的缓存开关。
    """
    kind = node.kind
    in_shapes = [net.shapes[i] for i in node.inputs]
    if kind == LayerKind.CONV:
        return [conv2d_transpose(u_above, node.conv_weights(), in_hw=in_shapes[0][1:])]
    if kind == LayerKind.MAXPOOL:
        if sample is None:
            s = cache.switches.get(node.id)
            if s is None:
                raise ShapeError("缺少池化开关缓存", node=node.id, dim="switch")
        else:
            s = cache.switch(node.id, sample)
        return [unpool(u_above, s, in_shapes[0])]
    if kind == LayerKind.RELU:
        return [rectify(u_above)]
    if kind in (LayerKind.DROPOUT, LayerKind.SOFTMAX):
        return [u_above]
    if kind == LayerKind.FLATTEN:
        lead = (u_above.shape[0],) if sample is None else ()
        return [u_above.reshape(*lead, *in_shapes[0])]
    if kind == LayerKind.DENSE:
        view = dense_as_conv(node)
        u = u_above.reshape(*u_above.shape, 1, 1)
        x = conv2d_transpose(u, view)
        return [x.reshape(*u_above.shape[:-1], view.cn)]
    if kind == LayerKind.CONCAT:
        sizes = [s[0] for s in in_shapes]
        dim = 1 if sample is None else 0
        return list(torch.split(u_above, sizes, dim=dim))
    raise ShapeError(f"未知层类型 {kind}", node=node.id, dim="kind")


# ── 整体回溯 ──────────────────────────────────────────────────────────────


def trace_batch(
    net: NetGraph,
    cache: ActivationCache,
    selected: Sequence[int],
    scores: Optional[LDAScores],
    weighting: str = "activation",
) -> Dict[str, torch.Tensor]:
    """
    对一批缓存回溯，返回每个可剪枝层重建场在本批上的逐样本求和

    只用到缓存与末层隐层及其以下各层的权重。
    """
    stop = next(i for i, n in enumerate(net.nodes) if n.id == net.last_hidden)
    pending: Dict[str, torch.Tensor] = {
        net.last_hidden: seed_utility(selected, scores, cache, net, None, weighting)
    }
    sums: Dict[str, torch.Tensor] = {}
    for node in reversed(net.nodes[: stop + 1]):
        u = pending.pop(node.id, None)
        if u is None:
            continue
        if node.prunable:
            sums[node.id] = u.sum(dim=0)
        for src, v in zip(node.inputs, deconv_step(node, u, cache, None, net)):
            if src == INPUT_ID:
                continue
            pending[src] = pending[src] + v if src in pending else v
    return sums


def trace_utility(
    net: NetGraph,
    data: Dataset,
    selected: Sequence[int],
    scores: Optional[LDAScores],
    cfg: Optional[TraceConfig] = None,
    max_samples: Optional[int] = None,
) -> UtilityMap:
    cfg = cfg or TraceConfig()
    data = data.head(max_samples)
    data.check()
    if len(selected) == 0:
        raise PruneError("没有选中的末层神经元", node=net.last_hidden)
    logger.info(
        f"{MSG_PREFIX} [回溯] {net.name}: {len(selected)} 个末层神经元, "
        f"{len(data)} 个样本, seed_weighting={cfg.seed_weighting}"
    )

    totals: Dict[str, torch.Tensor] = {}
    with torch.no_grad():
        for x, _ in data.batches(cfg.batch_size):
            _, cache = net.forward(x)
            for layer, s in trace_batch(net, cache, selected, scores, cfg.seed_weighting).items():
                totals[layer] = totals[layer] + s if layer in totals else s

    n = len(data)
    fields = {layer: t / n for layer, t in totals.items()}
    layers = [node.id for node in net.nodes if node.id in fields]
    return UtilityMap(
        fields=fields,
        scores={layer: channel_scores(f) for layer, f in fields.items()},
        selected=np.asarray(selected, dtype=np.int64),
        source=net.last_hidden,
        num_samples=n,
        seed_weighting=cfg.seed_weighting,
        layers=layers,
    )


def dump_utility_csv(um: UtilityMap, out_dir: str, bins: int = 50) -> Tuple[Path, Path]:
    """导出逐层效用直方图与逐通道得分"""
    root = Path(out_dir)
    root.mkdir(parents=True, exist_ok=True)
    hist_rows, score_rows = [], []
    for layer in um.layers:
        values = um.field_values(layer)
        counts, edges = np.histogram(values, bins=bins)
        for c, lo, hi in zip(counts, edges[:-1], edges[1:]):
            hist_rows.append({"layer": layer, "lo": lo, "hi": hi, "count": int(c)})
        for ch, s in enumerate(um.scores[layer]):
            score_rows.append({"layer": layer, "channel": ch, "score": float(s)})
    hist_path, score_path = root / "utility_hist.csv", root / "utility_scores.csv"
    pd.DataFrame(hist_rows).to_csv(hist_path, index=False)
    pd.DataFrame(score_rows).to_csv(score_path, index=False)
    logger.info(f"{MSG_PREFIX} [回溯] 已导出 {hist_path}, {score_path}")
    return hist_path, score_path
