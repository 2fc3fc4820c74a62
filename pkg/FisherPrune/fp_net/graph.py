"""
网络图（分层 DAG）

节点按拓扑序存放；保留 id "input" 指代网络输入。
每种层的参数：
  Conv     fn, cn, h, w, stride, pad      权重 kernel (fn×cn×h×w), bias (fn)
  Dense    din, dout                      权重 W (dout×din), b (dout)
  MaxPool  k, stride
  Dropout  rate
  Concat   按 inputs 顺序在通道维拼接
  ReLU / Flatten / Softmax 无参数

权重可以缺省（仅用于统计参数量 / FLOPs 的结构，如 VGG-16、GoogLeNet），
此时可以校验与计数，但不能前向。
"""

import copy
from dataclasses import field, dataclass
from typing import Any, Dict, List, Tuple, Optional, Sequence

import torch
import torch.nn.functional as F

from ..fp_tensor import (
    DTYPE,
    ConvWeights,
    PoolSwitches,
    rectify,
    as_tensor,
    dense_forward,
    conv2d_forward,
    maxpool_forward,
)
from ..utils.models import LayerKind
from ..utils.errors import ShapeError, ModelFormatError

INPUT_ID = "input"
Shape = Tuple[int, ...]

REQUIRED_PARAMS: Dict[LayerKind, Tuple[str, ...]] = {
    LayerKind.CONV: ("fn", "cn", "h", "w"),
    LayerKind.DENSE: ("din", "dout"),
    LayerKind.MAXPOOL: ("k", "stride"),
    LayerKind.DROPOUT: ("rate",),
}

WEIGHT_KEYS: Dict[LayerKind, Tuple[str, ...]] = {
    LayerKind.CONV: ("kernel", "bias"),
    LayerKind.DENSE: ("W", "b"),
}


@dataclass
class LayerNode:
    id: str
    kind: LayerKind
    inputs: List[str] = field(default_factory=list)
    params: Dict[str, Any] = field(default_factory=dict)
    weights: Dict[str, torch.Tensor] = field(default_factory=dict)
    # 非结构化剪枝（权重幅值基线）的 0/1 掩码，重训练时保持被剪权重为 0
    masks: Dict[str, torch.Tensor] = field(default_factory=dict)

    @property
    def prunable(self) -> bool:
        return self.kind in (LayerKind.CONV, LayerKind.DENSE)

    @property
    def units(self) -> int:
        """输出通道 / 神经元个数"""
        if self.kind == LayerKind.CONV:
            return int(self.params["fn"])
        if self.kind == LayerKind.DENSE:
            return int(self.params["dout"])
        raise ModelFormatError(f"{self.kind.value} 层没有可剪枝单元", node=self.id)

    def weight_shapes(self) -> Dict[str, Shape]:
        p = self.params
        if self.kind == LayerKind.CONV:
            return {
                "kernel": (p["fn"], p["cn"], p["h"], p["w"]),
                "bias": (p["fn"],),
            }
        if self.kind == LayerKind.DENSE:
            return {"W": (p["dout"], p["din"]), "b": (p["dout"],)}
        return {}

    def param_count(self) -> int:
        total = 0
        for shape in self.weight_shapes().values():
            n = 1
            for d in shape:
                n *= int(d)
            total += n
        return total

    def conv_weights(self) -> ConvWeights:
        self._require_weights()
        return ConvWeights(
            self.weights["kernel"],
            self.weights["bias"],
            stride=int(self.params.get("stride", 1)),
            pad=int(self.params.get("pad", 0)),
        )

    def _require_weights(self) -> None:
        if not self.weights:
            raise ModelFormatError("该层没有权重（仅结构模型不能前向）", node=self.id)

    def clone(self) -> "LayerNode":
        return LayerNode(
            id=self.id,
            kind=self.kind,
            inputs=list(self.inputs),
            params=copy.deepcopy(self.params),
            weights={k: v.detach().clone() for k, v in self.weights.items()},
            masks={k: v.detach().clone() for k, v in self.masks.items()},
        )


@dataclass
class ActivationCache:
    """前向缓存：每个节点的批量输出与每个池化层的开关"""

    outputs: Dict[str, torch.Tensor]
    switches: Dict[str, PoolSwitches]

    def output(self, node_id: str, sample: Optional[int] = None) -> torch.Tensor:
        out = self.outputs[node_id]
        return out if sample is None else out[sample]

    def switch(self, node_id: str, sample: int) -> PoolSwitches:
        s = self.switches.get(node_id)
        if s is None:
            raise ShapeError("缺少池化开关缓存", node=node_id, dim="switch")
        return PoolSwitches(s.indices[sample], s.in_hw, s.k, s.stride)

    @property
    def num_samples(self) -> int:
        return int(self.outputs[INPUT_ID].shape[0])


class NetGraph:
    """
    分层 DAG 网络

    构造时校验：id 唯一、前驱可解析且在前、形状逐层一致、
    恰好一个 Softmax 出口、末层隐层经 Dropout / Flatten 直连决策层。
    """

    def __init__(
        self,
        nodes: Sequence[LayerNode],
        input_shape: Sequence[int],
        num_classes: int,
        last_hidden: str,
        name: str = "net",
    ):
        self.nodes: List[LayerNode] = list(nodes)
        self.input_shape: Shape = tuple(int(d) for d in input_shape)
        self.num_classes = int(num_classes)
        self.last_hidden = last_hidden
        self.name = name
        self.shapes: Dict[str, Shape] = {}
        self._index: Dict[str, LayerNode] = {}
        self._consumers: Dict[str, List[str]] = {}
        self.validate()

    # ── 查询 ────────────────────────────────────────────────────────────────

    def node(self, node_id: str) -> LayerNode:
        try:
            return self._index[node_id]
        except KeyError:
            raise ModelFormatError("未知的层 id", node=node_id) from None

    def consumers(self, node_id: str) -> List[str]:
        return self._consumers.get(node_id, [])

    def prunable_nodes(self) -> List[LayerNode]:
        return [n for n in self.nodes if n.prunable]

    @property
    def softmax_id(self) -> str:
        return self._softmax_id

    @property
    def decision_id(self) -> str:
        """Softmax 前的决策层（Dense）"""
        return self._decision_id

    @property
    def has_weights(self) -> bool:
        return all(n.weights for n in self.nodes if n.prunable)

    def parameters(self) -> List[torch.Tensor]:
        return [t for n in self.nodes for t in n.weights.values()]

    def named_parameters(self) -> List[Tuple[str, str, torch.Tensor]]:
        return [(n.id, k, t) for n in self.nodes for k, t in n.weights.items()]

    def clone(self) -> "NetGraph":
        return NetGraph(
            [n.clone() for n in self.nodes],
            self.input_shape,
            self.num_classes,
            self.last_hidden,
            name=self.name,
        )

    def equals(self, other: "NetGraph", weights: bool = True) -> bool:
        """结构相等；weights=True 时权重逐位相等"""
        if (
            self.input_shape != other.input_shape
            or self.num_classes != other.num_classes
            or self.last_hidden != other.last_hidden
            or len(self.nodes) != len(other.nodes)
        ):
            return False
        for a, b in zip(self.nodes, other.nodes):
            if (a.id, a.kind, a.inputs, a.params) != (b.id, b.kind, b.inputs, b.params):
                return False
            if not weights:
                continue
            for store_a, store_b in ((a.weights, b.weights), (a.masks, b.masks)):
                if store_a.keys() != store_b.keys():
                    return False
                if any(not torch.equal(store_a[k], store_b[k]) for k in store_a):
                    return False
        return True

    # ── 校验 ────────────────────────────────────────────────────────────────

    def validate(self) -> Dict[str, Shape]:
        self._index = {}
        self._consumers = {INPUT_ID: []}
        shapes: Dict[str, Shape] = {INPUT_ID: self.input_shape}

        for node in self.nodes:
            if node.id == INPUT_ID or node.id in self._index:
                raise ModelFormatError("层 id 重复或使用了保留名", node=node.id)
            if not isinstance(node.kind, LayerKind):
                raise ModelFormatError(f"未知层类型 {node.kind}", node=node.id)
            for src in node.inputs:
                if src not in shapes:
                    raise ModelFormatError(f"前驱 {src} 不存在或不在其之前", node=node.id)
            if node.kind == LayerKind.CONCAT:
                if len(node.inputs) < 2:
                    raise ModelFormatError("Concat 至少需要两个输入", node=node.id)
            elif len(node.inputs) != 1:
                raise ModelFormatError("该层必须恰好有一个输入", node=node.id)
            for key in REQUIRED_PARAMS.get(node.kind, ()):
                if key not in node.params:
                    raise ModelFormatError(f"缺少参数 {key}", node=node.id)

            try:
                shapes[node.id] = self._infer_shape(node, [shapes[i] for i in node.inputs])
            except ShapeError as e:
                raise ModelFormatError(e.message, node=node.id, dim=e.dim) from e
            self._check_weights(node)

            self._index[node.id] = node
            self._consumers[node.id] = []
            for src in node.inputs:
                self._consumers[src].append(node.id)

        self._check_topology(shapes)
        self.shapes = shapes
        return shapes

    def _infer_shape(self, node: LayerNode, ins: List[Shape]) -> Shape:
        kind, p = node.kind, node.params
        x = ins[0]
        if kind == LayerKind.CONV:
            if len(x) != 3:
                raise ShapeError("Conv 输入必须是 C×H×W", dim="rank")
            if x[0] != p["cn"]:
                raise ShapeError(f"输入通道 {x[0]} ≠ cn {p['cn']}", dim="cn")
            stride, pad = int(p.get("stride", 1)), int(p.get("pad", 0))
            if min(p["fn"], p["cn"], p["h"], p["w"], stride) < 1 or pad < 0:
                raise ShapeError("Conv 参数必须为正", dim="kernel")
            oh = (x[1] + 2 * pad - p["h"]) // stride + 1
            ow = (x[2] + 2 * pad - p["w"]) // stride + 1
            if x[1] + 2 * pad < p["h"] or x[2] + 2 * pad < p["w"]:
                raise ShapeError("卷积核大于输入", dim="H")
            return (int(p["fn"]), oh, ow)
        if kind in (LayerKind.RELU, LayerKind.DROPOUT):
            if kind == LayerKind.DROPOUT and not 0 <= float(p["rate"]) < 1:
                raise ShapeError("Dropout 比例必须在 [0, 1)", dim="rate")
            return x
        if kind == LayerKind.MAXPOOL:
            if len(x) != 3:
                raise ShapeError("MaxPool 输入必须是 C×H×W", dim="rank")
            k, s = int(p["k"]), int(p["stride"])
            for name, size in (("H", x[1]), ("W", x[2])):
                if k < 1 or s < 1 or size < k or (size - k) % s:
                    raise ShapeError(f"池化 {k}/{s} 不能铺满 {size}", dim=name)
            return (x[0], (x[1] - k) // s + 1, (x[2] - k) // s + 1)
        if kind == LayerKind.FLATTEN:
            n = 1
            for d in x:
                n *= d
            return (n,)
        if kind == LayerKind.DENSE:
            if len(x) != 1:
                raise ShapeError("Dense 输入必须是一维（先 Flatten）", dim="rank")
            if x[0] != p["din"]:
                raise ShapeError(f"输入维度 {x[0]} ≠ din {p['din']}", dim="din")
            if min(p["din"], p["dout"]) < 1:
                raise ShapeError("Dense 维度必须为正", dim="dout")
            return (int(p["dout"]),)
        if kind == LayerKind.CONCAT:
            ranks = {len(s) for s in ins}
            if len(ranks) != 1:
                raise ShapeError("Concat 输入维数不一致", dim="rank")
            if any(s[1:] != x[1:] for s in ins):
                raise ShapeError("Concat 输入空间尺寸不一致", dim="HW")
            return (sum(s[0] for s in ins),) + tuple(x[1:])
        if kind == LayerKind.SOFTMAX:
            if len(x) != 1 or x[0] != self.num_classes:
                raise ShapeError(f"Softmax 输入必须是 {self.num_classes} 维", dim="C")
            return x
        raise ShapeError(f"未知层类型 {kind}", dim="kind")

    def _check_weights(self, node: LayerNode) -> None:
        expected = node.weight_shapes()
        if not node.weights:
            return
        if set(node.weights) != set(expected):
            raise ModelFormatError(f"权重键应为 {sorted(expected)}", node=node.id)
        for key, shape in expected.items():
            if tuple(node.weights[key].shape) != tuple(shape):
                raise ModelFormatError(
                    f"权重 {key} 形状 {tuple(node.weights[key].shape)} ≠ {tuple(shape)}",
                    node=node.id,
                    dim=key,
                )
        for key, mask in node.masks.items():
            if key not in node.weights or mask.shape != node.weights[key].shape:
                raise ModelFormatError(f"掩码 {key} 与权重不匹配", node=node.id)

    def _check_topology(self, shapes: Dict[str, Shape]) -> None:
        softmax = [n for n in self.nodes if n.kind == LayerKind.SOFTMAX]
        if len(softmax) != 1:
            raise ModelFormatError(f"必须恰好一个 Softmax，实际 {len(softmax)}")
        self._softmax_id = softmax[0].id
        sinks = [n.id for n in self.nodes if not self._consumers[n.id]]
        if sinks != [self._softmax_id]:
            raise ModelFormatError(f"除 Softmax 外存在悬空输出: {sinks}")

        decision = self._index[softmax[0].inputs[0]]
        if decision.kind != LayerKind.DENSE:
            raise ModelFormatError("Softmax 的输入必须是 Dense 决策层", node=decision.id)
        self._decision_id = decision.id

        for node in self.nodes:
            if node.kind == LayerKind.DROPOUT:
                for c in self._consumers[node.id]:
                    if self._index[c].kind not in (LayerKind.DENSE, LayerKind.FLATTEN):
                        raise ModelFormatError("Dropout 只能放在 Dense 的输入端", node=node.id)

        if self.last_hidden not in self._index:
            raise ModelFormatError("末层隐层 id 不存在", node=self.last_hidden)
        cur = decision.inputs[0]
        while cur != self.last_hidden:
            n = self._index.get(cur)
            if n is None or n.kind not in (LayerKind.DROPOUT, LayerKind.FLATTEN):
                raise ModelFormatError(
                    "末层隐层必须经 Dropout / Flatten 直连决策层", node=self.last_hidden
                )
            cur = n.inputs[0]
        if len(self._consumers[self.last_hidden]) != 1:
            raise ModelFormatError("末层隐层只能连向决策层", node=self.last_hidden)

    # ── 前向 ────────────────────────────────────────────────────────────────

    def forward(
        self,
        batch: torch.Tensor,
        train: bool = False,
        generator: Optional[torch.Generator] = None,
        channel_mask: Optional[Dict[str, torch.Tensor]] = None,
    ) -> Tuple[torch.Tensor, ActivationCache]:
        """
        批量前向，返回 (logits, 缓存)

        logits 为决策层输出；缓存里 Softmax 节点保存类别概率。
        channel_mask 把指定层输出按通道乘 0/1，用于"置零等价"校验。
        """
        x = as_tensor(batch)
        if tuple(x.shape[1:]) != self.input_shape:
            raise ShapeError(
                f"输入形状 {tuple(x.shape[1:])} ≠ {self.input_shape}", dim="input"
            )
        outputs: Dict[str, torch.Tensor] = {INPUT_ID: x}
        switches: Dict[str, PoolSwitches] = {}
        for node in self.nodes:
            ins = [outputs[i] for i in node.inputs]
            y = self._run(node, ins, train, generator, switches)
            if channel_mask is not None and node.id in channel_mask:
                m = channel_mask[node.id].to(DTYPE)
                y = y * m.view(1, -1, *([1] * (y.dim() - 2)))
            outputs[node.id] = y
        return outputs[self._decision_id], ActivationCache(outputs, switches)

    def predict_proba(self, batch: torch.Tensor) -> torch.Tensor:
        with torch.no_grad():
            _, cache = self.forward(batch)
        return cache.output(self._softmax_id)

    def _run(
        self,
        node: LayerNode,
        ins: List[torch.Tensor],
        train: bool,
        generator: Optional[torch.Generator],
        switches: Dict[str, PoolSwitches],
    ) -> torch.Tensor:
        kind, x = node.kind, ins[0]
        if kind == LayerKind.CONV:
            return conv2d_forward(x, node.conv_weights())
        if kind == LayerKind.RELU:
            return rectify(x)
        if kind == LayerKind.MAXPOOL:
            y, s = maxpool_forward(x, int(node.params["k"]), int(node.params["stride"]))
            switches[node.id] = s
            return y
        if kind == LayerKind.DENSE:
            node._require_weights()
            return dense_forward(x, node.weights["W"], node.weights["b"])
        if kind == LayerKind.DROPOUT:
            rate = float(node.params["rate"])
            if not train or rate == 0.0:
                return x
            keep = torch.rand(x.shape, generator=generator, dtype=DTYPE) >= rate
            return x * keep.to(DTYPE) / (1.0 - rate)
        if kind == LayerKind.FLATTEN:
            return x.reshape(x.shape[0], -1)
        if kind == LayerKind.CONCAT:
            return torch.cat(ins, dim=1)
        if kind == LayerKind.SOFTMAX:
            return F.softmax(x, dim=1)
        raise ModelFormatError(f"未知层类型 {kind}", node=node.id)
