"""
网络结构构造

  desk_cnn        桌面级小 CNN：4 conv + 2 dense，MNIST 尺寸
  desk_inception  桌面级模块化网络：含一个三分支 Inception 模块
  vgg16           VGG-16（1000 类头），仅用于参数量 / FLOPs 计数
  googlenet       GoogLeNet（8 类头），仅用于计数

池化不补零：GoogLeNet 的 3×3/2 池化用 2×2/2 代替（输出尺寸相同），
模块内 3×3/1 池化分支用 1×1/1 代替，末端 7×7 平均池化用 7×7 最大池化代替；
这几处替换不影响参数量与 FLOPs（池化计 0）。
"""

import math
from typing import Dict, List, Tuple, Callable, Optional, Sequence

import torch

from .graph import INPUT_ID, NetGraph, LayerNode
from ..fp_tensor import DTYPE
from ..utils.models import LayerKind
from ..utils.errors import UsageError


class GraphBuilder:
    """按顺序追加节点，自动推算 cn / din，并可按 He 正态初始化权重"""

    def __init__(
        self,
        input_shape: Sequence[int],
        num_classes: int,
        name: str = "net",
        weights: bool = True,
        seed: int = 0,
    ):
        self.input_shape = tuple(input_shape)
        self.num_classes = num_classes
        self.name = name
        self.weights = weights
        self.generator = torch.Generator().manual_seed(seed)
        self.nodes: List[LayerNode] = []
        self.shapes: Dict[str, Tuple[int, ...]] = {INPUT_ID: self.input_shape}

    def _add(self, node: LayerNode, shape: Tuple[int, ...]) -> str:
        self.nodes.append(node)
        self.shapes[node.id] = shape
        return node.id

    def _he(self, shape: Tuple[int, ...], fan_in: int) -> torch.Tensor:
        std = math.sqrt(2.0 / fan_in)
        return torch.randn(shape, generator=self.generator, dtype=DTYPE) * std

    # ── 单层 ────────────────────────────────────────────────────────────────

    def conv(self, id: str, src: str, fn: int, k: int, stride: int = 1, pad: int = 0) -> str:
        cn, h, w = self.shapes[src]
        params = {"fn": fn, "cn": cn, "h": k, "w": k, "stride": stride, "pad": pad}
        weights = {}
        if self.weights:
            weights = {
                "kernel": self._he((fn, cn, k, k), cn * k * k),
                "bias": torch.zeros(fn, dtype=DTYPE),
            }
        oh = (h + 2 * pad - k) // stride + 1
        ow = (w + 2 * pad - k) // stride + 1
        return self._add(LayerNode(id, LayerKind.CONV, [src], params, weights), (fn, oh, ow))

    def relu(self, id: str, src: str) -> str:
        return self._add(LayerNode(id, LayerKind.RELU, [src]), self.shapes[src])

    def pool(self, id: str, src: str, k: int, stride: int) -> str:
        c, h, w = self.shapes[src]
        params = {"k": k, "stride": stride}
        shape = (c, (h - k) // stride + 1, (w - k) // stride + 1)
        return self._add(LayerNode(id, LayerKind.MAXPOOL, [src], params), shape)

    def flatten(self, id: str, src: str) -> str:
        return self._add(LayerNode(id, LayerKind.FLATTEN, [src]), (math.prod(self.shapes[src]),))

    def dropout(self, id: str, src: str, rate: float) -> str:
        return self._add(LayerNode(id, LayerKind.DROPOUT, [src], {"rate": rate}), self.shapes[src])

    def dense(self, id: str, src: str, dout: int) -> str:
        (din,) = self.shapes[src]
        weights = {}
        if self.weights:
            weights = {
                "W": self._he((dout, din), din),
                "b": torch.zeros(dout, dtype=DTYPE),
            }
        return self._add(
            LayerNode(id, LayerKind.DENSE, [src], {"din": din, "dout": dout}, weights),
            (dout,),
        )

    def concat(self, id: str, srcs: Sequence[str]) -> str:
        shapes = [self.shapes[s] for s in srcs]
        shape = (sum(s[0] for s in shapes),) + tuple(shapes[0][1:])
        return self._add(LayerNode(id, LayerKind.CONCAT, list(srcs)), shape)

    def softmax(self, id: str, src: str) -> str:
        return self._add(LayerNode(id, LayerKind.SOFTMAX, [src]), self.shapes[src])

    # ── 组合 ────────────────────────────────────────────────────────────────

    def conv_relu(self, id: str, src: str, fn: int, k: int, stride: int = 1, pad: int = 0) -> str:
        return self.relu(f"{id}_relu", self.conv(id, src, fn, k, stride, pad))

    def dense_relu(self, id: str, src: str, dout: int) -> str:
        return self.relu(f"{id}_relu", self.dense(id, src, dout))

    def inception(
        self,
        id: str,
        src: str,
        c1: int,
        r3: int,
        c3: int,
        r5: int,
        c5: int,
        pool_proj: int = 0,
    ) -> str:
        """Inception 模块：1×1 / 1×1→3×3 / 1×1→5×5 [/ 池化→1×1]，通道维拼接"""
        branches = [
            self.conv_relu(f"{id}_1x1", src, c1, 1),
            self.conv_relu(
                f"{id}_3x3", self.conv_relu(f"{id}_3x3_reduce", src, r3, 1), c3, 3, pad=1
            ),
            self.conv_relu(
                f"{id}_5x5", self.conv_relu(f"{id}_5x5_reduce", src, r5, 1), c5, 5, pad=2
            ),
        ]
        if pool_proj:
            pooled = self.pool(f"{id}_pool", src, 1, 1)
            branches.append(self.conv_relu(f"{id}_pool_proj", pooled, pool_proj, 1))
        return self.concat(f"{id}_output", branches)

    def classifier(self, src: str, hidden: Optional[int], rate: float) -> NetGraph:
        """[Flatten →] [Dropout → Dense → ReLU →] Dropout → Dense → Softmax"""
        x = src if len(self.shapes[src]) == 1 else self.flatten("flatten", src)
        last_hidden = src
        if hidden:
            x = self.dropout("fc1_drop", x, rate)
            x = last_hidden = self.dense_relu("fc1", x, hidden)
        x = self.dropout("fc_out_drop", x, rate)
        x = self.dense("fc_out", x, self.num_classes)
        self.softmax("prob", x)
        return self.build(last_hidden)

    def build(self, last_hidden: str) -> NetGraph:
        return NetGraph(self.nodes, self.input_shape, self.num_classes, last_hidden, name=self.name)


# ── 结构 ──────────────────────────────────────────────────────────────────


def desk_cnn(
    num_classes: int = 10,
    input_shape: Sequence[int] = (1, 28, 28),
    seed: int = 0,
    weights: bool = True,
) -> NetGraph:
    b = GraphBuilder(input_shape, num_classes, "desk_cnn", weights, seed)
    x = b.conv_relu("conv1", INPUT_ID, 16, 3, pad=1)
    x = b.conv_relu("conv2", x, 32, 3, pad=1)
    x = b.pool("pool2", x, 2, 2)
    x = b.conv_relu("conv3", x, 64, 3, pad=1)
    x = b.conv_relu("conv4", x, 64, 3, pad=1)
    x = b.pool("pool4", x, 2, 2)
    return b.classifier(x, hidden=128, rate=0.3)


def desk_inception(
    num_classes: int = 10,
    input_shape: Sequence[int] = (1, 28, 28),
    seed: int = 0,
    weights: bool = True,
) -> NetGraph:
    b = GraphBuilder(input_shape, num_classes, "desk_inception", weights, seed)
    x = b.conv_relu("conv1", INPUT_ID, 16, 3, pad=1)
    x = b.pool("pool1", x, 2, 2)
    x = b.inception("inc1", x, 8, 8, 16, 4, 8)
    x = b.pool("pool2", x, 2, 2)
    x = b.conv_relu("conv3", x, 32, 3, pad=1)
    return b.classifier(x, hidden=64, rate=0.3)


def vgg16(
    num_classes: int = 1000,
    input_shape: Sequence[int] = (3, 224, 224),
    seed: int = 0,
    weights: bool = False,
) -> NetGraph:
    b = GraphBuilder(input_shape, num_classes, "vgg16", weights, seed)
    x = INPUT_ID
    stages = ((64, 2), (128, 2), (256, 3), (512, 3), (512, 3))
    for s, (width, depth) in enumerate(stages, start=1):
        for d in range(1, depth + 1):
            x = b.conv_relu(f"conv{s}_{d}", x, width, 3, pad=1)
        x = b.pool(f"pool{s}", x, 2, 2)
    x = b.flatten("flatten", x)
    x = b.dense_relu("fc6", x, 4096)
    x = b.dropout("fc6_drop", x, 0.5)
    x = b.dense_relu("fc7", x, 4096)
    x = b.dropout("fc7_drop", x, 0.5)
    x = b.dense("fc8", x, num_classes)
    b.softmax("prob", x)
    return b.build("fc7_relu")


GOOGLENET_MODULES = (
    ("inc3a", 64, 96, 128, 16, 32, 32),
    ("inc3b", 128, 128, 192, 32, 96, 64),
    "pool3",
    ("inc4a", 192, 96, 208, 16, 48, 64),
    ("inc4b", 160, 112, 224, 24, 64, 64),
    ("inc4c", 128, 128, 256, 24, 64, 64),
    ("inc4d", 112, 144, 288, 32, 64, 64),
    ("inc4e", 256, 160, 320, 32, 128, 128),
    "pool4",
    ("inc5a", 256, 160, 320, 32, 128, 128),
    ("inc5b", 384, 192, 384, 48, 128, 128),
)


def googlenet(
    num_classes: int = 8,
    input_shape: Sequence[int] = (3, 224, 224),
    seed: int = 0,
    weights: bool = False,
) -> NetGraph:
    b = GraphBuilder(input_shape, num_classes, "googlenet", weights, seed)
    x = b.conv_relu("conv1", INPUT_ID, 64, 7, stride=2, pad=3)
    x = b.pool("pool1", x, 2, 2)
    x = b.conv_relu("conv2_reduce", x, 64, 1)
    x = b.conv_relu("conv2", x, 192, 3, pad=1)
    x = b.pool("pool2", x, 2, 2)
    for spec in GOOGLENET_MODULES:
        if isinstance(spec, str):
            x = b.pool(spec, x, 2, 2)
        else:
            x = b.inception(spec[0], x, *spec[1:])
    x = b.pool("pool5", x, 7, 7)
    x = b.flatten("flatten", x)
    x = b.dropout("fc_drop", x, 0.4)
    x = b.dense("fc", x, num_classes)
    b.softmax("prob", x)
    return b.build("pool5")


ARCHS: Dict[str, Callable[..., NetGraph]] = {
    "desk_cnn": desk_cnn,
    "desk_inception": desk_inception,
    "vgg16": vgg16,
    "googlenet": googlenet,
}


def build_arch(name: str, **kwargs) -> NetGraph:
    try:
        factory = ARCHS[name]
    except KeyError:
        raise UsageError(f"未知结构 {name}，可选 {sorted(ARCHS)}") from None
    return factory(**kwargs)
