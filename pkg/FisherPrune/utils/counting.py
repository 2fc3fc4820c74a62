"""
参数量与 FLOPs 统计

约定：乘法与加法各计 1 FLOP。
  Conv   每个输出元素 h·w·cn 次乘 + h·w·cn 次加（偏置并入加法）→ 2·h·w·cn·fn·H'·W'
  Dense  2·din·dout
  池化 / ReLU / Softmax / 拼接计 0
"""

from typing import Dict, Tuple, Optional, Sequence

from .models import LayerKind


def layer_params(node, sparse: bool = False) -> int:
    n = node.param_count()
    if sparse:
        for mask in node.masks.values():
            n -= int((mask == 0).sum())
    return n


def layer_flops(node, out_shape: Tuple[int, ...]) -> int:
    p = node.params
    if node.kind == LayerKind.CONV:
        return 2 * p["h"] * p["w"] * p["cn"] * p["fn"] * out_shape[1] * out_shape[2]
    if node.kind == LayerKind.DENSE:
        return 2 * p["din"] * p["dout"]
    return 0


def count_params(net, sparse: bool = False) -> int:
    """卷积核 + 偏置 + 全连接权重元素总数；sparse=True 时不计被掩码置零的权重"""
    return sum(layer_params(n, sparse) for n in net.nodes)


def count_flops(net, input_shape: Optional[Sequence[int]] = None) -> int:
    shapes = _shapes_for(net, input_shape)
    return sum(layer_flops(n, shapes[n.id]) for n in net.nodes)


def layer_table(net, sparse: bool = False) -> Dict[str, Dict[str, int]]:
    """每个可剪枝层的 {params, flops, channels}"""
    return {
        n.id: {
            "params": layer_params(n, sparse),
            "flops": layer_flops(n, net.shapes[n.id]),
            "channels": n.units,
        }
        for n in net.nodes
        if n.prunable
    }


def _shapes_for(net, input_shape: Optional[Sequence[int]]):
    if input_shape is None or tuple(input_shape) == net.input_shape:
        return net.shapes
    # 换输入尺寸时重新推一遍形状（节点共享，不复制权重）
    other = type(net)(net.nodes, input_shape, net.num_classes, net.last_hidden, name=net.name)
    return other.shapes
