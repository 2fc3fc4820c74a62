"""
张量核心算子

所有网络 / 回溯模块共用的数值核：
  - conv2d_forward / conv2d_transpose   卷积与其线性伴随（不含偏置）
  - maxpool_forward / unpool            最大池化（记录开关）与反池化
  - rectify                             逐元素 max(0, ·)
  - dense_forward                       仿射映射

约定：
  - 互相关（不翻转卷积核），正向与转置统一使用
  - 全程 float64
  - 输入既可以是单样本 (C, H, W)，也可以是批量 (N, C, H, W)，
    输出保持同样的维数
"""

from typing import Tuple, Optional, Sequence
from dataclasses import dataclass

import torch
import torch.nn.functional as F

from ..utils.errors import ShapeError

DTYPE = torch.float64


def as_tensor(x) -> torch.Tensor:
    """转成 float64 张量（已是 float64 时不复制）"""
    if isinstance(x, torch.Tensor):
        return x if x.dtype == DTYPE else x.to(DTYPE)
    return torch.as_tensor(x, dtype=DTYPE)


def _batched(x: torch.Tensor, ndim: int) -> Tuple[torch.Tensor, bool]:
    """单样本输入补出批量维，返回 (张量, 是否补过)"""
    if x.dim() == ndim - 1:
        return x.unsqueeze(0), True
    if x.dim() != ndim:
        raise ShapeError(
            f"期望 {ndim - 1} 维或 {ndim} 维输入，实际为 {tuple(x.shape)}",
            dim="rank",
        )
    return x, False


def _out_extent(size: int, k: int, stride: int, pad: int, dim: str) -> int:
    span = size + 2 * pad - k
    if span < 0:
        raise ShapeError(
            f"卷积核 {k} 大于补零后的输入 {size + 2 * pad}", dim=dim
        )
    return span // stride + 1


@dataclass
class ConvWeights:
    """卷积参数：kernel 形状 fn × cn × h × w，bias 长度 fn"""

    kernel: torch.Tensor
    bias: torch.Tensor
    stride: int = 1
    pad: int = 0

    def __post_init__(self):
        if self.kernel.dim() != 4:
            raise ShapeError(
                f"卷积核必须是 4 维，实际 {tuple(self.kernel.shape)}",
                dim="kernel",
            )
        if min(self.kernel.shape) < 1:
            raise ShapeError("卷积核各维必须 ≥ 1", dim="kernel")
        if self.bias.shape != (self.fn,):
            raise ShapeError(
                f"偏置长度 {tuple(self.bias.shape)} 与滤波器数 {self.fn} 不符",
                dim="fn",
            )
        if self.stride < 1:
            raise ShapeError("步长必须为正整数", dim="stride")
        if self.pad < 0:
            raise ShapeError("补零不能为负", dim="pad")

    @property
    def fn(self) -> int:
        return self.kernel.shape[0]

    @property
    def cn(self) -> int:
        return self.kernel.shape[1]

    @property
    def h(self) -> int:
        return self.kernel.shape[2]

    @property
    def w(self) -> int:
        return self.kernel.shape[3]

    def out_hw(self, in_h: int, in_w: int) -> Tuple[int, int]:
        """给定输入空间尺寸，计算输出空间尺寸（向下取整）"""
        return (
            _out_extent(in_h, self.h, self.stride, self.pad, "H"),
            _out_extent(in_w, self.w, self.stride, self.pad, "W"),
        )


@dataclass
class PoolSwitches:
    """
    最大池化开关

    indices 与池化输出同形状，每个值是该窗口胜出位置
    在输入平面 (H × W) 内的行优先线性下标。
    """

    indices: torch.Tensor
    in_hw: Tuple[int, int]
    k: int
    stride: int


# ── 卷积 ──────────────────────────────────────────────────────────────────


def conv2d_forward(x: torch.Tensor, w: ConvWeights) -> torch.Tensor:
    """
    二维卷积（互相关），逐输出通道加偏置

    输出尺寸 H' = (H + 2·pad − h) // stride + 1，W' 同理。
    """
    x = as_tensor(x)
    xb, squeezed = _batched(x, 4)
    if xb.shape[1] != w.cn:
        raise ShapeError(
            f"输入通道数 {xb.shape[1]} 与卷积核通道数 {w.cn} 不符", dim="cn"
        )
    w.out_hw(xb.shape[2], xb.shape[3])
    y = F.conv2d(xb, w.kernel, w.bias, stride=w.stride, padding=w.pad)
    return y.squeeze(0) if squeezed else y


def conv2d_transpose(
    y: torch.Tensor,
    w: ConvWeights,
    in_hw: Optional[Sequence[int]] = None,
) -> torch.Tensor:
    """
    conv2d_forward 线性部分（不含偏置）的精确伴随

    对任意 x, y：⟨conv(x) − bias, y⟩ = ⟨x, conv2d_transpose(y)⟩。
    步长不能整除时正向会丢掉边缘，in_hw 给出原输入尺寸以还原。
    """
    y = as_tensor(y)
    yb, squeezed = _batched(y, 4)
    if yb.shape[1] != w.fn:
        raise ShapeError(
            f"上层通道数 {yb.shape[1]} 与滤波器数 {w.fn} 不符", dim="fn"
        )
    oh, ow = yb.shape[2], yb.shape[3]
    base_h = (oh - 1) * w.stride - 2 * w.pad + w.h
    base_w = (ow - 1) * w.stride - 2 * w.pad + w.w
    if in_hw is None:
        in_hw = (base_h, base_w)
    extra = (in_hw[0] - base_h, in_hw[1] - base_w)
    checks = (
        ("H", extra[0], base_h, in_hw[0]),
        ("W", extra[1], base_w, in_hw[1]),
    )
    for name, e, base, size in checks:
        if base <= 0 or not 0 <= e < w.stride:
            raise ShapeError(
                f"上层尺寸无法由输入尺寸 {size} 正向得到", dim=name
            )
    x = F.conv_transpose2d(
        yb,
        w.kernel,
        None,
        stride=w.stride,
        padding=w.pad,
        output_padding=extra,
    )
    return x.squeeze(0) if squeezed else x


# ── 池化 ──────────────────────────────────────────────────────────────────


def maxpool_forward(
    x: torch.Tensor, k: int, stride: int
) -> Tuple[torch.Tensor, PoolSwitches]:
    """
    最大池化，返回池化值与开关

    窗口必须恰好铺满空间维（不补零）；
    并列最大值取窗口内线性下标最小者。
    """
    x = as_tensor(x)
    xb, squeezed = _batched(x, 4)
    h, w = xb.shape[2], xb.shape[3]
    for name, size in (("H", h), ("W", w)):
        if k < 1 or stride < 1 or size < k or (size - k) % stride:
            raise ShapeError(
                f"池化窗口 {k} / 步长 {stride} 不能铺满尺寸 {size}", dim=name
            )
    values, indices = F.max_pool2d(
        xb, kernel_size=k, stride=stride, return_indices=True
    )
    if squeezed:
        values, indices = values.squeeze(0), indices.squeeze(0)
    return values, PoolSwitches(indices, (h, w), k, stride)


def unpool(
    y: torch.Tensor,
    s: PoolSwitches,
    in_shape: Optional[Sequence[int]] = None,
) -> torch.Tensor:
    """
    反池化：把 y 的值放回开关记录的位置，其余位置为 0

    窗口重叠时同一位置被多次选中，值累加（池化的伴随）。
    """
    y = as_tensor(y)
    if tuple(y.shape) != tuple(s.indices.shape):
        raise ShapeError(
            f"反池化输入 {tuple(y.shape)} 与开关 {tuple(s.indices.shape)} 形状不符",
            dim="switch",
        )
    h, w = s.in_hw
    if in_shape is not None and tuple(in_shape[-2:]) != (h, w):
        raise ShapeError(
            f"目标尺寸 {tuple(in_shape)} 与开关记录的 {(h, w)} 不符", dim="switch"
        )
    if s.indices.numel() and (
        int(s.indices.min()) < 0 or int(s.indices.max()) >= h * w
    ):
        raise ShapeError("开关下标越界", dim="switch")
    lead = y.shape[:-2]
    flat_y = y.reshape(*lead, -1)
    flat_idx = s.indices.reshape(*lead, -1)
    out = torch.zeros(*lead, h * w, dtype=DTYPE)
    out.scatter_add_(-1, flat_idx, flat_y)
    return out.reshape(*lead, h, w)


# ── 逐元素 / 全连接 ──────────────────────────────────────────────────────


def rectify(x: torch.Tensor) -> torch.Tensor:
    return F.relu(as_tensor(x))


def dense_forward(
    x: torch.Tensor, W: torch.Tensor, b: torch.Tensor
) -> torch.Tensor:
    """仿射映射 W·x + b；x 可以是 (din,) 或 (N, din)"""
    x = as_tensor(x)
    if W.dim() != 2:
        raise ShapeError(f"权重必须是 2 维，实际 {tuple(W.shape)}", dim="W")
    if x.shape[-1] != W.shape[1]:
        raise ShapeError(
            f"输入维度 {x.shape[-1]} 与权重列数 {W.shape[1]} 不符", dim="din"
        )
    if b.shape != (W.shape[0],):
        raise ShapeError(
            f"偏置长度 {tuple(b.shape)} 与输出维度 {W.shape[0]} 不符", dim="dout"
        )
    return F.linear(x, W, b)
