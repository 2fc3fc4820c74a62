"""
训练：交叉熵 + L2 + Dropout，普通 SGD（无动量）

  - 批损失为样本均值
  - 更新 w ← w − lr · (∇CE + λ·w)，由 torch.optim.SGD 的 weight_decay 实现
  - Dropout 掩码从 cfg.seed 派生的生成器中采样，同 seed 结果逐位一致
  - 带掩码（幅值剪枝）的权重在每步把梯度乘掩码，被剪权重始终为 0
"""

import math
from contextlib import contextmanager
from dataclasses import field, dataclass
from typing import List, Iterator, Optional
from typing_extensions import Self

import torch
import torch.nn.functional as F

from .graph import NetGraph
from ..utils.models import EpochRecord
from ..utils.data import Dataset
from ..utils.config import TrainConfig
from ..utils.errors import DataError, NumericalError
from ..utils.logger import MSG_PREFIX, logger


@contextmanager
def deterministic() -> Iterator[None]:
    """块内开启 torch 确定性算法，退出时恢复进入前的设置"""
    prev = torch.are_deterministic_algorithms_enabled()
    prev_warn = torch.is_deterministic_algorithms_warn_only_enabled()
    torch.use_deterministic_algorithms(True)
    try:
        yield
    finally:
        torch.use_deterministic_algorithms(prev, warn_only=prev_warn)


@dataclass
class TrainResult:
    net: NetGraph
    history: List[EpochRecord] = field(default_factory=list)


class Trainer:
    """
    独占一张网络的训练器

    用法::

        with Trainer(net, cfg) as trainer:
            loss = trainer.step(x, y)

    进入时打开权重的 requires_grad，退出时关闭，
    之后的推理不会再构建计算图。
    """

    def __init__(self, net: NetGraph, cfg: TrainConfig):
        if not net.has_weights:
            raise DataError(f"网络 {net.name} 没有权重，不能训练")
        self.net = net
        self.cfg = cfg
        self.generator = torch.Generator().manual_seed(cfg.seed)
        self._params = net.parameters()
        self._masked = [
            (node.weights[k], m) for node in net.nodes for k, m in node.masks.items()
        ]
        self.optimizer = torch.optim.SGD(
            self._params, lr=cfg.lr, momentum=0.0, weight_decay=cfg.l2
        )

    def __enter__(self) -> Self:
        for p in self._params:
            p.requires_grad_(True)
        return self

    def __exit__(self, *_) -> None:
        for p in self._params:
            p.requires_grad_(False)
            p.grad = None

    def step(self, batch: torch.Tensor, labels: torch.Tensor) -> float:
        """一次 SGD 更新，返回更新前的批平均损失"""
        labels = labels.to(torch.int64)
        if labels.numel() and (
            int(labels.min()) < 0 or int(labels.max()) >= self.net.num_classes
        ):
            raise DataError(f"标签越界，类别数 {self.net.num_classes}")
        logits, _ = self.net.forward(
            batch, train=self.cfg.dropout, generator=self.generator
        )
        loss = F.cross_entropy(logits, labels)
        value = float(loss.detach())
        if not math.isfinite(value):
            raise NumericalError(
                f"损失为 {value}，学习率 {self.cfg.lr} 可能过大"
            )
        self.optimizer.zero_grad(set_to_none=True)
        loss.backward()
        for weight, mask in self._masked:
            if weight.grad is not None:
                weight.grad.mul_(mask)
        self.optimizer.step()
        return value

    def fit(self, data: Dataset, val: Optional[Dataset] = None) -> List[EpochRecord]:
        data.check()
        history: List[EpochRecord] = []
        for epoch in range(1, self.cfg.epochs + 1):
            total, seen = 0.0, 0
            for x, y in data.batches(self.cfg.batch_size, shuffle=True, generator=self.generator):
                total += self.step(x, y) * y.shape[0]
                seen += y.shape[0]
            val_acc = evaluate(self.net, val) if val is not None and len(val) else None
            record: EpochRecord = {
                "epoch": epoch,
                "loss": total / seen,
                "val_accuracy": val_acc,
            }
            history.append(record)
            logger.info(
                f"{MSG_PREFIX} [训练] {self.net.name} epoch={epoch} "
                f"loss={record['loss']:.5f} val_acc={val_acc}"
            )
        return history


def backward_sgd_step(
    net: NetGraph,
    batch: torch.Tensor,
    labels: torch.Tensor,
    cfg: TrainConfig,
    generator: Optional[torch.Generator] = None,
) -> float:
    """单步更新；generator 缺省时按 cfg.seed 新建"""
    with Trainer(net, cfg) as trainer:
        if generator is not None:
            trainer.generator = generator
        return trainer.step(batch, labels)


def train(net: NetGraph, data: Dataset, cfg: TrainConfig, val: Optional[Dataset] = None) -> TrainResult:
    if len(data) == 0:
        raise DataError("训练集为空")
    with deterministic(), Trainer(net, cfg) as trainer:
        history = trainer.fit(data, val)
    return TrainResult(net, history)


def evaluate(net: NetGraph, data: Dataset, batch_size: int = 256) -> float:
    """分类准确率，∈ [0, 1]"""
    data.check()
    correct = 0
    with torch.no_grad():
        for x, y in data.batches(batch_size):
            logits, _ = net.forward(x)
            correct += int((logits.argmax(dim=1) == y).sum())
    return correct / len(data)
