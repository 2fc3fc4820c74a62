"""
合成形状数据集（MNIST 同尺寸 1×28×28）

六类：横条、竖条、方框、实心圆、十字、对角线。
位置、大小、亮度随机，叠加高斯噪声；同一 seed 生成结果完全一致。
"""

from typing import Callable, Dict

import numpy as np
import torch

from .dataset import Dataset

SIZE = 28
SHAPE_NAMES = ("hbar", "vbar", "box", "disk", "cross", "diagonal")


def _hbar(img, rng, cy, cx, r):
    img[cy - 1 : cy + 2, cx - r : cx + r + 1] = 1.0


def _vbar(img, rng, cy, cx, r):
    img[cy - r : cy + r + 1, cx - 1 : cx + 2] = 1.0


def _box(img, rng, cy, cx, r):
    img[cy - r : cy + r + 1, [cx - r, cx + r]] = 1.0
    img[[cy - r, cy + r], cx - r : cx + r + 1] = 1.0


def _disk(img, rng, cy, cx, r):
    yy, xx = np.ogrid[:SIZE, :SIZE]
    img[(yy - cy) ** 2 + (xx - cx) ** 2 <= r * r] = 1.0


def _cross(img, rng, cy, cx, r):
    _hbar(img, rng, cy, cx, r)
    _vbar(img, rng, cy, cx, r)


def _diagonal(img, rng, cy, cx, r):
    for d in range(-r, r + 1):
        img[cy + d, cx + d] = 1.0
        if cx + d + 1 < SIZE:
            img[cy + d, cx + d + 1] = 1.0


DRAWERS: Dict[str, Callable] = {
    "hbar": _hbar,
    "vbar": _vbar,
    "box": _box,
    "disk": _disk,
    "cross": _cross,
    "diagonal": _diagonal,
}


def make_shapes(
    n: int,
    seed: int = 0,
    num_classes: int = len(SHAPE_NAMES),
    noise: float = 0.1,
) -> Dataset:
    """生成 n 个样本，标签按 0..num_classes-1 轮转，保证类别均衡"""
    rng = np.random.default_rng(seed)
    names = SHAPE_NAMES[:num_classes]
    images = np.zeros((n, 1, SIZE, SIZE), dtype=np.float64)
    labels = np.arange(n, dtype=np.int64) % num_classes
    rng.shuffle(labels)
    for i, label in enumerate(labels):
        r = int(rng.integers(4, 9))
        cy = int(rng.integers(r + 1, SIZE - r - 1))
        cx = int(rng.integers(r + 1, SIZE - r - 2))
        img = images[i, 0]
        DRAWERS[names[label]](img, rng, cy, cx, r)
        img *= rng.uniform(0.6, 1.0)
        img += rng.normal(0.0, noise, size=img.shape)
        np.clip(img, 0.0, 1.0, out=img)
    return Dataset(torch.from_numpy(images), torch.from_numpy(labels), num_classes)
