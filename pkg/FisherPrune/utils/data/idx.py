"""
IDX 格式读取（MNIST 风格）

文件头（大端）：
  [0]   0x00
  [1]   0x00
  [2]   数据类型  0x08 ubyte / 0x09 byte / 0x0B int16 / 0x0C int32 / 0x0D float32 / 0x0E float64
  [3]   维数 n
  之后  n 个 32 位大端整数给出各维长度，随后是行优先数据
文件名以 .gz 结尾时自动解压。
"""

import gzip
import struct
from pathlib import Path

import numpy as np
import torch

from .dataset import Dataset
from ..errors import DataError
from ..logger import MSG_PREFIX, logger

IDX_TYPES = {
    0x08: np.dtype(">u1"),
    0x09: np.dtype(">i1"),
    0x0B: np.dtype(">i2"),
    0x0C: np.dtype(">i4"),
    0x0D: np.dtype(">f4"),
    0x0E: np.dtype(">f8"),
}


def read_idx(path: str) -> np.ndarray:
    opener = gzip.open if str(path).endswith(".gz") else open
    try:
        with opener(path, "rb") as f:
            raw = f.read()
    except OSError as e:
        raise DataError(f"无法读取 IDX 文件 {path}: {e}") from e

    if len(raw) < 4 or raw[0] != 0 or raw[1] != 0:
        raise DataError(f"{path} 不是 IDX 文件（魔数错误）")
    type_code, ndim = raw[2], raw[3]
    if type_code not in IDX_TYPES:
        raise DataError(f"{path} 的数据类型 0x{type_code:02X} 不受支持")
    header = 4 + 4 * ndim
    dims = struct.unpack(f">{ndim}I", raw[4:header])
    dtype = IDX_TYPES[type_code]
    expected = int(np.prod(dims)) * dtype.itemsize
    if len(raw) - header != expected:
        raise DataError(
            f"{path} 数据长度 {len(raw) - header} 与维度 {dims} 不符"
        )
    return np.frombuffer(raw, dtype=dtype, offset=header).reshape(dims)


def load_idx(images_path: str, labels_path: str, num_classes: int = 10) -> Dataset:
    """读取图像 / 标签 IDX 文件对，像素缩放到 [0, 1]，补通道维"""
    images = read_idx(images_path)
    labels = read_idx(labels_path)
    if images.ndim != 3:
        raise DataError(f"图像 IDX 应为 3 维 (N, H, W)，实际 {images.shape}")
    if labels.ndim != 1 or labels.shape[0] != images.shape[0]:
        raise DataError(
            f"标签数 {labels.shape} 与图像数 {images.shape[0]} 不符"
        )

    pixels = images.astype(np.float64)
    if images.dtype.kind == "u":
        pixels /= 255.0
    logger.info(
        f"{MSG_PREFIX} [数据] IDX {Path(images_path).name}: {images.shape[0]} 张 "
        f"{images.shape[1]}×{images.shape[2]}"
    )
    ds = Dataset(
        torch.from_numpy(pixels[:, None, :, :].copy()),
        torch.from_numpy(labels.astype(np.int64)),
        num_classes,
    )
    ds.check()
    return ds
