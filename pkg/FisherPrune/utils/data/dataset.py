"""
数据集容器与目录格式读写

目录格式：
  manifest.json   {"count": N, "shape": [C, H, W], "num_classes": K, "dtype": "<f4"}
  images.bin      小端浮点图像数据，行优先，N × C × H × W
  labels.bin      每个样本一个字节的标签
"""

from pathlib import Path
from dataclasses import dataclass
from typing import List, Tuple, Iterator, Optional

import numpy as np
import torch
from pydantic import ValidationError

from ..errors import DataError
from ..logger import MSG_PREFIX, logger
from ..config import DatasetManifest

MANIFEST = "manifest.json"
IMAGES_BLOB = "images.bin"
LABELS_BLOB = "labels.bin"


@dataclass
class Dataset:
    images: torch.Tensor
    labels: torch.Tensor
    num_classes: int

    def __post_init__(self):
        self.images = self.images.to(torch.float64)
        self.labels = self.labels.to(torch.int64)
        if self.images.shape[0] != self.labels.shape[0]:
            raise DataError(
                f"图像数 {self.images.shape[0]} 与标签数 {self.labels.shape[0]} 不符"
            )

    def __len__(self) -> int:
        return int(self.labels.shape[0])

    @property
    def sample_shape(self) -> Tuple[int, ...]:
        return tuple(self.images.shape[1:])

    def check(self) -> None:
        """非空且标签落在 [0, num_classes)"""
        if len(self) == 0:
            raise DataError("数据集为空")
        lo, hi = int(self.labels.min()), int(self.labels.max())
        if lo < 0 or hi >= self.num_classes:
            raise DataError(
                f"标签越界 [{lo}, {hi}]，类别数 {self.num_classes}"
            )

    def subset(self, index) -> "Dataset":
        return Dataset(self.images[index], self.labels[index], self.num_classes)

    def head(self, n: Optional[int]) -> "Dataset":
        """按类别轮流取前 n 个样本，保证每类都有"""
        if n is None or n >= len(self):
            return self
        order: List[int] = []
        per_class = [
            torch.nonzero(self.labels == c).flatten().tolist()
            for c in range(self.num_classes)
        ]
        i = 0
        while len(order) < n:
            took = False
            for rows in per_class:
                if i < len(rows) and len(order) < n:
                    order.append(rows[i])
                    took = True
            if not took:
                break
            i += 1
        return self.subset(torch.tensor(sorted(order)))

    def batches(
        self,
        batch_size: int,
        shuffle: bool = False,
        generator: Optional[torch.Generator] = None,
    ) -> Iterator[Tuple[torch.Tensor, torch.Tensor]]:
        if shuffle:
            order = torch.randperm(len(self), generator=generator)
        else:
            order = torch.arange(len(self))
        for start in range(0, len(self), batch_size):
            idx = order[start : start + batch_size]
            yield self.images[idx], self.labels[idx]


# ── 目录格式 ──────────────────────────────────────────────────────────────


def save_dataset(ds: Dataset, path: str, dtype: str = "<f4") -> None:
    try:
        manifest = DatasetManifest(
            count=len(ds),
            shape=list(ds.sample_shape),
            num_classes=ds.num_classes,
            dtype=dtype,
        )
    except ValidationError as e:
        raise DataError(f"数据集清单无效: {e}") from e
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    (root / MANIFEST).write_text(manifest.model_dump_json(indent=2), "utf-8")
    (root / IMAGES_BLOB).write_bytes(ds.images.numpy().astype(dtype).tobytes())
    (root / LABELS_BLOB).write_bytes(ds.labels.numpy().astype(np.uint8).tobytes())


def load_dataset_dir(path: str) -> Dataset:
    root = Path(path)
    try:
        manifest = DatasetManifest.model_validate_json((root / MANIFEST).read_text("utf-8"))
    except FileNotFoundError as e:
        raise DataError(f"数据集缺少 {MANIFEST}: {path}") from e
    except ValidationError as e:
        raise DataError(f"数据集清单无效: {e}") from e
    count, shape, num_classes, dtype = (
        manifest.count,
        manifest.shape,
        manifest.num_classes,
        manifest.dtype,
    )

    per_sample = int(np.prod(shape))
    raw = (root / IMAGES_BLOB).read_bytes()
    if len(raw) != count * per_sample * np.dtype(dtype).itemsize:
        raise DataError(f"{IMAGES_BLOB} 大小与清单不符")
    images = np.frombuffer(raw, dtype=dtype).reshape(count, *shape)
    labels = np.frombuffer((root / LABELS_BLOB).read_bytes(), dtype=np.uint8)
    if labels.shape[0] != count:
        raise DataError(f"{LABELS_BLOB} 长度 {labels.shape[0]} 与清单 {count} 不符")

    logger.info(f"{MSG_PREFIX} [数据] 读取 {path}: {count} 个样本, 形状 {shape}")
    ds = Dataset(
        torch.from_numpy(images.astype(np.float64)),
        torch.from_numpy(labels.astype(np.int64)),
        num_classes,
    )
    ds.check()
    return ds
