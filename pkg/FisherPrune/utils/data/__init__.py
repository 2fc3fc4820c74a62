from pathlib import Path

from .idx import read_idx, load_idx
from .shapes import SHAPE_NAMES, make_shapes
from ..errors import DataError
from .dataset import Dataset, save_dataset, load_dataset_dir


def load_data(spec: str) -> Dataset:
    """
    按路径描述读取数据集

      synthetic:N[:seed]      合成形状数据集
      idx:<图像文件>,<标签文件>  IDX 文件对
      <目录>                  目录格式（manifest.json）
    """
    if spec.startswith("synthetic:"):
        parts = spec.split(":")[1:]
        try:
            n = int(parts[0])
            seed = int(parts[1]) if len(parts) > 1 else 0
        except (ValueError, IndexError) as e:
            raise DataError(f"合成数据描述无效: {spec}") from e
        return make_shapes(n, seed=seed)
    if spec.startswith("idx:"):
        paths = spec[4:].split(",")
        if len(paths) != 2:
            raise DataError(f"IDX 描述应为 idx:<图像>,<标签>，实际 {spec}")
        return load_idx(paths[0], paths[1])
    if not Path(spec).is_dir():
        raise DataError(f"数据集路径不存在: {spec}")
    return load_dataset_dir(spec)


__all__ = [
    "Dataset",
    "DataError",
    "SHAPE_NAMES",
    "read_idx",
    "load_idx",
    "load_data",
    "make_shapes",
    "save_dataset",
    "load_dataset_dir",
]
