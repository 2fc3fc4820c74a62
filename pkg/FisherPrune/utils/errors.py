"""
统一异常定义

所有对外抛出的错误都继承 FisherPruneError，
携带出错的层 id（node）与维度名（dim），命令行据 exit_code 退出。

退出码：
  0  成功
  2  用法错误（参数 / 配置）
  3  数据错误（数据集、模型文件）
  4  数值错误（非有限损失、特征值求解失败、剪枝掩码不一致）
"""

from typing import Optional


class FisherPruneError(Exception):
    exit_code: int = 1

    def __init__(
        self,
        message: str,
        node: Optional[str] = None,
        dim: Optional[str] = None,
    ):
        self.message = message
        self.node = node
        self.dim = dim
        super().__init__(self.__str__())

    def __str__(self) -> str:
        where = []
        if self.node is not None:
            where.append(f"node={self.node}")
        if self.dim is not None:
            where.append(f"dim={self.dim}")
        suffix = f" ({', '.join(where)})" if where else ""
        return f"{self.message}{suffix}"

    def to_result(self) -> dict:
        """转换为与 parse_response 一致的结果字典"""
        return {"status": False, "message": str(self), "data": {}}


class UsageError(FisherPruneError):
    exit_code = 2


class DataError(FisherPruneError):
    exit_code = 3


class ModelFormatError(DataError):
    pass


class NumericalError(FisherPruneError):
    exit_code = 4


class ShapeError(NumericalError):
    pass


class PruneError(NumericalError):
    pass
