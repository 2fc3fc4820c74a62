"""
结构化文档定义（pydantic）

  - ModelDocument    模型描述文件（节点列表 + 权重 sidecar 索引）
  - DatasetManifest  数据集目录的 manifest.json
  - TrainConfig      训练 / 重训练超参数
  - LdaPolicy        末层神经元选择策略
  - TraceConfig      反卷积回溯选项
  - ExperimentConfig 剪枝扫描实验配置

所有文档都是 JSON，与模型文件同一种格式。
"""

from pathlib import Path
from typing import Any, Dict, List, Literal, Optional

from pydantic import Field, BaseModel, field_validator, model_validator

from ..models import LayerKind
from ..errors import UsageError

MODEL_FORMAT_VERSION = 1


# ── 模型文件 ──────────────────────────────────────────────────────────────


class BlobRef(BaseModel):
    offset: int = Field(ge=0, title="在 sidecar 中的元素偏移（以 float64 计）")
    shape: List[int] = Field(title="张量形状")


class NodeDoc(BaseModel):
    id: str = Field(min_length=1, title="层 id")
    kind: LayerKind = Field(title="层类型")
    inputs: List[str] = Field(default_factory=list, title="前驱层 id")
    params: Dict[str, Any] = Field(default_factory=dict, title="层参数")
    blobs: Dict[str, BlobRef] = Field(default_factory=dict, title="权重索引")


class ModelDocument(BaseModel):
    version: int = Field(default=MODEL_FORMAT_VERSION, title="格式版本")
    name: str = Field(default="net", title="模型名")
    input_shape: List[int] = Field(min_length=1, title="单样本输入形状")
    num_classes: int = Field(ge=2, title="类别数")
    last_hidden: str = Field(title="末层隐层（决策层之前）id")
    weights_file: Optional[str] = Field(default=None, title="权重 sidecar 文件名")
    nodes: List[NodeDoc] = Field(min_length=1, title="拓扑序节点列表")

    @field_validator("version")
    @classmethod
    def _check_version(cls, v: int) -> int:
        if v != MODEL_FORMAT_VERSION:
            raise ValueError(f"不支持的模型格式版本 {v}")
        return v

    @field_validator("input_shape")
    @classmethod
    def _check_shape(cls, v: List[int]) -> List[int]:
        if any(d < 1 for d in v):
            raise ValueError("输入形状各维必须为正")
        return v


# ── 数据集 ────────────────────────────────────────────────────────────────


class DatasetManifest(BaseModel):
    count: int = Field(ge=0, title="样本数")
    shape: List[int] = Field(min_length=1, title="单样本形状 C×H×W")
    num_classes: int = Field(ge=2, title="类别数")
    dtype: Literal["<f4", "<f8"] = Field(default="<f4", title="图像数据的小端浮点类型")

    @field_validator("shape")
    @classmethod
    def _check_shape(cls, v: List[int]) -> List[int]:
        if any(d < 1 for d in v):
            raise ValueError("形状各维必须 ≥ 1")
        return v


# ── 训练 ──────────────────────────────────────────────────────────────────


class TrainConfig(BaseModel):
    lr: float = Field(default=0.05, gt=0, title="学习率")
    l2: float = Field(default=5e-4, ge=0, title="L2 系数 λ")
    dropout: bool = Field(default=True, title="训练时启用 Dropout")
    batch_size: int = Field(default=64, ge=1, title="批大小")
    epochs: int = Field(default=5, ge=1, title="训练轮数")
    seed: int = Field(default=0, title="随机种子")


# ── 剪枝 ──────────────────────────────────────────────────────────────────


class LdaPolicy(BaseModel):
    """
    末层神经元选择策略

      topk      按 v_j 降序保留前 k 个
      threshold 保留 v_j ≥ value 的列
      eta       与逐层阈值同一规则：t = η · std(v)
    """

    kind: Literal["topk", "threshold", "eta"] = "eta"
    k: Optional[int] = Field(default=None, ge=1)
    value: Optional[float] = Field(default=None, ge=0)

    @model_validator(mode="after")
    def _check_fields(self) -> "LdaPolicy":
        if self.kind == "topk" and self.k is None:
            raise ValueError("topk 策略需要 k")
        if self.kind == "threshold" and self.value is None:
            raise ValueError("threshold 策略需要 value")
        return self


class TraceConfig(BaseModel):
    seed_weighting: Literal["activation", "activation_lda"] = Field(
        default="activation", title="种子是否再乘以 v_j"
    )
    batch_size: int = Field(default=128, ge=1, title="回溯时的前向批大小")


# ── 实验 ──────────────────────────────────────────────────────────────────

Method = Literal["fisher", "magnitude", "filternorm"]


class ExperimentConfig(BaseModel):
    model: Optional[str] = Field(default=None, title="基准模型路径（缺省则按 arch 训练）")
    arch: str = Field(default="desk_cnn", title="无模型时新建的结构")
    train_data: str = Field(title="训练集路径（目录 / IDX 前缀 / synthetic:N）")
    val_data: str = Field(title="验证集路径")
    test_data: Optional[str] = Field(default=None, title="测试集路径")
    train: TrainConfig = Field(default_factory=TrainConfig)
    retrain_epochs: int = Field(default=2, ge=0, title="剪枝后重训练轮数")
    retrain_lr: float = Field(default=0.01, gt=0, title="重训练学习率")
    etas: List[float] = Field(default_factory=list, title="η 列表")
    methods: List[Method] = Field(default_factory=lambda: ["fisher"])
    seeds: List[int] = Field(default_factory=lambda: [0])
    lda_policy: LdaPolicy = Field(default_factory=LdaPolicy)
    trace: TraceConfig = Field(default_factory=TraceConfig)
    lda_samples: Optional[int] = Field(default=None, ge=2, title="构造发放矩阵的样本上限")
    output_dir: str = Field(default="runs", title="输出目录")
    jobs: int = Field(default=1, ge=1, title="并行单元数")

    @field_validator("etas")
    @classmethod
    def _check_etas(cls, v: List[float]) -> List[float]:
        if any(e < 0 for e in v):
            raise ValueError("η 必须非负")
        return v

    @model_validator(mode="after")
    def _check_lists(self) -> "ExperimentConfig":
        if not self.methods:
            raise ValueError("至少需要一种剪枝方法")
        if not self.seeds:
            raise ValueError("至少需要一个随机种子")
        return self

    @classmethod
    def load(cls, path: str) -> "ExperimentConfig":
        try:
            return cls.model_validate_json(Path(path).read_text("utf-8"))
        except FileNotFoundError as e:
            raise UsageError(f"配置文件不存在: {path}") from e
        except ValueError as e:
            raise UsageError(f"配置文件无效: {e}") from e

    def dump(self, path: str) -> None:
        Path(path).write_text(self.model_dump_json(indent=2), "utf-8")
