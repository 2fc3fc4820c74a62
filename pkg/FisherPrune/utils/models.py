from enum import Enum
from typing import Optional
from typing_extensions import TypedDict


class LayerKind(str, Enum):
    CONV = "Conv"
    RELU = "ReLU"
    MAXPOOL = "MaxPool"
    DENSE = "Dense"
    DROPOUT = "Dropout"
    FLATTEN = "Flatten"
    CONCAT = "Concat"
    SOFTMAX = "Softmax"


# 不改变通道划分的层：通道 c 进、通道 c 出
CHANNEL_PRESERVING = (
    LayerKind.RELU,
    LayerKind.MAXPOOL,
    LayerKind.DROPOUT,
)


class EpochRecord(TypedDict):
    epoch: int
    loss: float
    val_accuracy: Optional[float]


class LayerLedger(TypedDict):
    layer: str
    kind: str
    params_before: int
    params_after: int
    flops_before: int
    flops_after: int
    channels_before: int
    channels_after: int
    threshold: Optional[float]


class SweepRow(TypedDict):
    method: str
    point: float
    seed: int
    params: int
    flops: int
    params_before: int
    flops_before: int
    acc_base: float
    acc_pre_retrain: float
    acc_post_retrain: float
    acc_test: float
    wall_time: float
    status: bool
    message: str

