from .kernels import (
    DTYPE,
    ConvWeights,
    PoolSwitches,
    unpool,
    rectify,
    as_tensor,
    dense_forward,
    conv2d_forward,
    maxpool_forward,
    conv2d_transpose,
)

__all__ = [
    "DTYPE",
    "ConvWeights",
    "PoolSwitches",
    "unpool",
    "rectify",
    "as_tensor",
    "dense_forward",
    "conv2d_forward",
    "maxpool_forward",
    "conv2d_transpose",
]
