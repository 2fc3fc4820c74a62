from .trace import (
    UtilityMap,
    deconv_step,
    trace_batch,
    dense_as_conv,
    seed_utility,
    trace_utility,
    channel_scores,
    dump_utility_csv,
)

__all__ = [
    "UtilityMap",
    "deconv_step",
    "trace_batch",
    "dense_as_conv",
    "seed_utility",
    "trace_utility",
    "channel_scores",
    "dump_utility_csv",
]
