from .mask import (
    PruneMask,
    surviving,
    propagate,
    build_mask,
    apply_mask,
    check_mask,
    cascade_dead,
    channel_users,
    channel_origins,
    layer_threshold,
    keep_by_threshold,
)
from .report import PruneReport, report_path, build_report, module_groups, layer_ledgers
from .fisher import PruneOutcome, FisherAnalysis, analyse, fisher_prune
from .baselines import (
    global_rate,
    magnitude_prune,
    filter_l1_norms,
    filter_norm_mask,
    filter_norm_prune,
    uniform_rates,
    rates_from_layers,
)

__all__ = [
    "PruneMask",
    "surviving",
    "propagate",
    "build_mask",
    "apply_mask",
    "check_mask",
    "cascade_dead",
    "channel_users",
    "channel_origins",
    "layer_threshold",
    "keep_by_threshold",
    "PruneReport",
    "report_path",
    "build_report",
    "module_groups",
    "layer_ledgers",
    "PruneOutcome",
    "FisherAnalysis",
    "analyse",
    "fisher_prune",
    "global_rate",
    "magnitude_prune",
    "filter_l1_norms",
    "filter_norm_mask",
    "filter_norm_prune",
    "uniform_rates",
    "rates_from_layers",
]
