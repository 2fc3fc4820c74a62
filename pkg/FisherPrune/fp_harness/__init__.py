from .cli import main, fp_cli
from .sweep import SWEEP_CSV, SWEEP_COLUMNS, Cell, run_sweep, plan_cells
from .report import load_rows, aggregate, find_reports, select_models, render_summary, render_layerwise
from ..utils.counting import count_flops, layer_table, count_params

__all__ = [
    "main",
    "fp_cli",
    "SWEEP_CSV",
    "SWEEP_COLUMNS",
    "Cell",
    "run_sweep",
    "plan_cells",
    "load_rows",
    "aggregate",
    "find_reports",
    "select_models",
    "render_summary",
    "render_layerwise",
    "count_flops",
    "layer_table",
    "count_params",
]
