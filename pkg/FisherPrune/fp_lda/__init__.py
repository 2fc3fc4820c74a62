from .lda import (
    LdaConst,
    LDAScores,
    ScatterPair,
    FiringMatrix,
    scatter,
    lda_scores,
    clean_columns,
    dump_lda_csv,
    eta_threshold,
    offdiag_ratio,
    select_neurons,
    firing_vectors,
    lda_diagnostics,
    build_firing_matrix,
    oracle_topk_overlap,
    generalized_eig_oracle,
)

__all__ = [
    "LdaConst",
    "LDAScores",
    "ScatterPair",
    "FiringMatrix",
    "scatter",
    "lda_scores",
    "clean_columns",
    "dump_lda_csv",
    "eta_threshold",
    "offdiag_ratio",
    "select_neurons",
    "firing_vectors",
    "lda_diagnostics",
    "build_firing_matrix",
    "oracle_topk_overlap",
    "generalized_eig_oracle",
]
