"""Context-aware variant-gene-program knowledge graphs, attention-based
GWAS chi-square regression, FDR-weighted recalibration, and the synthetic
worlds used to exercise all of it."""

__version__ = "0.1.0"

from .assoc import (
    GwasStats,
    Locus,
    RecalibrationReport,
    clump_loci,
    loci_recall,
    prediction_weights,
    recalibrate,
    weighted_bh,
)
from .config import (
    AssocParams,
    DcnParams,
    MatrixParams,
    PerturbParams,
    PipelineConfig,
    VariantSpec,
    load_config,
    parse_config,
    render_config,
)
from .dcn import (
    CriticalNetwork,
    consistency_score,
    extract_network,
    merge_seed_networks,
    network_from_records,
    pooled_scores,
)
from .errors import TrainingDiverged, ValidationError
from .gat import (
    GatConfig,
    GatModel,
    TrainTarget,
    forward,
    grad_check,
    init_model,
    ld_aware_loss,
    load_checkpoint,
    predict,
    save_checkpoint,
    train,
)
from .graph import (
    DEFAULT_FEATURE_DIMS,
    GraphStats,
    KnowledgeGraph,
    NodeClass,
    Relation,
    RelationClass,
    add_self_loops,
    build_graph,
    graph_stats,
    induced_subgraph,
    validate,
)
from .perturb import (
    CellMatrix,
    IcaResult,
    PerturbMatrix,
    SimilarityGraph,
    binomial_deviance,
    compute_lfc,
    fast_ica,
    filter_cells,
    program_similarity,
    select_features,
    separation_diagnostic,
    threshold_edges,
    zscore,
)
from .pipeline import (
    align_target,
    assemble_variant,
    context_edge_records,
    reference_loci,
    run_cell,
    run_matrix,
    train_and_predict,
)
from .simulate import (
    SimScenario,
    SimTruth,
    noncentrality,
    simulate_gwas,
    simulate_kg,
    simulate_perturb,
)
from .sparsify import (
    SparsifyPlan,
    apply_plan,
    drop_class,
    parse_plan,
    rewire_random,
)

__all__ = [
    "AssocParams",
    "CellMatrix",
    "CriticalNetwork",
    "DEFAULT_FEATURE_DIMS",
    "DcnParams",
    "GatConfig",
    "GatModel",
    "GraphStats",
    "GwasStats",
    "IcaResult",
    "KnowledgeGraph",
    "Locus",
    "MatrixParams",
    "NodeClass",
    "PerturbMatrix",
    "PerturbParams",
    "PipelineConfig",
    "RecalibrationReport",
    "Relation",
    "RelationClass",
    "SimScenario",
    "SimTruth",
    "SimilarityGraph",
    "SparsifyPlan",
    "TrainTarget",
    "TrainingDiverged",
    "ValidationError",
    "VariantSpec",
    "add_self_loops",
    "align_target",
    "apply_plan",
    "assemble_variant",
    "binomial_deviance",
    "build_graph",
    "clump_loci",
    "compute_lfc",
    "consistency_score",
    "context_edge_records",
    "drop_class",
    "extract_network",
    "fast_ica",
    "filter_cells",
    "forward",
    "grad_check",
    "graph_stats",
    "induced_subgraph",
    "init_model",
    "ld_aware_loss",
    "load_checkpoint",
    "load_config",
    "loci_recall",
    "merge_seed_networks",
    "network_from_records",
    "noncentrality",
    "parse_config",
    "parse_plan",
    "pooled_scores",
    "predict",
    "prediction_weights",
    "program_similarity",
    "recalibrate",
    "reference_loci",
    "render_config",
    "rewire_random",
    "run_cell",
    "run_matrix",
    "save_checkpoint",
    "select_features",
    "separation_diagnostic",
    "simulate_gwas",
    "simulate_kg",
    "simulate_perturb",
    "threshold_edges",
    "train",
    "train_and_predict",
    "validate",
    "weighted_bh",
    "zscore",
]
