"""Entity alignment across knowledge graphs via optimal-transport pseudo-labeling."""

from ._kernels import active_backend
from .encoder import (
    EmbeddingTable,
    EncoderParams,
    EncoderTrainer,
    TrainConfig,
    embedding_distance,
    encode,
    init_params,
    margin_loss,
    sample_negatives,
)
from .kg import (
    AlignmentConflictError,
    AlignmentSet,
    DatasetError,
    FeatureMatrix,
    KgPair,
    KnowledgeGraph,
    augment_seeds,
    build_adjacency,
    ingest_dataset,
)
from .metrics import ErrorDecomposition, decompose_errors, hit_at_k, mrr, precision_recall_f1
from .neighborhood import (
    CostMatrix,
    NeighborhoodContext,
    build_tuple_index,
    match_score,
    rectified_cost,
    relation_correspondence,
)
from .pipeline import (
    PipelineConfig,
    PipelineResult,
    RunReport,
    ensemble,
    final_inference,
    run_naive_baseline,
    run_pipeline,
)
from .synthetic import SynthConfig, generate_pair, write_dataset
from .transport import (
    CouplingMatrix,
    SinkhornConfig,
    pseudo_label,
    select_alignments,
    selection_threshold,
    sinkhorn,
)

__version__ = "0.1.0"
