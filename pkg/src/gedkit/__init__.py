"""Graph edit distance under general edit costs.

Two routes to the same quantity: an exact solver that minimizes the
permutation-assignment objective on small graphs, and a trainable estimator
built from set divergences between graph embeddings under Sinkhorn-generated
alignments. Edit scripts can be extracted from either route and replayed.
"""

from .align import (
    PairAlignment,
    SoftAlignment,
    build_node_cost,
    derive_pair_alignment,
    hungarian_round,
    sinkhorn,
    sinkhorn_matrix,
)
from .divergence import (
    ALIGN_DIFF,
    DIFF_ALIGN,
    MAX,
    MAX_OR,
    XOR_DIFF_ALIGN,
    PairBatch,
    SurrogateChoice,
    alternate_ged_score,
    edge_divergence,
    ged_score,
    graph_level_score,
    node_divergence,
    score_batch,
    substitution_divergence,
)
from .editpath import (
    EditKind,
    EditOp,
    EditPath,
    EditReplayError,
    apply_edit_path,
    extract_edit_path,
    path_cost,
)
from .encoder import (
    CheckpointError,
    GedModel,
    ModelConfig,
    grad_check,
    load_checkpoint,
    save_checkpoint,
)
from .exact import (
    CapabilityError,
    ExactResult,
    HardPermutation,
    MatchingLimits,
    exact_ged,
    matching_limits,
    qap_cost,
    qap_cost_max_form,
    verify_transpose_optimality,
)
from .graphs import (
    CostConfig,
    FormatError,
    Graph,
    PaddedPair,
    SizingError,
    and_gate,
    graph_from_edges,
    or_gate,
    pad_pair,
    pair_count,
    pair_index,
    read_graph_file,
    write_graph_file,
    xor_gate,
)
from .traineval import (
    LabeledPair,
    TrainConfig,
    TrainingError,
    canonical_key,
    dedupe_isomorphic,
    evaluate,
    evaluate_predictions,
    generate_pairs,
    kendall_tau,
    normalized_score,
    predict,
    split_graphs,
    synthetic_corpus,
    train,
    unnormalize_score,
)

__version__ = "0.1.0"
