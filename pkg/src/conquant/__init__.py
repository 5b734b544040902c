"""conquant: product quantization with balanced code assignment.

Compresses dense embeddings to a few bytes each, keeps retrieval quality
through joint training of encoders and codebooks, and serves approximate
inner-product search over the compressed corpus.

The pieces, in pipeline order: `train_opq` warms up a rotation and
codebook; `assign_constrained` solves the balanced code-assignment
transport problem; `init_state`/`train_loop` run the two joint-training
stages; `build_ivf`/`search` serve compressed retrieval; `write_index`/
`read_index` persist it; `mrr_at_k`/`recall_at_k`/`code_balance` measure
it. The `conquant` command line drives the same pipeline from files.
"""

from .errors import (
    ConfigurationError,
    ConquantError,
    ConsistencyError,
    CorruptIndexError,
    DataError,
    DimensionError,
    DivergenceError,
    NumericalUnderflowError,
)
from .evaluation import (
    AblationTable,
    CodeBalance,
    MetricReport,
    code_balance,
    evaluate_rankings,
    mrr_at_k,
    recall_at_k,
    run_ablation,
)
from .index_io import (
    read_embeddings,
    read_index,
    read_qrels,
    read_queries,
    write_embeddings,
    write_index,
    write_qrels,
    write_queries,
)
from .ivf import IvfIndex, build_ivf, exhaustive_search, search
from .opq import Rotation, distortion, kmeans, train_opq
from .pq import (
    Codebook,
    adc_score,
    adc_scores,
    adc_table,
    compression_ratio,
    quantize_batch,
    reconstruct_batch,
)
from .synthetic import SyntheticBenchmark, SyntheticSpec, generate
from .training import (
    EmbeddingTableEncoder,
    LinearFeatureEncoder,
    TrainConfig,
    TrainerState,
    backward,
    default_mse_weight,
    encode_corpus,
    init_state,
    mine_negatives,
    mse_loss,
    ranking_loss,
    total_loss,
    train_loop,
    train_step,
)
from .transport import (
    TransportPlan,
    assign_constrained,
    default_epsilon,
    default_tol,
    exact_assign,
    sinkhorn,
)

__all__ = [
    "AblationTable",
    "CodeBalance",
    "Codebook",
    "ConfigurationError",
    "ConquantError",
    "ConsistencyError",
    "CorruptIndexError",
    "DataError",
    "DimensionError",
    "DivergenceError",
    "EmbeddingTableEncoder",
    "IvfIndex",
    "LinearFeatureEncoder",
    "MetricReport",
    "NumericalUnderflowError",
    "Rotation",
    "SyntheticBenchmark",
    "SyntheticSpec",
    "TrainConfig",
    "TrainerState",
    "TransportPlan",
    "adc_score",
    "adc_scores",
    "adc_table",
    "assign_constrained",
    "backward",
    "build_ivf",
    "code_balance",
    "compression_ratio",
    "default_epsilon",
    "default_mse_weight",
    "default_tol",
    "distortion",
    "encode_corpus",
    "evaluate_rankings",
    "exact_assign",
    "exhaustive_search",
    "generate",
    "init_state",
    "kmeans",
    "mine_negatives",
    "mrr_at_k",
    "mse_loss",
    "quantize_batch",
    "ranking_loss",
    "read_embeddings",
    "read_index",
    "read_qrels",
    "read_queries",
    "recall_at_k",
    "reconstruct_batch",
    "run_ablation",
    "search",
    "sinkhorn",
    "total_loss",
    "train_loop",
    "train_opq",
    "train_step",
    "write_embeddings",
    "write_index",
    "write_qrels",
    "write_queries",
]

__version__ = "0.1.0"
