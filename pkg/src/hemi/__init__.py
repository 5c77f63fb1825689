"""Self-supervised multi-view embeddings for heterogeneous graphs.

Compose meta-path views of a typed graph, encode each with a graph
convolution, fuse them with learned attention, and train by discriminating
genuine (view, fused) pairs from corrupted ones.  Evaluation covers node
classification, clustering, and link prediction over the frozen embeddings.
"""

from .datasets import Dataset, SyntheticSpec, load_dataset, make_synthetic, write_synthetic
from .errors import ConfigError, DataError, HemiError, MetaPathError, NumericError, ShapeError
from .evaluation import (
    EdgeMask,
    LinkResult,
    MetricRow,
    SplitSpec,
    cluster_eval,
    link_eval,
    mask_edges,
    probe_classify,
)
from .graph import (
    HeteroGraph,
    MetaPathGraph,
    MetaPathSpec,
    Relation,
    compose_metapath,
    metapath_neighbors,
    validate_metapath,
)
from .model import (
    EmbeddingSet,
    HemiConfig,
    ModelParams,
    corrupt,
    disc_coarse,
    disc_fine,
    encode_metapath,
    forward_embeddings,
    fuse,
    gcn_normalize,
    hemi_loss,
    load_checkpoint,
    save_checkpoint,
    summary,
)
from .tensor import AdamState, SparseMatrix, Tensor, adam_step, glorot_init
from .train import TrainReport, train_augmented_lp, train_augmented_nc, train_selfsup

__version__ = "0.1.0"

__all__ = [
    "AdamState",
    "ConfigError",
    "DataError",
    "Dataset",
    "EdgeMask",
    "EmbeddingSet",
    "HemiConfig",
    "HemiError",
    "HeteroGraph",
    "LinkResult",
    "MetaPathError",
    "MetaPathGraph",
    "MetaPathSpec",
    "MetricRow",
    "ModelParams",
    "NumericError",
    "Relation",
    "ShapeError",
    "SparseMatrix",
    "SplitSpec",
    "Tensor",
    "TrainReport",
    "adam_step",
    "cluster_eval",
    "compose_metapath",
    "corrupt",
    "disc_coarse",
    "disc_fine",
    "encode_metapath",
    "forward_embeddings",
    "fuse",
    "gcn_normalize",
    "glorot_init",
    "hemi_loss",
    "link_eval",
    "load_checkpoint",
    "load_dataset",
    "make_synthetic",
    "mask_edges",
    "metapath_neighbors",
    "probe_classify",
    "save_checkpoint",
    "summary",
    "train_augmented_lp",
    "train_augmented_nc",
    "train_selfsup",
    "validate_metapath",
    "write_synthetic",
]
