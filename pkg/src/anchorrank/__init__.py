"""Anchor-conditioned node importance ranking for multi-graph knowledge bases."""

__version__ = "0.1.0"

from .baselines import (
    OracleScorer,
    PageRankScorer,
    PersonalizedPageRankScorer,
    pagerank,
    personalized_pagerank,
)
from .datagen import GenConfig, generate, stats
from .features import (
    EmbeddingProvider,
    FileEmbeddingProvider,
    HashEmbeddingProvider,
    default_hash_provider,
    load_file_provider,
    semantic_embed,
    structural_features,
)
from .graphs import (
    AnchorPair,
    Dataset,
    Edge,
    Graph,
    Node,
    load_dataset,
    merge_to_single,
    role_labels,
    save_dataset,
)
from .metrics import EvalReport, evaluate, ndcg_at_k, overlap_at_k, rank_nodes, spearman
from .network import ModelConfig
from .ranker import AnchorRanker, infer

__all__ = [
    "AnchorPair",
    "AnchorRanker",
    "Dataset",
    "Edge",
    "EmbeddingProvider",
    "EvalReport",
    "FileEmbeddingProvider",
    "GenConfig",
    "Graph",
    "HashEmbeddingProvider",
    "ModelConfig",
    "Node",
    "OracleScorer",
    "PageRankScorer",
    "PersonalizedPageRankScorer",
    "default_hash_provider",
    "evaluate",
    "generate",
    "infer",
    "load_dataset",
    "load_file_provider",
    "merge_to_single",
    "ndcg_at_k",
    "overlap_at_k",
    "pagerank",
    "personalized_pagerank",
    "rank_nodes",
    "role_labels",
    "save_dataset",
    "semantic_embed",
    "spearman",
    "stats",
    "structural_features",
]
