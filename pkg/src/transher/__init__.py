"""TranSHER knowledge-graph embeddings with PairRE and TransE baselines."""
from .data import KnowledgeGraph, Triple, categorize_relations, load_candidates, load_dataset
from .init import InitStrategy, initialize, init_search
from .model import ModelParameters, map_head, map_tail, score, score_batch
from .training import TrainConfig, train
from .evaluation import evaluate, rank_full, rank_partial, top_k

__version__ = "0.1.0"

__all__ = [
    "KnowledgeGraph", "Triple", "categorize_relations", "load_candidates", "load_dataset",
    "InitStrategy", "initialize", "init_search", "ModelParameters", "map_head", "map_tail",
    "score", "score_batch", "TrainConfig", "train", "evaluate", "rank_full", "rank_partial",
    "top_k",
]
