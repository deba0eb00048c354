"""Just-in-time defect prediction with bi-modal commit representation learning."""

from .corpus import CodeCommit, DatasetSplit, load_commits, save_commits, split_dataset
from .features import (
    ExpertFeatureVector,
    Standardizer,
    compute_entropy,
    detect_fix,
    mine_repository,
)
from .metrics import EvalReport, auc_score, evaluate_model, f1_score
from .tokenization import TokenSequence, Vocabulary, apply_mlm_mask, build_vocabulary, \
    serialize_commit

__all__ = [
    "CodeCommit", "DatasetSplit", "load_commits", "save_commits", "split_dataset",
    "ExpertFeatureVector", "Standardizer", "compute_entropy", "detect_fix",
    "mine_repository",
    "EvalReport", "auc_score", "evaluate_model", "f1_score",
    "TokenSequence", "Vocabulary", "apply_mlm_mask", "build_vocabulary",
    "serialize_commit",
]

__version__ = "0.1.0"
