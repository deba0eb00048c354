"""Precision/recall/F1, rank-based AUC, and evaluation reports."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np
from scipy.stats import rankdata

from .errors import EvaluationError


def f1_score(tp: int, fp: int, fn: int) -> tuple[float, float, float]:
    """(precision, recall, F1) with the 0-convention on empty denominators."""
    if min(tp, fp, fn) < 0:
        raise EvaluationError("confusion counts must be nonnegative")
    precision = tp / (tp + fp) if tp + fp > 0 else 0.0
    recall = tp / (tp + fn) if tp + fn > 0 else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
    return precision, recall, f1


def auc_score(scores, labels) -> float:
    """ROC area via the Mann-Whitney statistic with 0.5 credit for ties."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.shape != labels.shape or scores.ndim != 1:
        raise EvaluationError("scores and labels must be 1-d sequences of equal length")
    n_pos = int((labels == 1).sum())
    n_neg = int((labels == 0).sum())
    if n_pos == 0 or n_neg == 0:
        raise EvaluationError("AUC undefined: both classes must be present")
    ranks = rankdata(scores)
    pos_rank_sum = float(ranks[labels == 1].sum())
    return (pos_rank_sum - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg)


@dataclass(frozen=True)
class EvalReport:
    precision: float
    recall: float
    f1: float
    auc: float
    threshold: float
    tp: int
    fp: int
    tn: int
    fn: int
    dataset_id: str
    model_id: str

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "EvalReport":
        return cls(**json.loads(text))


def report_from_scores(scores, labels, threshold: float,
                       dataset_id: str = "", model_id: str = "") -> EvalReport:
    scores = list(scores)
    labels = list(labels)
    if not scores:
        raise EvaluationError("cannot evaluate an empty dataset")
    tp = sum(1 for s, y in zip(scores, labels) if s >= threshold and y == 1)
    fp = sum(1 for s, y in zip(scores, labels) if s >= threshold and y == 0)
    tn = sum(1 for s, y in zip(scores, labels) if s < threshold and y == 0)
    fn = sum(1 for s, y in zip(scores, labels) if s < threshold and y == 1)
    precision, recall, f1 = f1_score(tp, fp, fn)
    auc = auc_score(scores, labels)
    return EvalReport(precision=precision, recall=recall, f1=f1, auc=auc,
                      threshold=threshold, tp=tp, fp=fp, tn=tn, fn=fn,
                      dataset_id=dataset_id, model_id=model_id)


def evaluate_model(bundle, commits, features_map, threshold: float = 0.5,
                   dataset_id: str = "", model_id: str = "") -> EvalReport:
    """Score every commit with the bundle and assemble the report."""
    from .predict import score_commits  # local import to avoid a cycle

    commits = list(commits)
    if not commits:
        raise EvaluationError("cannot evaluate an empty dataset")
    results = score_commits(bundle, commits, features_map)
    scores = [r.p_defective for r in results]
    labels = [c.label for c in commits]
    return report_from_scores(scores, labels, threshold, dataset_id, model_id)
