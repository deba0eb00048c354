"""Feature fusion, defect classifier head, fine-tuning, and scoring.

The fused vector is concat(change representation, dense(expert features)),
dimension 2H; the classifier is an MLP 2H -> H -> 2 with softmax. Class
index 1 is "defect-inducing" to line up with corpus labels.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from random import Random

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .corpus import CodeCommit
from .encoder import EncoderConfig, TransformerEncoder, batch_tensors, build_encoder, \
    change_representation, load_encoder, save_encoder
from .errors import ModelError, TrainingError
from .features import ExpertFeatureVector, Standardizer
from .metrics import f1_score
from .pretrain import PROB_CLAMP, load_pretrained, warmup_lr
from .tokenization import Vocabulary, serialize_commit

NUM_EXPERT_FEATURES = 14


@dataclass(frozen=True)
class PredictionResult:
    p_defective: float
    p_clean: float
    predicted_label: int


class FusionClassifier(nn.Module):
    """Encoder + expert expansion + MLP defect head.

    use_semantic / use_expert structurally disable a branch: the disabled
    branch's half of the fused vector is zero and its inputs are never read.
    """

    def __init__(self, encoder: TransformerEncoder,
                 use_semantic: bool = True, use_expert: bool = True):
        super().__init__()
        if not use_semantic and not use_expert:
            raise ModelError("at least one of the semantic/expert branches must be enabled")
        h = encoder.cfg.hidden_dim
        self.encoder = encoder
        self.expansion = nn.Linear(NUM_EXPERT_FEATURES, h)
        self.mlp = nn.Sequential(nn.Linear(2 * h, h), nn.ReLU(), nn.Linear(h, 2))
        self.use_semantic = use_semantic
        self.use_expert = use_expert

    def forward(self, ids: torch.Tensor, mask: torch.Tensor,
                expert: torch.Tensor) -> torch.Tensor:
        """Returns 2-class logits (B, 2); index 1 = defective."""
        h = self.encoder.cfg.hidden_dim
        batch = expert.shape[0] if expert.dim() > 1 else ids.shape[0]
        dtype = self.expansion.weight.dtype
        if self.use_semantic:
            s = change_representation(self.encoder(ids, mask))
        else:
            s = torch.zeros(batch, h, dtype=dtype)
        e = self.expansion(expert.to(dtype)) if self.use_expert \
            else torch.zeros(batch, h, dtype=dtype)
        return self.mlp(torch.cat([s, e], dim=-1))


def fuse_features(s: torch.Tensor, e: torch.Tensor, expansion: nn.Linear) -> torch.Tensor:
    """concat(change representation, dense(expert features)); dimension 2H."""
    if e.shape[-1] != NUM_EXPERT_FEATURES:
        raise ModelError(f"expected {NUM_EXPERT_FEATURES} expert features, got {e.shape[-1]}")
    if expansion.in_features != NUM_EXPERT_FEATURES or expansion.out_features != s.shape[-1]:
        raise ModelError("expansion layer dimensions do not match the inputs")
    return torch.cat([s, expansion(e.to(expansion.weight.dtype))], dim=-1)


def classify(fused: torch.Tensor, mlp: nn.Module, threshold: float = 0.5) -> PredictionResult:
    with torch.no_grad():
        probs = F.softmax(mlp(fused), dim=-1)
    p_defective = float(probs[..., 1])
    return PredictionResult(
        p_defective=p_defective,
        p_clean=float(probs[..., 0]),
        predicted_label=1 if p_defective >= threshold else 0,
    )


def dp_loss(result, label) -> torch.Tensor:
    """Binary cross-entropy on p_defective; label 1 = defect-inducing."""
    p = result.p_defective if isinstance(result, PredictionResult) else result
    p = torch.as_tensor(p, dtype=torch.get_default_dtype()) if not torch.is_tensor(p) else p
    y = torch.as_tensor(label, dtype=p.dtype, device=p.device)
    p = p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP)
    return (-(y * torch.log(p) + (1.0 - y) * torch.log(1.0 - p))).mean()


@dataclass(frozen=True)
class FinetuneConfig:
    epochs: int = 10
    batch_size: int = 16
    learning_rate: float = 1e-5
    warmup_fraction: float = 0.1
    threshold: float = 0.5
    use_semantic: bool = True
    use_expert: bool = True
    positive_weight: float = 1.0  # optional imbalance weighting, 1.0 = off
    seed: int = 0


class ModelBundle:
    """A loaded fine-tuned model: classifier + vocab + standardizer + config."""

    def __init__(self, model: FusionClassifier, vocab: Vocabulary,
                 standardizer: Standardizer, threshold: float = 0.5):
        self.model = model
        self.vocab = vocab
        self.standardizer = standardizer
        self.threshold = threshold
        self.model.eval()

    def save(self, directory) -> None:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        save_encoder(self.model.encoder, directory)
        torch.save({"expansion": self.model.expansion.state_dict(),
                    "mlp": self.model.mlp.state_dict()}, directory / "classifier.pt")
        self.vocab.save(directory / "vocab.json")
        (directory / "standardizer.json").write_text(self.standardizer.to_json())
        with open(directory / "bundle.json", "w", encoding="utf-8") as f:
            json.dump({"threshold": self.threshold,
                       "use_semantic": self.model.use_semantic,
                       "use_expert": self.model.use_expert,
                       "vocab_size": len(self.vocab)}, f, indent=2)

    @classmethod
    def load(cls, directory) -> "ModelBundle":
        directory = Path(directory)
        with open(directory / "bundle.json", encoding="utf-8") as f:
            meta = json.load(f)
        encoder = load_encoder(directory)
        vocab = Vocabulary.load(directory / "vocab.json")
        if len(vocab) != meta["vocab_size"] or len(vocab) != encoder.cfg.vocab_size:
            raise ModelError("vocabulary size does not match the checkpointed encoder")
        model = FusionClassifier(encoder, meta["use_semantic"], meta["use_expert"])
        state = torch.load(directory / "classifier.pt", weights_only=True)
        model.expansion.load_state_dict(state["expansion"])
        model.mlp.load_state_dict(state["mlp"])
        standardizer = Standardizer.from_json((directory / "standardizer.json").read_text())
        return cls(model, vocab, standardizer, meta["threshold"])


def _batch_forward(model: FusionClassifier, commits, features_map, vocab, standardizer):
    seqs = [serialize_commit(c, vocab, model.encoder.cfg.max_len) for c in commits]
    ids, mask = batch_tensors(seqs)
    expert = torch.tensor(
        np.stack([standardizer.transform(features_map[c.commit_id]) for c in commits]),
        dtype=model.expansion.weight.dtype)
    return model(ids, mask, expert)


def _require_features(commits, features_map) -> None:
    missing = [c.commit_id for c in commits if c.commit_id not in features_map]
    if missing:
        raise TrainingError(f"missing expert features for commits: {', '.join(missing)}")


@torch.no_grad()
def score_commits(bundle: ModelBundle, commits, features_map,
                  batch_size: int = 64) -> list[PredictionResult]:
    _require_features(commits, features_map)
    results = []
    for i in range(0, len(commits), batch_size):
        chunk = commits[i:i + batch_size]
        probs = F.softmax(_batch_forward(bundle.model, chunk, features_map,
                                         bundle.vocab, bundle.standardizer), dim=-1)
        for row in probs:
            p_def = float(row[1])
            results.append(PredictionResult(
                p_defective=p_def, p_clean=float(row[0]),
                predicted_label=1 if p_def >= bundle.threshold else 0))
    return results


def predict_commit(bundle: ModelBundle, commit: CodeCommit,
                   features: ExpertFeatureVector,
                   threshold: float | None = None) -> PredictionResult:
    threshold = bundle.threshold if threshold is None else threshold
    result = score_commits(bundle, [commit], {commit.commit_id: features})[0]
    label = 1 if result.p_defective >= threshold else 0
    return PredictionResult(result.p_defective, result.p_clean, label)


def _validation_f1(bundle, commits, features_map, threshold) -> float:
    results = score_commits(bundle, commits, features_map)
    tp = sum(1 for r, c in zip(results, commits) if r.p_defective >= threshold and c.label == 1)
    fp = sum(1 for r, c in zip(results, commits) if r.p_defective >= threshold and c.label == 0)
    fn = sum(1 for r, c in zip(results, commits) if r.p_defective < threshold and c.label == 1)
    return f1_score(tp, fp, fn)[2]


def run_finetune(pretrained_checkpoint, train_commits, valid_commits,
                 features_map, vocab: Vocabulary, cfg: FinetuneConfig,
                 out_dir, encoder_cfg: EncoderConfig | None = None) -> tuple[Path, int]:
    """Jointly fine-tune encoder + expansion + MLP; keep the best-F1 checkpoint.

    pretrained_checkpoint = None trains from random initialization (the
    no-pre-training ablation); encoder_cfg is then required.

    Returns (bundle directory, best epoch).
    """
    train_commits, valid_commits = list(train_commits), list(valid_commits)
    if not train_commits or not valid_commits:
        raise TrainingError("train and validation splits must be nonempty")
    _require_features(train_commits + valid_commits, features_map)

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    torch.manual_seed(cfg.seed)
    if pretrained_checkpoint is not None:
        encoder, _, _ = load_pretrained(pretrained_checkpoint)
    else:
        if encoder_cfg is None:
            raise TrainingError("encoder_cfg is required when training from scratch")
        encoder = build_encoder(encoder_cfg)

    model = FusionClassifier(encoder, cfg.use_semantic, cfg.use_expert)
    standardizer = Standardizer.fit([features_map[c.commit_id] for c in train_commits])
    optimizer = torch.optim.Adam(model.parameters(), lr=cfg.learning_rate)

    batches_per_epoch = math.ceil(len(train_commits) / cfg.batch_size)
    total_steps = cfg.epochs * batches_per_epoch
    class_weights = torch.tensor([1.0, cfg.positive_weight])

    bundle = ModelBundle(model, vocab, standardizer, cfg.threshold)
    best_f1, best_epoch = -1.0, -1
    best_dir = out_dir / "best"
    log_path = out_dir / "finetune_log.jsonl"

    with open(log_path, "w", encoding="utf-8") as log_f:
        step = 0
        for epoch in range(cfg.epochs):
            model.train()
            order = list(range(len(train_commits)))
            Random(cfg.seed * 100003 + epoch).shuffle(order)
            for b in range(batches_per_epoch):
                idx = order[b * cfg.batch_size:(b + 1) * cfg.batch_size]
                chunk = [train_commits[i] for i in idx]
                lr = warmup_lr(step, total_steps, cfg.learning_rate, cfg.warmup_fraction)
                for group in optimizer.param_groups:
                    group["lr"] = lr
                logits = _batch_forward(model, chunk, features_map, vocab, standardizer)
                labels = torch.tensor([c.label for c in chunk], dtype=torch.long)
                loss = F.cross_entropy(logits, labels, weight=class_weights)
                optimizer.zero_grad(set_to_none=True)
                loss.backward()
                optimizer.step()
                log_f.write(json.dumps({"step": step, "epoch": epoch,
                                        "loss": float(loss.item()), "lr": lr}) + "\n")
                step += 1
            model.eval()
            val_f1 = _validation_f1(bundle, valid_commits, features_map, cfg.threshold)
            log_f.write(json.dumps({"epoch": epoch, "valid_f1": val_f1}) + "\n")
            if val_f1 > best_f1:
                best_f1, best_epoch = val_f1, epoch
                bundle.save(best_dir)
    with open(out_dir / "best_epoch.json", "w", encoding="utf-8") as f:
        json.dump({"best_epoch": best_epoch, "valid_f1": best_f1}, f)
    return best_dir, best_epoch
