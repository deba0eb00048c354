"""Pre-training: MLM and replaced-message objectives, alternating sampler, loop.

Each batch trains exactly one objective. In alternating mode the objective
is drawn per batch with probability mlm_weight / (mlm_weight + rmi_weight);
ordered modes run one objective for the first half of the epochs and the
other for the second half. Heads receive gradients only from their own
loss; the shared encoder receives both.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace as dc_replace
from pathlib import Path
from random import Random

import torch
import torch.nn as nn
import torch.nn.functional as F

from .corpus import CodeCommit
from .encoder import EncoderConfig, TransformerEncoder, batch_tensors, build_encoder, \
    change_representation, load_encoder, save_encoder
from .errors import TrainingError
from .tokenization import IGNORE_INDEX, Vocabulary, apply_mlm_mask, serialize_commit

MLM = "mlm"
RMI = "rmi"

PROB_CLAMP = 1e-7


@dataclass(frozen=True)
class RMIExample:
    commit: CodeCommit
    rmi_label: int  # 1 = message is the commit's own, 0 = replaced
    donor_commit_id: str | None = None

    def __post_init__(self):
        if self.rmi_label == 0 and self.donor_commit_id == self.commit.commit_id:
            raise TrainingError("replaced example cannot donate its own message")


@dataclass(frozen=True)
class ObjectiveSchedule:
    mlm_weight: int = 2
    rmi_weight: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.mlm_weight < 0 or self.rmi_weight < 0:
            raise TrainingError("objective weights must be nonnegative")
        if self.mlm_weight == 0 and self.rmi_weight == 0:
            raise TrainingError("at least one objective weight must be positive")


def sample_objective(schedule: ObjectiveSchedule, rng: Random) -> str:
    total = schedule.mlm_weight + schedule.rmi_weight
    if total == 0:
        raise TrainingError("both objective weights are zero")
    return MLM if rng.random() < schedule.mlm_weight / total else RMI


def make_rmi_example(commit: CodeCommit, pool, p_replace: float, rng: Random) -> RMIExample:
    """With probability p_replace, swap in a message from a different commit."""
    if not 0.0 <= p_replace <= 1.0:
        raise TrainingError(f"p_replace {p_replace} outside [0, 1]")
    if rng.random() >= p_replace:
        return RMIExample(commit=commit, rmi_label=1)
    donors = [c for c in pool if c.commit_id != commit.commit_id]
    if not donors:
        raise TrainingError("cannot draw non-corresponding message: pool too small")
    donor = donors[rng.randrange(len(donors))]
    return RMIExample(
        commit=dc_replace(commit, message=donor.message),
        rmi_label=0,
        donor_commit_id=donor.commit_id,
    )


def mlm_loss(prediction_logits: torch.Tensor, labels: torch.Tensor) -> torch.Tensor:
    """Mean negative log-likelihood of the true tokens at masked positions."""
    if prediction_logits.numel() == 0 or prediction_logits.shape[0] == 0:
        raise TrainingError("mlm_loss needs at least one masked position")
    return F.cross_entropy(prediction_logits, labels)


def rmi_loss(p_not_replaced, label) -> torch.Tensor:
    """Binary cross-entropy on the not-replaced probability, clamped."""
    p = torch.as_tensor(p_not_replaced, dtype=torch.get_default_dtype()) \
        if not torch.is_tensor(p_not_replaced) else p_not_replaced
    y = torch.as_tensor(label, dtype=p.dtype, device=p.device)
    p = p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP)
    loss = -(y * torch.log(p) + (1.0 - y) * torch.log(1.0 - p))
    return loss.mean()


class MLMHead(nn.Module):
    """Vocabulary projection over hidden states."""

    def __init__(self, hidden_dim: int, vocab_size: int):
        super().__init__()
        self.proj = nn.Linear(hidden_dim, vocab_size)

    def forward(self, hidden: torch.Tensor) -> torch.Tensor:
        return self.proj(hidden)


class RMIHead(nn.Module):
    """Binary head on the [CLS] representation; outputs p(not replaced)."""

    def __init__(self, hidden_dim: int):
        super().__init__()
        self.proj = nn.Linear(hidden_dim, 1)

    def forward(self, cls_hidden: torch.Tensor) -> torch.Tensor:
        return torch.sigmoid(self.proj(cls_hidden)).squeeze(-1)


@dataclass(frozen=True)
class PretrainConfig:
    epochs: int = 30
    batch_size: int = 16
    learning_rate: float = 5e-4
    warmup_fraction: float = 0.1
    mask_rate: float = 0.15
    mask_scheme: str = "mask"
    p_replace: float = 0.5
    order_mode: str = "alternating"  # alternating | mlm_then_rmi | rmi_then_mlm
    schedule: ObjectiveSchedule = field(default_factory=ObjectiveSchedule)
    seed: int = 0

    def __post_init__(self):
        if self.order_mode not in ("alternating", "mlm_then_rmi", "rmi_then_mlm"):
            raise TrainingError(f"unknown order mode {self.order_mode!r}")
        if self.epochs <= 0 or self.batch_size <= 0:
            raise TrainingError("epochs and batch_size must be positive")


def warmup_lr(step: int, total_steps: int, peak: float, warmup_fraction: float) -> float:
    """Linear increase from 0 to peak over the warm-up phase, then constant."""
    warmup_steps = max(1, int(round(warmup_fraction * total_steps)))
    if step < warmup_steps:
        return peak * (step + 1) / warmup_steps
    return peak


def _epoch_objective(cfg: PretrainConfig, epoch: int) -> str | None:
    """Fixed objective for ordered modes; None means sample per batch."""
    if cfg.order_mode == "alternating":
        return None
    first, second = (MLM, RMI) if cfg.order_mode == "mlm_then_rmi" else (RMI, MLM)
    return first if epoch < math.ceil(cfg.epochs / 2) else second


def _save_checkpoint(out_dir: Path, encoder, mlm_head, rmi_head, optimizer,
                     epoch: int, cfg: PretrainConfig, objective_rng: Random) -> None:
    save_encoder(encoder, out_dir)
    torch.save({"mlm_head": mlm_head.state_dict(), "rmi_head": rmi_head.state_dict()},
               out_dir / "heads.pt")
    torch.save({
        "optimizer": optimizer.state_dict(),
        "epoch": epoch,
        "objective_rng": objective_rng.getstate(),
        "torch_rng": torch.get_rng_state(),
    }, out_dir / "train_state.pt")
    with open(out_dir / "pretrain_config.json", "w", encoding="utf-8") as f:
        json.dump({
            "epochs": cfg.epochs, "batch_size": cfg.batch_size,
            "learning_rate": cfg.learning_rate, "warmup_fraction": cfg.warmup_fraction,
            "mask_rate": cfg.mask_rate, "mask_scheme": cfg.mask_scheme,
            "p_replace": cfg.p_replace, "order_mode": cfg.order_mode,
            "schedule": {"mlm_weight": cfg.schedule.mlm_weight,
                         "rmi_weight": cfg.schedule.rmi_weight,
                         "seed": cfg.schedule.seed},
            "seed": cfg.seed,
        }, f, indent=2)


def run_pretraining(encoder_cfg: EncoderConfig, commits, vocab: Vocabulary,
                    cfg: PretrainConfig, out_dir, resume_from=None) -> Path:
    """Train MLM/RMI on the commit corpus; returns the checkpoint directory.

    Writes a JSONL step log {step, objective, loss, lr} and a resumable
    checkpoint after every epoch.
    """
    commits = list(commits)
    if not commits:
        raise TrainingError("pre-training corpus is empty")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    torch.manual_seed(cfg.seed)
    if resume_from is not None:
        resume_from = Path(resume_from)
        try:
            encoder = load_encoder(resume_from)
            head_states = torch.load(resume_from / "heads.pt", weights_only=True)
            state = torch.load(resume_from / "train_state.pt", weights_only=False)
        except (OSError, RuntimeError, KeyError) as exc:
            raise TrainingError(f"invalid resume checkpoint {resume_from}: {exc}") from exc
    else:
        encoder = build_encoder(encoder_cfg)

    mlm_head = MLMHead(encoder.cfg.hidden_dim, encoder.cfg.vocab_size)
    rmi_head = RMIHead(encoder.cfg.hidden_dim)
    params = list(encoder.parameters()) + list(mlm_head.parameters()) + list(rmi_head.parameters())
    optimizer = torch.optim.Adam(params, lr=cfg.learning_rate)
    objective_rng = Random(cfg.schedule.seed)
    start_epoch = 0

    if resume_from is not None:
        mlm_head.load_state_dict(head_states["mlm_head"])
        rmi_head.load_state_dict(head_states["rmi_head"])
        optimizer.load_state_dict(state["optimizer"])
        objective_rng.setstate(state["objective_rng"])
        torch.set_rng_state(state["torch_rng"])
        start_epoch = state["epoch"] + 1

    base_sequences = [serialize_commit(c, vocab, encoder.cfg.max_len) for c in commits]
    batches_per_epoch = math.ceil(len(commits) / cfg.batch_size)
    total_steps = cfg.epochs * batches_per_epoch

    log_mode = "a" if resume_from is not None else "w"
    encoder.train()
    with open(out_dir / "train_log.jsonl", log_mode, encoding="utf-8") as log_f:
        step = start_epoch * batches_per_epoch
        for epoch in range(start_epoch, cfg.epochs):
            order = list(range(len(commits)))
            Random(cfg.seed * 100003 + epoch).shuffle(order)
            fixed_objective = _epoch_objective(cfg, epoch)
            for b in range(batches_per_epoch):
                idx = order[b * cfg.batch_size:(b + 1) * cfg.batch_size]
                objective = fixed_objective or sample_objective(cfg.schedule, objective_rng)
                lr = warmup_lr(step, total_steps, cfg.learning_rate, cfg.warmup_fraction)
                for group in optimizer.param_groups:
                    group["lr"] = lr

                batch_rng = Random((cfg.seed, epoch, b).__hash__())
                if objective == MLM:
                    seqs = [apply_mlm_mask(base_sequences[i], cfg.mask_rate, batch_rng,
                                           cfg.mask_scheme, vocab_size=len(vocab))
                            for i in idx]
                    labels = torch.tensor([s.mlm_labels for s in seqs], dtype=torch.long)
                    masked = labels != IGNORE_INDEX
                    if not bool(masked.any()):
                        step += 1
                        continue
                    ids, mask = batch_tensors(seqs)
                    hidden = encoder(ids, mask)
                    logits = mlm_head(hidden)[masked]
                    loss = mlm_loss(logits, labels[masked])
                else:
                    examples = [make_rmi_example(commits[i], commits, cfg.p_replace, batch_rng)
                                for i in idx]
                    seqs = [serialize_commit(ex.commit, vocab, encoder.cfg.max_len)
                            for ex in examples]
                    ids, mask = batch_tensors(seqs)
                    p = rmi_head(change_representation(encoder(ids, mask)))
                    y = torch.tensor([ex.rmi_label for ex in examples], dtype=p.dtype)
                    loss = rmi_loss(p, y)

                optimizer.zero_grad(set_to_none=True)
                loss.backward()
                optimizer.step()
                log_f.write(json.dumps({"step": step, "objective": objective,
                                        "loss": float(loss.item()), "lr": lr}) + "\n")
                step += 1
            _save_checkpoint(out_dir, encoder, mlm_head, rmi_head, optimizer,
                             epoch, cfg, objective_rng)
    return out_dir


def load_pretrained(checkpoint_dir) -> tuple[TransformerEncoder, MLMHead, RMIHead]:
    checkpoint_dir = Path(checkpoint_dir)
    encoder = load_encoder(checkpoint_dir)
    heads = torch.load(checkpoint_dir / "heads.pt", weights_only=True)
    mlm_head = MLMHead(encoder.cfg.hidden_dim, encoder.cfg.vocab_size)
    mlm_head.load_state_dict(heads["mlm_head"])
    rmi_head = RMIHead(encoder.cfg.hidden_dim)
    rmi_head.load_state_dict(heads["rmi_head"])
    return encoder, mlm_head, rmi_head


@torch.no_grad()
def rmi_accuracy(encoder, rmi_head, commits, vocab: Vocabulary,
                 p_replace: float, seed: int, batch_size: int = 32) -> float:
    """Accuracy of the replaced-message head on freshly drawn examples."""
    commits = list(commits)
    rng = Random(seed)
    examples = [make_rmi_example(c, commits, p_replace, rng) for c in commits]
    encoder.eval()
    correct = 0
    for i in range(0, len(examples), batch_size):
        chunk = examples[i:i + batch_size]
        seqs = [serialize_commit(ex.commit, vocab, encoder.cfg.max_len) for ex in chunk]
        ids, mask = batch_tensors(seqs)
        p = rmi_head(change_representation(encoder(ids, mask)))
        pred = (p >= 0.5).long()
        truth = torch.tensor([ex.rmi_label for ex in chunk], dtype=torch.long)
        correct += int((pred == truth).sum())
    encoder.train()
    return correct / len(examples)


@torch.no_grad()
def mlm_eval(encoder, mlm_head, commits, vocab: Vocabulary, mask_rate: float,
             seed: int, batch_size: int = 32) -> tuple[float, float]:
    """(mean masked-token loss, top-1 accuracy) on freshly masked sequences."""
    commits = list(commits)
    rng = Random(seed)
    encoder.eval()
    total_loss, total_correct, total_masked = 0.0, 0, 0
    for i in range(0, len(commits), batch_size):
        chunk = commits[i:i + batch_size]
        seqs = [apply_mlm_mask(serialize_commit(c, vocab, encoder.cfg.max_len),
                               mask_rate, rng) for c in chunk]
        labels = torch.tensor([s.mlm_labels for s in seqs], dtype=torch.long)
        masked = labels != IGNORE_INDEX
        if not bool(masked.any()):
            continue
        ids, mask = batch_tensors(seqs)
        logits = mlm_head(encoder(ids, mask))[masked]
        truth = labels[masked]
        total_loss += float(F.cross_entropy(logits, truth, reduction="sum"))
        total_correct += int((logits.argmax(dim=-1) == truth).sum())
        total_masked += int(masked.sum())
    encoder.train()
    if total_masked == 0:
        raise TrainingError("no masked positions in evaluation corpus")
    return total_loss / total_masked, total_correct / total_masked
