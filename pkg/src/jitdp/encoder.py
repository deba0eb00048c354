"""Bidirectional transformer encoder over serialized commits.

Post-LN architecture: token + learned positional embeddings, L layers of
multi-head self-attention and a GELU feed-forward block, residuals and
layer normalization. The [CLS] hidden state (position 0) is the change
representation.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path

import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import ModelError


@dataclass(frozen=True)
class EncoderConfig:
    vocab_size: int
    num_layers: int = 2
    num_heads: int = 4
    hidden_dim: int = 128
    ffn_dim: int = 256
    max_len: int = 128
    dropout: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if min(self.vocab_size, self.num_layers, self.num_heads,
               self.hidden_dim, self.ffn_dim, self.max_len) <= 0:
            raise ModelError("all encoder dimensions must be positive")
        if self.hidden_dim % self.num_heads != 0:
            raise ModelError(
                f"hidden_dim {self.hidden_dim} not divisible by num_heads {self.num_heads}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "EncoderConfig":
        return cls(**d)

    def config_hash(self) -> str:
        payload = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(payload).hexdigest()


class SelfAttention(nn.Module):
    def __init__(self, cfg: EncoderConfig):
        super().__init__()
        self.num_heads = cfg.num_heads
        self.head_dim = cfg.hidden_dim // cfg.num_heads
        self.qkv = nn.Linear(cfg.hidden_dim, 3 * cfg.hidden_dim)
        self.out = nn.Linear(cfg.hidden_dim, cfg.hidden_dim)
        self.dropout = nn.Dropout(cfg.dropout)

    def forward(self, x: torch.Tensor, attention_mask: torch.Tensor) -> torch.Tensor:
        b, t, h = x.shape
        q, k, v = self.qkv(x).chunk(3, dim=-1)
        q = q.view(b, t, self.num_heads, self.head_dim).transpose(1, 2)
        k = k.view(b, t, self.num_heads, self.head_dim).transpose(1, 2)
        v = v.view(b, t, self.num_heads, self.head_dim).transpose(1, 2)
        scores = q @ k.transpose(-2, -1) / math.sqrt(self.head_dim)
        # zero attention to padded key positions
        key_mask = attention_mask[:, None, None, :].to(dtype=torch.bool)
        scores = scores.masked_fill(~key_mask, float("-inf"))
        attn = self.dropout(F.softmax(scores, dim=-1))
        ctx = (attn @ v).transpose(1, 2).reshape(b, t, h)
        return self.out(ctx)


class EncoderLayer(nn.Module):
    def __init__(self, cfg: EncoderConfig):
        super().__init__()
        self.attention = SelfAttention(cfg)
        self.ffn = nn.Sequential(
            nn.Linear(cfg.hidden_dim, cfg.ffn_dim),
            nn.GELU(),
            nn.Linear(cfg.ffn_dim, cfg.hidden_dim),
        )
        self.norm1 = nn.LayerNorm(cfg.hidden_dim)
        self.norm2 = nn.LayerNorm(cfg.hidden_dim)
        self.dropout = nn.Dropout(cfg.dropout)

    def forward(self, x: torch.Tensor, attention_mask: torch.Tensor) -> torch.Tensor:
        x = self.norm1(x + self.dropout(self.attention(x, attention_mask)))
        x = self.norm2(x + self.dropout(self.ffn(x)))
        return x


class TransformerEncoder(nn.Module):
    def __init__(self, cfg: EncoderConfig):
        super().__init__()
        self.cfg = cfg
        self.token_embedding = nn.Embedding(cfg.vocab_size, cfg.hidden_dim)
        self.position_embedding = nn.Embedding(cfg.max_len, cfg.hidden_dim)
        self.embedding_norm = nn.LayerNorm(cfg.hidden_dim)
        self.embedding_dropout = nn.Dropout(cfg.dropout)
        self.layers = nn.ModuleList(EncoderLayer(cfg) for _ in range(cfg.num_layers))
        self.apply(self._init_weights)

    @staticmethod
    def _init_weights(module: nn.Module) -> None:
        if isinstance(module, (nn.Linear, nn.Embedding)):
            nn.init.normal_(module.weight, mean=0.0, std=0.02)
            if isinstance(module, nn.Linear) and module.bias is not None:
                nn.init.zeros_(module.bias)

    def forward(self, ids: torch.Tensor, attention_mask: torch.Tensor) -> torch.Tensor:
        """ids, attention_mask: (B, T) -> hidden states (B, T, H)."""
        if ids.dim() == 1:
            ids = ids.unsqueeze(0)
            attention_mask = attention_mask.unsqueeze(0)
        if ids.size(1) > self.cfg.max_len:
            raise ModelError(f"sequence length {ids.size(1)} exceeds max_len {self.cfg.max_len}")
        if int(ids.max()) >= self.cfg.vocab_size or int(ids.min()) < 0:
            raise ModelError("token id out of vocabulary range")
        positions = torch.arange(ids.size(1), device=ids.device).unsqueeze(0)
        x = self.token_embedding(ids) + self.position_embedding(positions)
        x = self.embedding_dropout(self.embedding_norm(x))
        for layer in self.layers:
            x = layer(x, attention_mask)
        return x


def build_encoder(cfg: EncoderConfig, dtype: torch.dtype = torch.float32) -> TransformerEncoder:
    """Construct a seed-deterministic encoder."""
    torch.manual_seed(cfg.seed)
    return TransformerEncoder(cfg).to(dtype)


def encode(encoder: TransformerEncoder, seq) -> torch.Tensor:
    """Run one TokenSequence through the encoder; returns (T, H)."""
    ids = torch.tensor(seq.ids, dtype=torch.long)
    mask = torch.tensor(seq.attention_mask, dtype=torch.long)
    return encoder(ids, mask).squeeze(0)


def change_representation(hidden: torch.Tensor) -> torch.Tensor:
    """The [CLS] row: position 0 of the (possibly batched) hidden states."""
    if hidden.numel() == 0:
        raise ModelError("empty hidden-state matrix")
    return hidden[..., 0, :]


def batch_tensors(sequences, device=None) -> tuple[torch.Tensor, torch.Tensor]:
    ids = torch.tensor([s.ids for s in sequences], dtype=torch.long, device=device)
    mask = torch.tensor([s.attention_mask for s in sequences], dtype=torch.long, device=device)
    return ids, mask


def save_encoder(encoder: TransformerEncoder, directory) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    cfg = encoder.cfg
    with open(directory / "encoder_config.json", "w", encoding="utf-8") as f:
        json.dump({"config": cfg.to_dict(), "hash": cfg.config_hash()}, f, indent=2)
    torch.save(encoder.state_dict(), directory / "encoder.pt")


def load_encoder(directory, dtype: torch.dtype = torch.float32) -> TransformerEncoder:
    directory = Path(directory)
    with open(directory / "encoder_config.json", encoding="utf-8") as f:
        meta = json.load(f)
    cfg = EncoderConfig.from_dict(meta["config"])
    if cfg.config_hash() != meta["hash"]:
        raise ModelError("encoder config hash mismatch; checkpoint is inconsistent")
    encoder = TransformerEncoder(cfg).to(dtype)
    encoder.load_state_dict(torch.load(directory / "encoder.pt", weights_only=True))
    return encoder
