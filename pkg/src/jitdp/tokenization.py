"""Vocabulary building, commit serialization, and MLM masking.

Input layout per commit:

    [CLS] <message tokens> ([ADD] <line tokens>)* ([DEL] <line tokens>)*

truncated to max_len with the message capped at 25% of the budget, then
padded with [PAD]. Message tokens are lowercased; code tokens keep case.
"""

from __future__ import annotations

import json
import re
from collections import Counter
from dataclasses import dataclass, replace
from random import Random

from .errors import TokenizationError

PAD, UNK, CLS, MASK, ADD, DEL = 0, 1, 2, 3, 4, 5
SPECIAL_TOKENS = ("[PAD]", "[UNK]", "[CLS]", "[MASK]", "[ADD]", "[DEL]")
NUM_SPECIALS = len(SPECIAL_TOKENS)
IGNORE_INDEX = -100

_TOKEN_RE = re.compile(r"[A-Za-z0-9_]+|[^\sA-Za-z0-9_]")


def tokenize_text(text: str, lowercase: bool = False) -> list[str]:
    """Whitespace split, then split off punctuation/operator chars singly."""
    if lowercase:
        text = text.lower()
    return _TOKEN_RE.findall(text)


class Vocabulary:
    """Injective token -> id mapping with the six reserved specials at ids 0-5."""

    def __init__(self, tokens: list[str]):
        if list(tokens[:NUM_SPECIALS]) != list(SPECIAL_TOKENS):
            raise TokenizationError("vocabulary must start with the reserved specials")
        self.id_to_token = list(tokens)
        self.token_to_id = {t: i for i, t in enumerate(tokens)}
        if len(self.token_to_id) != len(self.id_to_token):
            raise TokenizationError("vocabulary tokens are not unique")

    def __len__(self) -> int:
        return len(self.id_to_token)

    def encode(self, token: str) -> int:
        return self.token_to_id.get(token, UNK)

    def decode(self, token_id: int) -> str:
        return self.id_to_token[token_id]

    def to_json(self) -> str:
        return json.dumps(self.token_to_id)

    @classmethod
    def from_json(cls, text: str) -> "Vocabulary":
        mapping = json.loads(text)
        tokens = [None] * len(mapping)
        for tok, idx in mapping.items():
            tokens[idx] = tok
        return cls(tokens)

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as f:
            f.write(self.to_json())

    @classmethod
    def load(cls, path) -> "Vocabulary":
        with open(path, encoding="utf-8") as f:
            return cls.from_json(f.read())


def commit_content_tokens(commit) -> list[str]:
    """All content tokens of a commit under the corpus tokenization rule."""
    tokens = tokenize_text(commit.message, lowercase=True)
    for line in commit.added_lines:
        tokens.extend(tokenize_text(line))
    for line in commit.deleted_lines:
        tokens.extend(tokenize_text(line))
    return tokens


def build_vocabulary(corpus, size_cap: int) -> Vocabulary:
    """Most frequent corpus tokens under the cap; ties broken lexicographically."""
    if size_cap <= NUM_SPECIALS:
        raise TokenizationError(f"size_cap must exceed {NUM_SPECIALS}")
    corpus = list(corpus)
    if not corpus:
        raise TokenizationError("cannot build a vocabulary from an empty corpus")
    counts: Counter[str] = Counter()
    for commit in corpus:
        counts.update(commit_content_tokens(commit))
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    kept = [tok for tok, _ in ranked[: size_cap - NUM_SPECIALS]]
    return Vocabulary(list(SPECIAL_TOKENS) + kept)


@dataclass(frozen=True)
class TokenSequence:
    ids: tuple[int, ...]
    attention_mask: tuple[int, ...]
    mlm_labels: tuple[int, ...] | None
    cls_positions: tuple[int, ...]
    add_positions: tuple[int, ...]
    del_positions: tuple[int, ...]

    def __post_init__(self):
        if len(self.ids) != len(self.attention_mask):
            raise TokenizationError("ids and attention_mask lengths differ")

    @property
    def real_length(self) -> int:
        return sum(self.attention_mask)


def serialize_commit(commit, vocab: Vocabulary, max_len: int) -> TokenSequence:
    """Serialize one commit into the [CLS]/[ADD]/[DEL] layout.

    Budget policy: [CLS] is always kept; the message gets up to
    max_len // 4 tokens; the rest of the budget is consumed by added then
    deleted lines in order, cutting mid-line when it runs out. A line's
    marker token counts against the budget too.
    """
    if max_len < 2:
        raise TokenizationError("max_len must be at least 2")

    ids = [CLS]
    msg_tokens = tokenize_text(commit.message, lowercase=True)[: max_len // 4]
    ids.extend(vocab.encode(t) for t in msg_tokens)

    add_positions: list[int] = []
    del_positions: list[int] = []
    for marker, positions, lines in (
        (ADD, add_positions, commit.added_lines),
        (DEL, del_positions, commit.deleted_lines),
    ):
        for line in lines:
            if len(ids) >= max_len:
                break
            positions.append(len(ids))
            ids.append(marker)
            for tok in tokenize_text(line):
                if len(ids) >= max_len:
                    break
                ids.append(vocab.encode(tok))

    real_len = len(ids)
    mask = [1] * real_len + [0] * (max_len - real_len)
    ids.extend([PAD] * (max_len - real_len))
    return TokenSequence(
        ids=tuple(ids),
        attention_mask=tuple(mask),
        mlm_labels=None,
        cls_positions=(0,),
        add_positions=tuple(add_positions),
        del_positions=tuple(del_positions),
    )


def mask_count(rate: float, eligible_count: int) -> int:
    """round(rate * eligible), floored at 1 when both are positive."""
    if eligible_count == 0 or rate == 0:
        return 0
    m = int(rate * eligible_count + 0.5)
    return max(m, 1)


def apply_mlm_mask(seq: TokenSequence, rate: float, rng: Random,
                   scheme: str = "mask", vocab_size: int | None = None) -> TokenSequence:
    """Mask a fraction of non-special real tokens and record the label track.

    scheme "mask" writes [MASK] at every chosen position; scheme "bert"
    uses the 80/10/10 mask/random/keep convention and needs vocab_size for
    the random-replacement draw.
    """
    if seq.mlm_labels is not None:
        raise TokenizationError("sequence already carries mlm_labels")
    if not 0.0 <= rate <= 1.0:
        raise TokenizationError(f"mask rate {rate} outside [0, 1]")
    if scheme not in ("mask", "bert"):
        raise TokenizationError(f"unknown masking scheme {scheme!r}")
    if scheme == "bert" and (vocab_size is None or vocab_size <= NUM_SPECIALS):
        raise TokenizationError("bert scheme needs vocab_size > number of specials")

    eligible = [
        i for i, (tid, m) in enumerate(zip(seq.ids, seq.attention_mask))
        if m == 1 and tid >= NUM_SPECIALS
    ]
    m = mask_count(rate, len(eligible))
    chosen = sorted(rng.sample(eligible, m)) if m else []

    ids = list(seq.ids)
    labels = [IGNORE_INDEX] * len(ids)
    for pos in chosen:
        labels[pos] = ids[pos]
        if scheme == "mask":
            ids[pos] = MASK
        else:
            u = rng.random()
            if u < 0.8:
                ids[pos] = MASK
            elif u < 0.9:
                ids[pos] = rng.randrange(NUM_SPECIALS, vocab_size)
            # else: keep the original token
    return replace(seq, ids=tuple(ids), mlm_labels=tuple(labels))
