"""JSONL commit corpus loading, validation, serialization, and splitting."""

from __future__ import annotations

import json
import logging
import random
from dataclasses import dataclass
from pathlib import Path

from .errors import CorpusError
from .features import ExpertFeatureVector

log = logging.getLogger(__name__)

REQUIRED_FIELDS = (
    "commit_id", "project", "timestamp", "author",
    "message", "added_lines", "deleted_lines", "label",
)


@dataclass(frozen=True)
class CodeCommit:
    """One commit: message text, added/deleted lines, defect label, metadata.

    label = 1 means defect-inducing, 0 means clean, everywhere in this package.
    """

    commit_id: str
    project: str
    timestamp: int
    author: str
    message: str
    added_lines: tuple[str, ...]
    deleted_lines: tuple[str, ...]
    label: int
    expert_features: ExpertFeatureVector | None = None

    def to_record(self) -> dict:
        rec = {
            "commit_id": self.commit_id,
            "project": self.project,
            "timestamp": self.timestamp,
            "author": self.author,
            "message": self.message,
            "added_lines": list(self.added_lines),
            "deleted_lines": list(self.deleted_lines),
            "label": self.label,
        }
        if self.expert_features is not None:
            rec["expert_features"] = self.expert_features.to_dict()
        return rec


def _parse_record(obj: dict, line_no: int) -> CodeCommit:
    for field in REQUIRED_FIELDS:
        if field not in obj:
            raise CorpusError(f"line {line_no}: missing field {field}")
    label = obj["label"]
    if label not in (0, 1):
        raise CorpusError(f"line {line_no}: label {label!r} outside {{0, 1}}")
    message = obj["message"]
    added = tuple(obj["added_lines"])
    deleted = tuple(obj["deleted_lines"])
    if not message and not added and not deleted:
        raise CorpusError(f"line {line_no}: empty message with empty diff")
    features = None
    if obj.get("expert_features") is not None:
        try:
            features = ExpertFeatureVector.from_dict(obj["expert_features"])
        except ValueError as exc:
            raise CorpusError(f"line {line_no}: {exc}") from exc
    return CodeCommit(
        commit_id=str(obj["commit_id"]),
        project=str(obj["project"]),
        timestamp=int(obj["timestamp"]),
        author=str(obj["author"]),
        message=str(message),
        added_lines=added,
        deleted_lines=deleted,
        label=int(label),
        expert_features=features,
    )


def load_commits_with_report(path, strict: bool = True) -> tuple[list[CodeCommit], int]:
    """Load a JSONL corpus. Returns (commits, skipped_line_count).

    In strict mode any malformed line raises CorpusError; in lenient mode
    malformed lines are skipped and counted.
    """
    path = Path(path)
    if not path.exists():
        raise CorpusError(f"corpus file not found: {path}")
    commits: list[CodeCommit] = []
    seen: set[str] = set()
    skipped = 0
    with open(path, encoding="utf-8") as f:
        for line_no, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                if not isinstance(obj, dict):
                    raise CorpusError(f"line {line_no}: record is not a JSON object")
                commit = _parse_record(obj, line_no)
                if commit.commit_id in seen:
                    raise CorpusError(f"line {line_no}: duplicate commit_id {commit.commit_id}")
            except (json.JSONDecodeError, CorpusError) as exc:
                if strict:
                    if isinstance(exc, CorpusError):
                        raise
                    raise CorpusError(f"line {line_no}: invalid JSON") from exc
                skipped += 1
                continue
            seen.add(commit.commit_id)
            commits.append(commit)
    if skipped:
        log.warning("skipped %d malformed lines in %s", skipped, path)
    return commits, skipped


def load_commits(path, strict: bool = True) -> list[CodeCommit]:
    return load_commits_with_report(path, strict)[0]


def save_commits(commits, path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for commit in commits:
            f.write(json.dumps(commit.to_record(), ensure_ascii=False) + "\n")


@dataclass(frozen=True)
class DatasetSplit:
    train: tuple[str, ...]
    valid: tuple[str, ...]
    test: tuple[str, ...]
    seed: int
    provenance: str  # "manifest" or "ratio"

    def to_manifest(self) -> dict:
        return {"train": list(self.train), "valid": list(self.valid), "test": list(self.test)}


def split_dataset(commits, spec, seed: int = 0) -> DatasetSplit:
    """Split by ratio triple or by a manifest file path / dict.

    Ratio mode shuffles commit ids with a generator seeded by `seed`, then
    slices; deterministic for fixed inputs.
    """
    ids = [c.commit_id for c in commits]
    id_set = set(ids)

    if isinstance(spec, (tuple, list)) and len(spec) == 3:
        r_train, r_valid, r_test = (float(r) for r in spec)
        if abs(r_train + r_valid + r_test - 1.0) > 1e-9:
            raise CorpusError(f"split ratios sum to {r_train + r_valid + r_test}, expected 1")
        shuffled = list(ids)
        random.Random(seed).shuffle(shuffled)
        n = len(shuffled)
        n_train = round(r_train * n)
        n_valid = round(r_valid * n)
        return DatasetSplit(
            train=tuple(shuffled[:n_train]),
            valid=tuple(shuffled[n_train:n_train + n_valid]),
            test=tuple(shuffled[n_train + n_valid:]),
            seed=seed,
            provenance="ratio",
        )

    if isinstance(spec, dict):
        manifest = spec
    else:
        with open(spec, encoding="utf-8") as f:
            manifest = json.load(f)
    parts = {}
    for key in ("train", "valid", "test"):
        part = manifest.get(key, [])
        missing = [cid for cid in part if cid not in id_set]
        if missing:
            raise CorpusError(f"manifest {key} ids absent from corpus: {', '.join(missing)}")
        parts[key] = tuple(part)
    overlap = (set(parts["train"]) & set(parts["valid"])) | \
              (set(parts["train"]) & set(parts["test"])) | \
              (set(parts["valid"]) & set(parts["test"]))
    if overlap:
        raise CorpusError(f"manifest splits overlap on: {', '.join(sorted(overlap))}")
    return DatasetSplit(seed=seed, provenance="manifest", **parts)


def select_commits(commits, ids) -> list[CodeCommit]:
    by_id = {c.commit_id: c for c in commits}
    return [by_id[cid] for cid in ids]
