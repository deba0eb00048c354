"""Change-level expert features: git mining, entropy, fix detection, standardization.

The 14 metrics follow the Kamei change-level feature family. Where the
literature leaves room (sum vs. average, time units), the reading used here
is documented on each helper.
"""

from __future__ import annotations

import json
import logging
import math
import re
import subprocess
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import MiningError

log = logging.getLogger(__name__)

FEATURE_NAMES = (
    "NS", "ND", "NF", "Entropy", "LA", "LD", "LT",
    "FIX", "NDEV", "AGE", "NUC", "EXP", "REXP", "SEXP",
)

DEFAULT_FIX_KEYWORDS = ("bug", "fix", "fixes", "fixed", "defect", "patch", "fault")

SECONDS_PER_DAY = 86400.0
SECONDS_PER_YEAR = 365.25 * SECONDS_PER_DAY


@dataclass(frozen=True)
class ExpertFeatureVector:
    """The 14 change metrics. FIX is stored as 0.0/1.0."""

    NS: float
    ND: float
    NF: float
    Entropy: float
    LA: float
    LD: float
    LT: float
    FIX: float
    NDEV: float
    AGE: float
    NUC: float
    EXP: float
    REXP: float
    SEXP: float

    def to_dict(self) -> dict:
        return {name: getattr(self, name) for name in FEATURE_NAMES}

    @classmethod
    def from_dict(cls, d: dict) -> "ExpertFeatureVector":
        missing = [name for name in FEATURE_NAMES if name not in d]
        if missing:
            raise ValueError(f"missing expert features: {', '.join(missing)}")
        return cls(**{name: float(d[name]) for name in FEATURE_NAMES})

    def as_array(self) -> np.ndarray:
        return np.array([getattr(self, name) for name in FEATURE_NAMES], dtype=np.float64)


def compute_entropy(modified_line_counts) -> float:
    """Normalized Shannon entropy of modified lines across files, in [0, 1].

    H = -sum(p_k log2 p_k) / log2 K over the K files with nonzero counts;
    a single nonzero file gives 0.
    """
    counts = [c for c in modified_line_counts if c > 0]
    if any(c < 0 for c in modified_line_counts):
        raise ValueError("modified line counts must be nonnegative")
    if not counts:
        raise ValueError("all modified line counts are zero")
    k = len(counts)
    if k == 1:
        return 0.0
    total = float(sum(counts))
    h = -sum((c / total) * math.log2(c / total) for c in counts)
    return h / math.log2(k)


def detect_fix(message: str, keywords=DEFAULT_FIX_KEYWORDS) -> bool:
    """Whole-word keyword match on the lowercased message."""
    pattern = r"\b(?:" + "|".join(re.escape(k) for k in keywords) + r")\b"
    return re.search(pattern, message.lower()) is not None


class Standardizer:
    """Per-feature (x - mean) / max(std, epsilon), fitted on the training split."""

    def __init__(self, mean: np.ndarray, std: np.ndarray, epsilon: float = 1e-8):
        self.mean = np.asarray(mean, dtype=np.float64)
        self.std = np.asarray(std, dtype=np.float64)
        self.epsilon = float(epsilon)

    @classmethod
    def fit(cls, vectors, epsilon: float = 1e-8) -> "Standardizer":
        matrix = np.stack([v.as_array() for v in vectors])
        return cls(matrix.mean(axis=0), matrix.std(axis=0), epsilon)

    def transform(self, vector: ExpertFeatureVector) -> np.ndarray:
        x = vector.as_array()
        return (x - self.mean) / np.maximum(self.std, self.epsilon)

    def transform_matrix(self, vectors) -> np.ndarray:
        return np.stack([self.transform(v) for v in vectors])

    def to_json(self) -> str:
        return json.dumps({
            "mean": self.mean.tolist(),
            "std": self.std.tolist(),
            "epsilon": self.epsilon,
        })

    @classmethod
    def from_json(cls, text: str) -> "Standardizer":
        d = json.loads(text)
        return cls(np.array(d["mean"]), np.array(d["std"]), d["epsilon"])


def standardize(vector: ExpertFeatureVector, stats: Standardizer) -> np.ndarray:
    return stats.transform(vector)


# --- git mining -------------------------------------------------------------

_RENAME_BRACED = re.compile(r"\{([^{}]*) => ([^{}]*)\}")


def _resolve_rename(path: str) -> tuple[str, str]:
    """Return (old_path, new_path) for a numstat path field."""
    if "{" in path and "=>" in path:
        old = _RENAME_BRACED.sub(lambda m: m.group(1), path)
        new = _RENAME_BRACED.sub(lambda m: m.group(2), path)
        # collapse doubled slashes from empty brace sides
        return old.replace("//", "/"), new.replace("//", "/")
    if " => " in path:
        old, new = path.split(" => ", 1)
        return old, new
    return path, path


def _subsystem(path: str) -> str:
    return path.split("/", 1)[0]


def _directory(path: str) -> str:
    return path.rsplit("/", 1)[0] if "/" in path else "."


def _git(repo_path, *args: str) -> str:
    try:
        out = subprocess.run(
            ["git", "-C", str(repo_path), *args],
            capture_output=True, text=True, check=True,
        )
    except FileNotFoundError as exc:
        raise MiningError("git executable not found") from exc
    except subprocess.CalledProcessError as exc:
        raise MiningError(f"git {' '.join(args)} failed: {exc.stderr.strip()}") from exc
    return out.stdout


def mine_repository(repo_path, until: int | None = None,
                    fix_keywords=DEFAULT_FIX_KEYWORDS) -> dict[str, ExpertFeatureVector]:
    """Compute one ExpertFeatureVector per non-merge commit, in history order.

    History-dependent metrics (NDEV, AGE, NUC, EXP, REXP, SEXP, LT) reflect
    only strictly earlier commits. LT and AGE are averages over the modified
    files; REXP weights each prior commit by 1/(1 + age_in_years).
    """
    repo_path = Path(repo_path)
    if not (repo_path / ".git").exists() and not (repo_path / "HEAD").exists():
        raise MiningError(f"not a git repository: {repo_path}")

    commit_ids = _git(repo_path, "rev-list", "--reverse", "--no-merges", "HEAD").split()

    file_lines: dict[str, int] = {}          # tracked line count per path
    file_devs: dict[str, set] = {}
    file_commits: dict[str, set] = {}
    file_last_ts: dict[str, int] = {}
    author_commit_times: dict[str, list[int]] = {}
    author_subsys_counts: dict[str, dict[str, int]] = {}

    results: dict[str, ExpertFeatureVector] = {}

    for cid in commit_ids:
        raw = _git(repo_path, "show", "--numstat", "--format=%an%x01%at%x01%B%x02", cid)
        header, _, numstat = raw.partition("\x02")
        author, _, rest = header.partition("\x01")
        ts_str, _, message = rest.partition("\x01")
        timestamp = int(ts_str)

        touched: list[tuple[str, str, int, int, bool]] = []  # (old, new, la, ld, binary)
        for line in numstat.strip().splitlines():
            parts = line.split("\t")
            if len(parts) != 3:
                continue
            la_s, ld_s, path = parts
            binary = la_s == "-" or ld_s == "-"
            la = 0 if binary else int(la_s)
            ld = 0 if binary else int(ld_s)
            old, new = _resolve_rename(path)
            touched.append((old, new, la, ld, binary))

        if not touched:
            continue
        if until is not None and timestamp > until:
            continue

        if all(t[4] for t in touched):
            log.warning("commit %s modifies only binary files; LA = LD = 0", cid[:12])

        paths = [new for (_, new, _, _, _) in touched]
        subsystems = {_subsystem(p) for p in paths}
        directories = {_directory(p) for p in paths}

        la_total = sum(t[2] for t in touched)
        ld_total = sum(t[3] for t in touched)
        line_counts = [t[2] + t[3] for t in touched]
        entropy = compute_entropy(line_counts) if any(c > 0 for c in line_counts) else 0.0

        lt = sum(file_lines.get(old, 0) for (old, _, _, _, _) in touched) / len(touched)

        prior_devs: set = set()
        prior_commits: set = set()
        age_sum = 0.0
        for (old, _, _, _, _) in touched:
            prior_devs |= file_devs.get(old, set())
            prior_commits |= file_commits.get(old, set())
            if old in file_last_ts:
                age_sum += (timestamp - file_last_ts[old]) / SECONDS_PER_DAY
        age = age_sum / len(touched)

        prior_times = author_commit_times.get(author, [])
        exp = len(prior_times)
        rexp = sum(1.0 / (1.0 + (timestamp - t) / SECONDS_PER_YEAR) for t in prior_times)
        subsys_counts = author_subsys_counts.get(author, {})
        sexp = sum(subsys_counts.get(s, 0) for s in subsystems)

        results[cid] = ExpertFeatureVector(
            NS=float(len(subsystems)), ND=float(len(directories)), NF=float(len(touched)),
            Entropy=entropy, LA=float(la_total), LD=float(ld_total), LT=lt,
            FIX=1.0 if detect_fix(message, fix_keywords) else 0.0,
            NDEV=float(len(prior_devs)), AGE=age, NUC=float(len(prior_commits)),
            EXP=float(exp), REXP=rexp, SEXP=float(sexp),
        )

        # fold this commit into history state
        for (old, new, la, ld, binary) in touched:
            count = file_lines.pop(old, 0)
            if not binary:
                count += la - ld
            file_lines[new] = count
            devs = file_devs.pop(old, set())
            devs.add(author)
            file_devs[new] = devs
            commits = file_commits.pop(old, set())
            commits.add(cid)
            file_commits[new] = commits
            file_last_ts.pop(old, None)
            file_last_ts[new] = timestamp
        author_commit_times.setdefault(author, []).append(timestamp)
        counts = author_subsys_counts.setdefault(author, {})
        for s in subsystems:
            counts[s] = counts.get(s, 0) + 1

    return results


def write_features_jsonl(features: dict[str, ExpertFeatureVector], path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for cid, vec in features.items():
            f.write(json.dumps({"commit_id": cid, "features": vec.to_dict()}) + "\n")


def read_features_jsonl(path) -> dict[str, ExpertFeatureVector]:
    out: dict[str, ExpertFeatureVector] = {}
    with open(path, encoding="utf-8") as f:
        for line in f:
            if line.strip():
                rec = json.loads(line)
                out[rec["commit_id"]] = ExpertFeatureVector.from_dict(rec["features"])
    return out
