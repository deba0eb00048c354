import subprocess
from pathlib import Path
from random import Random

import pytest

from jitdp.corpus import CodeCommit

T1 = 1700000000
T2 = T1 + 86400
T3 = T1 + 2 * 86400


def make_commit(commit_id="c1", project="proj", timestamp=T1, author="alice",
                message="fix parser", added_lines=("a = 1",), deleted_lines=("a = 0",),
                label=0, expert_features=None) -> CodeCommit:
    return CodeCommit(
        commit_id=commit_id, project=project, timestamp=timestamp, author=author,
        message=message, added_lines=tuple(added_lines),
        deleted_lines=tuple(deleted_lines), label=label,
        expert_features=expert_features,
    )


WORDS = ("socket", "server", "close", "parser", "stream", "cache", "index",
         "table", "render", "commit", "merge", "token", "buffer", "retry")


def random_commit(rng: Random, commit_id: str) -> CodeCommit:
    def line():
        return " ".join(rng.choice(WORDS) for _ in range(rng.randint(1, 6)))

    n_add = rng.randint(0, 5)
    n_del = rng.randint(0, 5)
    message = " ".join(rng.choice(WORDS) for _ in range(rng.randint(0, 8)))
    if not message and n_add + n_del == 0:
        n_add = 1
    return make_commit(
        commit_id=commit_id,
        timestamp=T1 + rng.randint(0, 10 ** 6),
        author=rng.choice(("alice", "bob", "carol")),
        message=message,
        added_lines=tuple(line() for _ in range(n_add)),
        deleted_lines=tuple(line() for _ in range(n_del)),
        label=rng.randint(0, 1),
    )


def random_corpus(seed: int, n: int) -> list[CodeCommit]:
    rng = Random(seed)
    return [random_commit(rng, f"c{i:05d}") for i in range(n)]


def _git(repo: Path, *args: str, env_ts: int | None = None,
         name: str = "alice", email: str = "alice@example.com") -> None:
    env = {
        "GIT_AUTHOR_NAME": name, "GIT_AUTHOR_EMAIL": email,
        "GIT_COMMITTER_NAME": name, "GIT_COMMITTER_EMAIL": email,
        "HOME": str(repo),
    }
    if env_ts is not None:
        env["GIT_AUTHOR_DATE"] = f"@{env_ts} +0000"
        env["GIT_COMMITTER_DATE"] = f"@{env_ts} +0000"
    subprocess.run(["git", "-C", str(repo), *args], check=True,
                   capture_output=True, env=env)


@pytest.fixture(scope="session")
def fixture_repo(tmp_path_factory) -> Path:
    """Three-commit repository with hand-computable expert features.

    commit 1 (alice, T1): adds src/a/Main.java, 10 lines, "initial"
    commit 2 (bob,   T2): same file +2/-1, "fix crash"
    commit 3 (alice, T3): Main.java +3/-2 and new src/b/Util.java (5 lines)
    """
    repo = tmp_path_factory.mktemp("fixture_repo")
    _git(repo, "init", "-q", "-b", "main")
    main = repo / "src" / "a" / "Main.java"
    main.parent.mkdir(parents=True)

    main.write_text("".join(f"line{i}\n" for i in range(1, 11)))
    _git(repo, "add", ".")
    _git(repo, "commit", "-q", "-m", "initial", env_ts=T1)

    main.write_text("".join(f"line{i}\n" for i in range(1, 10)) + "extra1\nextra2\n")
    _git(repo, "add", ".")
    _git(repo, "commit", "-q", "-m", "fix crash", env_ts=T2,
         name="bob", email="bob@example.com")

    main.write_text("".join(f"line{i}\n" for i in range(1, 10))
                    + "new1\nnew2\nnew3\n")
    util = repo / "src" / "b" / "Util.java"
    util.parent.mkdir(parents=True)
    util.write_text("".join(f"util{i}\n" for i in range(1, 6)))
    _git(repo, "add", ".")
    _git(repo, "commit", "-q", "-m", "update modules", env_ts=T3)

    return repo
