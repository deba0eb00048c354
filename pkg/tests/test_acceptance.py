"""Acceptance suite: one test per release criterion, printing a PASS line each.

Run with `pytest tests/test_acceptance.py -v -s`.
"""

import json
import math
import time
from pathlib import Path
from random import Random

import pytest
import torch
import torch.nn as nn

from jitdp.cli import main
from jitdp.corpus import save_commits
from jitdp.encoder import EncoderConfig, build_encoder, change_representation
from jitdp.features import FEATURE_NAMES, mine_repository, write_features_jsonl
from jitdp.metrics import auc_score, f1_score
from jitdp.predict import FinetuneConfig, dp_loss, fuse_features, run_finetune
from jitdp.pretrain import (
    MLM, ObjectiveSchedule, PretrainConfig, RMIHead, load_pretrained, mlm_eval,
    mlm_loss, rmi_accuracy, rmi_loss, run_pretraining, sample_objective,
)
from jitdp.tokenization import (
    CLS, IGNORE_INDEX, NUM_SPECIALS, apply_mlm_mask, build_vocabulary,
    serialize_commit,
)

from conftest import WORDS, make_commit, random_corpus
from test_features import EXPECTED_COMMIT1, EXPECTED_COMMIT2, EXPECTED_COMMIT3
from test_metrics import brute_force_auc
from test_predict import separable_corpus


def ok(message: str) -> None:
    print(f"\n[PASS] {message}")


def fd_check(params, loss_fn, grads, eps=1e-6, stride=5):
    """Central finite differences vs. stored analytic gradients."""
    for param, grad in zip(params, grads):
        flat = param.data.view(-1)
        g = grad.view(-1)
        for idx in range(0, flat.numel(), max(1, flat.numel() // stride)):
            orig = flat[idx].item()
            flat[idx] = orig + eps
            up = loss_fn().item()
            flat[idx] = orig - eps
            down = loss_fn().item()
            flat[idx] = orig
            fd = (up - down) / (2 * eps)
            diff = abs(fd - g[idx].item())
            assert diff < 1e-7 or diff / max(abs(fd), abs(g[idx].item())) < 1e-4


def test_criterion_1_metric_oracles():
    start = time.monotonic()
    rng = Random(0)
    for _ in range(1000):
        n = rng.randint(2, 200)
        # mix continuous scores with deliberate tie values
        scores = [rng.choice([rng.random(), 0.25, 0.5, 0.75]) for _ in range(n)]
        labels = [rng.randint(0, 1) for _ in range(n)]
        if len(set(labels)) < 2:
            labels[0], labels[1] = 0, 1
        assert abs(auc_score(scores, labels) - brute_force_auc(scores, labels)) < 1e-9

        tp, fp, fn = rng.randint(0, 200), rng.randint(0, 200), rng.randint(0, 200)
        p, r, f1 = f1_score(tp, fp, fn)
        ref_p = tp / (tp + fp) if tp + fp else 0.0
        ref_r = tp / (tp + fn) if tp + fn else 0.0
        ref_f1 = 2 * ref_p * ref_r / (ref_p + ref_r) if ref_p + ref_r else 0.0
        assert abs(p - ref_p) < 1e-9 and abs(r - ref_r) < 1e-9 and abs(f1 - ref_f1) < 1e-9
    elapsed = time.monotonic() - start
    assert elapsed < 10.0
    ok(f"criterion 1: metric oracles, 1000 instances within 1e-9 ({elapsed:.1f}s)")


def test_criterion_2_expert_feature_golden(fixture_repo):
    start = time.monotonic()
    table = mine_repository(fixture_repo)
    assert len(table) == 3
    for vec, expected in zip(table.values(),
                             (EXPECTED_COMMIT1, EXPECTED_COMMIT2, EXPECTED_COMMIT3)):
        for name in FEATURE_NAMES:
            got = getattr(vec, name)
            if name in ("Entropy", "REXP", "AGE", "LT"):
                assert got == pytest.approx(expected[name], abs=1e-9), name
            else:
                assert got == expected[name], name
    elapsed = time.monotonic() - start
    assert elapsed < 5.0
    ok(f"criterion 2: fixture-repo expert features exact ({elapsed:.1f}s)")


def test_criterion_3_serialization_contract():
    start = time.monotonic()
    commits = random_corpus(seed=42, n=1000)
    vocab = build_vocabulary(commits, size_cap=300)
    max_len = 32
    mask_rng = Random(7)
    for commit in commits:
        seq = serialize_commit(commit, vocab, max_len)
        assert len(seq.ids) == max_len
        assert seq.ids[0] == CLS and sum(1 for i in seq.ids if i == CLS) == 1
        from jitdp.tokenization import ADD, DEL
        assert sum(1 for i in seq.ids if i == ADD) == len(seq.add_positions)
        assert sum(1 for i in seq.ids if i == DEL) == len(seq.del_positions)
        assert len(seq.add_positions) <= len(commit.added_lines)
        assert len(seq.del_positions) <= len(commit.deleted_lines)
        masked = apply_mlm_mask(seq, 0.15, mask_rng)
        for tid, lab in zip(seq.ids, masked.mlm_labels):
            if tid < NUM_SPECIALS:
                assert lab == IGNORE_INDEX
    elapsed = time.monotonic() - start
    assert elapsed < 10.0
    ok(f"criterion 3: serialization contract over 1000 commits ({elapsed:.1f}s)")


def test_criterion_4_sampler_ratio():
    start = time.monotonic()
    schedule = ObjectiveSchedule(2, 1, seed=0)
    rng = Random(0)
    n = 100000
    freq = sum(sample_objective(schedule, rng) == MLM for _ in range(n)) / n
    assert 0.6617 <= freq <= 0.6717
    elapsed = time.monotonic() - start
    assert elapsed < 5.0
    ok(f"criterion 4: MLM frequency {freq:.4f} in [0.6617, 0.6717] ({elapsed:.1f}s)")


def test_criterion_5_loss_arithmetic():
    v = 53
    uniform = float(mlm_loss(torch.zeros((4, v), dtype=torch.float64),
                             torch.tensor([0, 1, 2, 3])))
    assert abs(uniform - math.log(v)) < 1e-9
    assert float(rmi_loss(0.5, 1)) == pytest.approx(0.6931, abs=1e-4)
    assert float(rmi_loss(0.9, 1)) == pytest.approx(0.1054, abs=1e-4)
    assert float(dp_loss(0.5, 1)) == pytest.approx(0.6931, abs=1e-4)
    assert float(dp_loss(0.9, 1)) == pytest.approx(0.1054, abs=1e-4)
    assert float(dp_loss(0.9, 0)) == pytest.approx(2.3026, abs=1e-4)
    ok("criterion 5: loss arithmetic (ln V exact; 0.6931/0.1054/2.3026 within 1e-4)")


def test_criterion_6_gradient_correctness():
    start = time.monotonic()
    torch.manual_seed(0)

    # (a) defect loss through classifier MLP and feature fusion
    h = 8
    expansion = nn.Linear(14, h).to(torch.float64)
    mlp = nn.Sequential(nn.Linear(2 * h, h), nn.ReLU(), nn.Linear(h, 2)).to(torch.float64)
    s = torch.randn(h, dtype=torch.float64)
    e = torch.randn(14, dtype=torch.float64)

    def dp_loss_fn():
        probs = torch.softmax(mlp(fuse_features(s, e, expansion)), dim=-1)
        return dp_loss(probs[1], 1)

    loss = dp_loss_fn()
    loss.backward()
    params = list(expansion.parameters()) + list(mlp.parameters())
    fd_check(params, dp_loss_fn, [p.grad for p in params])

    # (b) replaced-message loss through its head and the encoder
    cfg = EncoderConfig(vocab_size=20, num_layers=1, num_heads=2, hidden_dim=8,
                        ffn_dim=16, max_len=12, dropout=0.0, seed=1)
    encoder = build_encoder(cfg, dtype=torch.float64).eval()
    head = RMIHead(cfg.hidden_dim).to(torch.float64)
    ids = torch.tensor([[2, 7, 8, 9, 11, 0]])
    mask = torch.tensor([[1, 1, 1, 1, 1, 0]])

    def rmi_loss_fn():
        p = head(change_representation(encoder(ids, mask)))
        return rmi_loss(p, torch.tensor([0.0], dtype=torch.float64))

    loss = rmi_loss_fn()
    loss.backward()
    params = list(encoder.parameters()) + list(head.parameters())
    fd_check(params, rmi_loss_fn, [p.grad for p in params], stride=3)

    elapsed = time.monotonic() - start
    assert elapsed < 120.0
    ok(f"criterion 6: finite-difference gradient agreement < 1e-4 ({elapsed:.1f}s)")


def test_criterion_7_mlm_overfit(tmp_path):
    start = time.monotonic()
    commits = random_corpus(seed=0, n=32)
    vocab = build_vocabulary(commits, size_cap=500)
    enc_cfg = EncoderConfig(vocab_size=len(vocab), num_layers=2, num_heads=4,
                            hidden_dim=64, ffn_dim=128, max_len=32,
                            dropout=0.0, seed=0)
    # full-batch training: 2000 epochs x 1 step = 2000 steps
    cfg = PretrainConfig(epochs=2000, batch_size=32, learning_rate=2e-3,
                         warmup_fraction=0.05, schedule=ObjectiveSchedule(1, 0),
                         seed=0)
    run_pretraining(enc_cfg, commits, vocab, cfg, tmp_path)
    encoder, mlm_head, _ = load_pretrained(tmp_path)
    losses, accs = [], []
    for s in range(5):
        loss, acc = mlm_eval(encoder, mlm_head, commits, vocab, 0.15, seed=100 + s)
        losses.append(loss)
        accs.append(acc)
    mean_loss = sum(losses) / len(losses)
    mean_acc = sum(accs) / len(accs)
    assert mean_loss < 0.1
    assert mean_acc >= 0.95
    elapsed = time.monotonic() - start
    assert elapsed < 300.0
    ok(f"criterion 7: MLM overfit loss {mean_loss:.4f} < 0.1, "
       f"accuracy {mean_acc:.3f} >= 0.95 ({elapsed:.0f}s, 2000 steps)")


def test_criterion_8_rmi_separability(tmp_path):
    start = time.monotonic()
    rng = Random(0)

    def phrase():
        return " ".join(rng.choice(WORDS) for _ in range(3))

    seen, commits = set(), []
    for i in range(96):
        p = phrase()
        while p in seen:
            p = phrase()
        seen.add(p)
        # matched message equals the first added line
        commits.append(make_commit(commit_id=f"r{i}", message=p,
                                   added_lines=(p,), deleted_lines=()))
    train, valid = commits[:64], commits[64:]
    vocab = build_vocabulary(commits, size_cap=500)
    enc_cfg = EncoderConfig(vocab_size=len(vocab), num_layers=2, num_heads=4,
                            hidden_dim=64, ffn_dim=128, max_len=32,
                            dropout=0.0, seed=0)
    cfg = PretrainConfig(epochs=150, batch_size=16, learning_rate=1e-3,
                         warmup_fraction=0.05, schedule=ObjectiveSchedule(0, 1),
                         p_replace=0.5, seed=0)
    run_pretraining(enc_cfg, train, vocab, cfg, tmp_path)
    encoder, _, rmi_head = load_pretrained(tmp_path)
    acc = rmi_accuracy(encoder, rmi_head, valid, vocab, p_replace=0.5, seed=999)
    assert acc >= 0.95
    elapsed = time.monotonic() - start
    assert elapsed < 600.0
    ok(f"criterion 8: RMI validation accuracy {acc:.3f} >= 0.95 ({elapsed:.0f}s)")


def test_criterion_9_bimodal_fusion(tmp_path):
    start = time.monotonic()
    commits, features = separable_corpus(n=120, seed=0)
    train, valid = commits[:96], commits[96:]
    vocab = build_vocabulary(commits, size_cap=200)
    enc_cfg = EncoderConfig(vocab_size=len(vocab), num_layers=2, num_heads=4,
                            hidden_dim=32, ffn_dim=64, max_len=16,
                            dropout=0.0, seed=0)
    best_f1 = {}
    for name, kw in [("fused", {}), ("semantic_only", {"use_expert": False}),
                     ("expert_only", {"use_semantic": False})]:
        cfg = FinetuneConfig(epochs=20, batch_size=16, learning_rate=1e-3,
                             seed=0, **kw)
        run_finetune(None, train, valid, features, vocab, cfg,
                     tmp_path / name, encoder_cfg=enc_cfg)
        with open(tmp_path / name / "best_epoch.json") as f:
            best_f1[name] = json.load(f)["valid_f1"]
    assert best_f1["fused"] >= 0.95
    assert best_f1["semantic_only"] < best_f1["fused"]
    assert best_f1["expert_only"] < best_f1["fused"]
    elapsed = time.monotonic() - start
    assert elapsed < 900.0
    ok(f"criterion 9: fused F1 {best_f1['fused']:.3f} >= 0.95 beats "
       f"semantic-only {best_f1['semantic_only']:.3f} and "
       f"expert-only {best_f1['expert_only']:.3f} ({elapsed:.0f}s)")


def test_criterion_10_determinism(tmp_path):
    commits, features = separable_corpus(n=24, seed=3)
    corpus_path = tmp_path / "corpus.jsonl"
    save_commits(commits, corpus_path)
    features_path = tmp_path / "features.jsonl"
    write_features_jsonl(features, features_path)
    vocab_path = tmp_path / "vocab.json"
    build_vocabulary(commits, 100).save(vocab_path)

    fast = ["--set", "encoder.num_layers=1", "--set", "encoder.num_heads=2",
            "--set", "encoder.hidden_dim=16", "--set", "encoder.ffn_dim=32",
            "--set", "encoder.max_len=16", "--set", "encoder.dropout=0.0",
            "--set", "pretrain.epochs=2", "--set", "pretrain.batch_size=8",
            "--set", "finetune.epochs=2", "--set", "finetune.batch_size=8"]

    def pipeline(tag: str) -> tuple[str, str, str]:
        pre = tmp_path / tag / "pre"
        fin = tmp_path / tag / "fin"
        report = tmp_path / tag / "report.json"
        assert main(["pretrain", "--corpus", str(corpus_path),
                     "--vocab", str(vocab_path), "--output", str(pre), *fast]) == 0
        assert main(["finetune", "--corpus", str(corpus_path),
                     "--features", str(features_path), "--vocab", str(vocab_path),
                     "--splits", "0.75,0.125,0.125", "--pretrained", str(pre),
                     "--output", str(fin), *fast]) == 0
        assert main(["evaluate", "--model", str(fin / "best"),
                     "--data", str(corpus_path), "--features", str(features_path),
                     "--output", str(report)]) == 0
        # the report embeds the model path, which differs per run by design
        report_text = Path(report).read_text().replace(str(tmp_path / tag), "<run>")
        return ((pre / "train_log.jsonl").read_text(),
                (fin / "finetune_log.jsonl").read_text(),
                report_text)

    run_a = pipeline("a")
    run_b = pipeline("b")
    assert run_a == run_b
    ok("criterion 10: rerun reproduces logs and report bit-for-bit")
