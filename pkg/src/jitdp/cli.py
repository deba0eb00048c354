"""Command-line surface and the ablation grid runner."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

from . import corpus as corpus_mod
from . import features as features_mod
from . import metrics as metrics_mod
from . import predict as predict_mod
from . import pretrain as pretrain_mod
from . import tokenization as tok_mod
from .config import RunConfig
from .errors import JitdpError

log = logging.getLogger(__name__)


def _resolve_config(args) -> RunConfig:
    if getattr(args, "preset", None):
        cfg = RunConfig.from_preset(args.preset)
    else:
        cfg = RunConfig()
    if getattr(args, "config", None):
        cfg = cfg.with_overrides(RunConfig.load(args.config).values)
    overrides = {}
    for item in getattr(args, "set", None) or []:
        if "=" not in item:
            raise JitdpError(f"--set expects key=value, got {item!r}")
        key, value = item.split("=", 1)
        overrides[key] = value
    return cfg.with_overrides(overrides)


def _persist_config(cfg: RunConfig, out_dir) -> None:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    cfg.save(out_dir / "config.json")


def _load_split_commits(commits, args):
    """Apply --splits (manifest path or 'r,r,r' ratios) to a loaded corpus."""
    if not args.splits:
        raise JitdpError("--splits is required (manifest path or train,valid,test ratios)")
    if Path(args.splits).exists():
        split = corpus_mod.split_dataset(commits, args.splits, seed=args.seed)
    else:
        try:
            ratios = tuple(float(r) for r in args.splits.split(","))
        except ValueError as exc:
            raise JitdpError(f"bad --splits value: {args.splits!r}") from exc
        split = corpus_mod.split_dataset(commits, ratios, seed=args.seed)
    return (corpus_mod.select_commits(commits, split.train),
            corpus_mod.select_commits(commits, split.valid),
            corpus_mod.select_commits(commits, split.test))


def cmd_extract_features(args) -> int:
    cfg = _resolve_config(args)
    table = features_mod.mine_repository(args.repo, until=args.until,
                                         fix_keywords=cfg.fix_keywords())
    features_mod.write_features_jsonl(table, args.output)
    print(f"wrote {len(table)} feature vectors to {args.output}")
    return 0


def cmd_build_vocab(args) -> int:
    cfg = _resolve_config(args)
    commits = corpus_mod.load_commits(args.corpus, strict=not args.lenient)
    size = args.size or int(cfg["tokenizer.vocab_size"])
    vocab = tok_mod.build_vocabulary(commits, size)
    vocab.save(args.output)
    print(f"wrote vocabulary of {len(vocab)} tokens to {args.output}")
    return 0


def cmd_pretrain(args) -> int:
    cfg = _resolve_config(args)
    commits = corpus_mod.load_commits(args.corpus, strict=not args.lenient)
    vocab = tok_mod.Vocabulary.load(args.vocab)
    _persist_config(cfg, args.output)
    out = pretrain_mod.run_pretraining(
        cfg.encoder_config(len(vocab)), commits, vocab, cfg.pretrain_config(),
        args.output, resume_from=args.resume)
    print(f"pre-training checkpoint written to {out}")
    return 0


def cmd_finetune(args) -> int:
    cfg = _resolve_config(args)
    commits = corpus_mod.load_commits(args.corpus, strict=not args.lenient)
    features_map = features_mod.read_features_jsonl(args.features)
    vocab = tok_mod.Vocabulary.load(args.vocab)
    train, valid, _ = _load_split_commits(commits, args)
    _persist_config(cfg, args.output)
    pretrained = args.pretrained or None
    if bool(cfg["finetune.from_scratch"]):
        pretrained = None
    bundle_dir, best_epoch = predict_mod.run_finetune(
        pretrained, train, valid, features_map, vocab, cfg.finetune_config(),
        args.output, encoder_cfg=cfg.encoder_config(len(vocab)))
    print(f"best checkpoint (epoch {best_epoch}) written to {bundle_dir}")
    return 0


def cmd_evaluate(args) -> int:
    bundle = predict_mod.ModelBundle.load(args.model)
    commits = corpus_mod.load_commits(args.data, strict=not args.lenient)
    features_map = features_mod.read_features_jsonl(args.features)
    threshold = args.threshold if args.threshold is not None else bundle.threshold
    report = metrics_mod.evaluate_model(
        bundle, commits, features_map, threshold,
        dataset_id=str(args.data), model_id=str(args.model))
    text = report.to_json()
    if args.output:
        Path(args.output).write_text(text)
    print(text)
    if args.scores_csv:
        results = predict_mod.score_commits(bundle, commits, features_map)
        with open(args.scores_csv, "w", newline="", encoding="utf-8") as f:
            writer = csv.writer(f)
            writer.writerow(["commit_id", "p_defective", "label"])
            for commit, r in zip(commits, results):
                writer.writerow([commit.commit_id, r.p_defective, commit.label])
    return 0


def cmd_predict(args) -> int:
    bundle = predict_mod.ModelBundle.load(args.model)
    commits = corpus_mod.load_commits(args.data, strict=not args.lenient)
    features_map = features_mod.read_features_jsonl(args.features)
    results = predict_mod.score_commits(bundle, commits, features_map)
    with open(args.output, "w", encoding="utf-8") as f:
        for commit, r in zip(commits, results):
            f.write(json.dumps({"commit_id": commit.commit_id,
                                "p_defective": r.p_defective,
                                "label": r.predicted_label}) + "\n")
    print(f"wrote {len(results)} predictions to {args.output}")
    return 0


# --- ablation grids ---------------------------------------------------------

GRIDS = {
    "objectives": [
        ("both", {"pretrain.mlm_weight": 2, "pretrain.rmi_weight": 1}),
        ("mlm_only", {"pretrain.mlm_weight": 1, "pretrain.rmi_weight": 0}),
        ("rmi_only", {"pretrain.mlm_weight": 0, "pretrain.rmi_weight": 1}),
        ("none", {"finetune.from_scratch": True}),
    ],
    "orders": [
        ("alternating", {"pretrain.order_mode": "alternating"}),
        ("mlm_then_rmi", {"pretrain.order_mode": "mlm_then_rmi"}),
        ("rmi_then_mlm", {"pretrain.order_mode": "rmi_then_mlm"}),
    ],
    "ratios": [
        ("ratio_1_1", {"pretrain.mlm_weight": 1, "pretrain.rmi_weight": 1}),
        ("ratio_2_1", {"pretrain.mlm_weight": 2, "pretrain.rmi_weight": 1}),
        ("ratio_3_1", {"pretrain.mlm_weight": 3, "pretrain.rmi_weight": 1}),
    ],
}


def plan_ablation(grid: str, base_cfg: RunConfig) -> list[tuple[str, RunConfig]]:
    if grid not in GRIDS:
        raise JitdpError(f"unknown grid {grid!r}; choose from {sorted(GRIDS)}")
    return [(name, base_cfg.with_overrides(overrides)) for name, overrides in GRIDS[grid]]


def cmd_ablate(args) -> int:
    base_cfg = _resolve_config(args)
    commits = corpus_mod.load_commits(args.corpus, strict=not args.lenient)
    features_map = features_mod.read_features_jsonl(args.features)
    vocab = tok_mod.Vocabulary.load(args.vocab)
    train, valid, test = _load_split_commits(commits, args)

    out_root = Path(args.output)
    summary = []
    for name, cfg in plan_ablation(args.grid, base_cfg):
        cell_dir = out_root / name
        _persist_config(cfg, cell_dir)
        pretrained = None
        if not bool(cfg["finetune.from_scratch"]):
            pretrained = pretrain_mod.run_pretraining(
                cfg.encoder_config(len(vocab)), train, vocab, cfg.pretrain_config(),
                cell_dir / "pretrain")
        bundle_dir, best_epoch = predict_mod.run_finetune(
            pretrained, train, valid, features_map, vocab, cfg.finetune_config(),
            cell_dir / "finetune", encoder_cfg=cfg.encoder_config(len(vocab)))
        bundle = predict_mod.ModelBundle.load(bundle_dir)
        report = metrics_mod.evaluate_model(
            bundle, test, features_map, float(cfg["finetune.threshold"]),
            dataset_id=str(args.corpus), model_id=name)
        (cell_dir / "report.json").write_text(report.to_json())
        summary.append({"cell": name, "f1": report.f1, "auc": report.auc,
                        "best_epoch": best_epoch})
    (out_root / "summary.json").write_text(json.dumps(summary, indent=2))
    print(f"{'cell':<16} {'F1':>8} {'AUC':>8}")
    for row in summary:
        print(f"{row['cell']:<16} {row['f1']:>8.4f} {row['auc']:>8.4f}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="jitdp",
                                     description="Bi-modal commit representation "
                                                 "learning for JIT defect prediction")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, output_required=True):
        p.add_argument("--config", help="flat JSON config file with dotted keys")
        p.add_argument("--preset", choices=["desk", "paper"], help="named config preset")
        p.add_argument("--set", action="append", metavar="KEY=VALUE",
                       help="config override; flags win over the config file")
        p.add_argument("--lenient", action="store_true",
                       help="skip malformed corpus lines instead of aborting")

    p = sub.add_parser("extract-features", help="mine expert features from a git repo")
    p.add_argument("--repo", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--until", type=int, help="only commits up to this unix timestamp")
    common(p)
    p.set_defaults(func=cmd_extract_features)

    p = sub.add_parser("build-vocab", help="build a vocabulary from a commit corpus")
    p.add_argument("--corpus", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--size", type=int, help="vocabulary size cap")
    common(p)
    p.set_defaults(func=cmd_build_vocab)

    p = sub.add_parser("pretrain", help="run MLM/RMI pre-training")
    p.add_argument("--corpus", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--resume", help="checkpoint directory to resume from")
    common(p)
    p.set_defaults(func=cmd_pretrain)

    p = sub.add_parser("finetune", help="fine-tune the defect classifier")
    p.add_argument("--corpus", required=True)
    p.add_argument("--features", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--splits", required=True,
                   help="manifest path or 'train,valid,test' ratios")
    p.add_argument("--seed", type=int, default=0, help="seed for ratio splitting")
    p.add_argument("--pretrained", help="pre-training checkpoint directory")
    p.add_argument("--output", required=True)
    common(p)
    p.set_defaults(func=cmd_finetune)

    p = sub.add_parser("evaluate", help="evaluate a model bundle on labeled data")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--features", required=True)
    p.add_argument("--threshold", type=float)
    p.add_argument("--output", help="write the JSON report here")
    p.add_argument("--scores-csv", help="optional per-commit score CSV")
    common(p)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("predict", help="score commits with a model bundle")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--features", required=True)
    p.add_argument("--output", required=True)
    common(p)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("ablate", help="run a preset ablation grid")
    p.add_argument("--grid", required=True, choices=sorted(GRIDS))
    p.add_argument("--corpus", required=True)
    p.add_argument("--features", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--splits", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--output", required=True)
    common(p)
    p.set_defaults(func=cmd_ablate)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except JitdpError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def entrypoint() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entrypoint()
